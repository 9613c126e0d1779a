#include "cosmo/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "tensor blob I/O assumes a little-endian host");

namespace cosmo::io {

namespace fs = std::filesystem;

void write_f32_blob(const fs::path& path, const float* data, std::size_t count) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open for writing: " + tmp.string());
    }
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    if (!out) {
      throw IoError("short write: " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::vector<float> read_f32_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw IoError("cannot open: " + path.string());
  }
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) {
    throw IoError("blob size is not a multiple of 4 bytes: " + path.string());
  }
  std::vector<float> data(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) {
    throw IoError("short read: " + path.string());
  }
  return data;
}

void write_f32_matrix(const fs::path& path, const MatrixF& m) {
  write_f32_blob(path, m.data(), static_cast<std::size_t>(m.size()));
}

MatrixF read_f32_matrix(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  const auto data = read_f32_blob(path);
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw IoError(path.filename().string() + ": expected " + std::to_string(rows) + "x" +
                  std::to_string(cols) + " floats, found " + std::to_string(data.size()));
  }
  MatrixF m(rows, cols);
  std::memcpy(m.data(), data.data(), data.size() * sizeof(float));
  return m;
}

void write_f32_vector(const fs::path& path, const VectorF& v) {
  write_f32_blob(path, v.data(), static_cast<std::size_t>(v.size()));
}

VectorF read_f32_vector(const fs::path& path, Eigen::Index size) {
  const auto data = read_f32_blob(path);
  if (static_cast<Eigen::Index>(data.size()) != size) {
    throw IoError(path.filename().string() + ": expected " + std::to_string(size) +
                  " floats, found " + std::to_string(data.size()));
  }
  VectorF v(size);
  std::memcpy(v.data(), data.data(), data.size() * sizeof(float));
  return v;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open for writing: " + tmp.string());
    }
    out << content;
    if (!out) {
      throw IoError("short write: " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open: " + path.string());
  }
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

FeatureCacheWriter::FeatureCacheWriter(const fs::path& dir) : dir_(dir) {
  fs::create_directories(dir_);
}

FeatureCacheWriter::~FeatureCacheWriter() = default;

void FeatureCacheWriter::append(const std::string& id, const VectorF& features,
                                const std::string& class_tag, const std::string& domain_tag) {
  if (finalized_) {
    throw IoError("feature cache already finalized");
  }
  if (index_.count(id) > 0) {
    throw IoError("duplicate cache id: " + id);
  }
  CacheEntry entry;
  entry.offset_bytes = cursor_;
  entry.dim = static_cast<int>(features.size());
  entry.class_tag = class_tag;
  entry.domain_tag = domain_tag;
  index_.emplace(id, entry);
  pending_.insert(pending_.end(), features.data(), features.data() + features.size());
  cursor_ += static_cast<std::uint64_t>(features.size()) * sizeof(float);
}

void FeatureCacheWriter::finalize() {
  if (finalized_) {
    throw IoError("feature cache already finalized");
  }
  finalized_ = true;
  write_f32_blob(dir_ / "features.f32", pending_.data(), pending_.size());
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  nlohmann::ordered_json entries = nlohmann::ordered_json::object();
  for (const auto& [id, e] : index_) {
    nlohmann::ordered_json je{{"offset_bytes", e.offset_bytes}, {"dim", e.dim}};
    if (!e.class_tag.empty()) {
      je["class"] = e.class_tag;
    }
    if (!e.domain_tag.empty()) {
      je["domain"] = e.domain_tag;
    }
    entries[id] = je;
  }
  j["entries"] = entries;
  write_text_atomic(dir_ / "index.json", j.dump(2) + "\n");
}

FeatureCacheReader::FeatureCacheReader(const fs::path& dir) : dir_(dir) {
  const auto j = nlohmann::json::parse(read_text(dir_ / "index.json"));
  if (j.at("format_version").get<int>() != 1) {
    throw IoError("unsupported feature cache version in " + (dir_ / "index.json").string());
  }
  for (const auto& [id, je] : j.at("entries").items()) {
    CacheEntry e;
    e.offset_bytes = je.at("offset_bytes").get<std::uint64_t>();
    e.dim = je.at("dim").get<int>();
    if (je.contains("class")) {
      e.class_tag = je.at("class").get<std::string>();
    }
    if (je.contains("domain")) {
      e.domain_tag = je.at("domain").get<std::string>();
    }
    index_.emplace(id, e);
  }
}

const CacheEntry& FeatureCacheReader::entry(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw IoError("feature cache has no entry for id: " + id);
  }
  return it->second;
}

VectorF FeatureCacheReader::read(const std::string& id) const {
  const CacheEntry& e = entry(id);
  std::ifstream in(dir_ / "features.f32", std::ios::binary);
  if (!in) {
    throw IoError("cannot open: " + (dir_ / "features.f32").string());
  }
  in.seekg(static_cast<std::streamoff>(e.offset_bytes));
  VectorF v(e.dim);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(e.dim * sizeof(float)));
  if (!in) {
    throw IoError("short read for cache id: " + id);
  }
  return v;
}

}  // namespace cosmo::io
