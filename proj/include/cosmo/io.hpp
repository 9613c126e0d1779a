#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cosmo/common.hpp"

namespace cosmo::io {

/// Raw tensor blobs: little-endian 32-bit floats, row-major, no header.
/// Shape metadata lives next to the blob (checkpoint meta, cache index).
void write_f32_blob(const std::filesystem::path& path, const float* data, std::size_t count);
std::vector<float> read_f32_blob(const std::filesystem::path& path);

void write_f32_matrix(const std::filesystem::path& path, const MatrixF& m);
MatrixF read_f32_matrix(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);
void write_f32_vector(const std::filesystem::path& path, const VectorF& v);
VectorF read_f32_vector(const std::filesystem::path& path, Eigen::Index size);

/// Whole-file text helpers with atomic replace (write-temp-then-rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

/// One record in a feature cache: where its vector lives inside the blob,
/// plus optional ground-truth tags (class/domain) for evaluation-side tables.
struct CacheEntry {
  std::uint64_t offset_bytes = 0;
  int dim = 0;
  std::string class_tag;   // empty when untagged
  std::string domain_tag;  // empty when untagged
};

/// Directory of raw little-endian float32 vectors (`features.f32`) plus an
/// index document (`index.json`) mapping record id -> offset and dimension.
/// The writer appends; the reader is random-access by id.
class FeatureCacheWriter {
 public:
  explicit FeatureCacheWriter(const std::filesystem::path& dir);
  ~FeatureCacheWriter();

  FeatureCacheWriter(const FeatureCacheWriter&) = delete;
  FeatureCacheWriter& operator=(const FeatureCacheWriter&) = delete;

  void append(const std::string& id, const VectorF& features, const std::string& class_tag = "",
              const std::string& domain_tag = "");
  /// Flushes the blob and writes the index. Must be called exactly once.
  void finalize();

 private:
  std::filesystem::path dir_;
  std::map<std::string, CacheEntry> index_;
  std::uint64_t cursor_ = 0;
  bool finalized_ = false;
  std::vector<float> pending_;
};

class FeatureCacheReader {
 public:
  explicit FeatureCacheReader(const std::filesystem::path& dir);

  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  VectorF read(const std::string& id) const;
  const CacheEntry& entry(const std::string& id) const;
  const std::map<std::string, CacheEntry>& index() const { return index_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, CacheEntry> index_;
};

}  // namespace cosmo::io
