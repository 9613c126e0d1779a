#include "cosmo/data.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace cosmo::data {

namespace fs = std::filesystem;

ScanResult scan_dataset(const fs::path& root, const std::vector<std::string>& domains) {
  if (!fs::exists(root) || !fs::is_directory(root)) {
    throw ValidationError("dataset root does not exist: " + root.string());
  }
  ScanResult result;

  std::vector<std::string> domain_list = domains;
  if (domain_list.empty()) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) {
        domain_list.push_back(entry.path().filename().string());
      }
    }
    std::sort(domain_list.begin(), domain_list.end());
    if (domain_list.empty()) {
      result.warnings.push_back("no domain directories found under " + root.string());
      return result;
    }
  }

  for (const auto& domain : domain_list) {
    const fs::path domain_dir = root / domain;
    if (!fs::exists(domain_dir) || !fs::is_directory(domain_dir)) {
      throw ValidationError("missing domain directory: " + domain_dir.string());
    }
    std::vector<std::string> class_names;
    for (const auto& entry : fs::directory_iterator(domain_dir)) {
      if (entry.is_directory()) {
        class_names.push_back(entry.path().filename().string());
      }
    }
    std::sort(class_names.begin(), class_names.end());
    for (const auto& class_name : class_names) {
      const fs::path class_dir = domain_dir / class_name;
      std::vector<std::string> files;
      for (const auto& entry : fs::directory_iterator(class_dir)) {
        if (entry.is_regular_file()) {
          files.push_back(entry.path().filename().string());
        }
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) {
        result.warnings.push_back("empty class directory: " + class_dir.string());
        continue;
      }
      for (const auto& file : files) {
        ExampleRecord rec;
        rec.item_ref = domain + "/" + class_name + "/" + file;
        rec.class_name = class_name;
        rec.domain_tag = domain;
        result.records.push_back(std::move(rec));
      }
    }
  }
  return result;
}

std::vector<std::string> collect_class_names(const std::vector<ExampleRecord>& records) {
  std::set<std::string> names;
  for (const auto& rec : records) {
    names.insert(rec.class_name);
  }
  return {names.begin(), names.end()};
}

SplitSpec make_open_set_split(const std::vector<std::string>& all_classes, int n_known,
                              const std::string& source, const std::vector<std::string>& targets,
                              std::uint64_t seed) {
  if (n_known < 1) {
    throw ValidationError("n_known must be >= 1");
  }
  if (n_known >= static_cast<int>(all_classes.size())) {
    throw ValidationError("n_known must leave at least one unknown class (got " +
                          std::to_string(n_known) + " of " + std::to_string(all_classes.size()) +
                          " classes)");
  }
  std::vector<std::string> ordered = all_classes;
  std::sort(ordered.begin(), ordered.end());
  SplitSpec split;
  split.source_domain = source;
  split.target_domains = targets;
  split.known_classes.assign(ordered.begin(), ordered.begin() + n_known);
  split.unknown_classes.assign(ordered.begin() + n_known, ordered.end());
  split.seed = seed;
  validate_split(split);
  return split;
}

BlendedTargets blend_targets(const std::vector<ExampleRecord>& records, const SplitSpec& split) {
  validate_split(split);
  std::unordered_set<std::string> target_domains(split.target_domains.begin(),
                                                 split.target_domains.end());
  std::unordered_set<std::string> target_classes(split.known_classes.begin(),
                                                 split.known_classes.end());
  target_classes.insert(split.unknown_classes.begin(), split.unknown_classes.end());

  std::vector<const ExampleRecord*> kept;
  std::set<std::pair<std::string, std::string>> present;  // (domain, class)
  for (const auto& rec : records) {
    if (target_domains.count(rec.domain_tag) == 0 || target_classes.count(rec.class_name) == 0) {
      continue;
    }
    kept.push_back(&rec);
    present.emplace(rec.domain_tag, rec.class_name);
  }
  if (kept.empty()) {
    throw ValidationError("target pool is empty after blending");
  }

  BlendedTargets out;
  for (const auto& domain : split.target_domains) {
    for (const auto& cls : target_classes) {
      if (present.count({domain, cls}) == 0) {
        out.warnings.push_back("target domain '" + domain + "' has no samples for class '" + cls +
                               "'");
      }
    }
  }
  std::sort(out.warnings.begin(), out.warnings.end());

  std::vector<std::size_t> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  Rng rng = Rng(split.seed).fork("blend-targets");
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_below(i)]);
  }

  out.training_view.reserve(kept.size());
  out.sealed_eval_table.reserve(kept.size());
  for (std::size_t idx : order) {
    const ExampleRecord& rec = *kept[idx];
    out.training_view.push_back(UnlabeledRecord{rec.item_ref});
    out.sealed_eval_table.push_back(EvalRecord{rec.item_ref, rec.class_name, rec.domain_tag});
  }
  return out;
}

std::vector<ExampleRecord> source_training_records(const std::vector<ExampleRecord>& records,
                                                   const SplitSpec& split) {
  std::unordered_set<std::string> known(split.known_classes.begin(), split.known_classes.end());
  std::vector<ExampleRecord> out;
  for (const auto& rec : records) {
    if (rec.domain_tag == split.source_domain && known.count(rec.class_name) > 0) {
      ExampleRecord copy = rec;
      copy.is_source = true;
      out.push_back(std::move(copy));
    }
  }
  return out;
}

PoolCycler::PoolCycler(std::size_t pool_size, std::uint64_t seed, std::string label)
    : pool_size_(pool_size), seed_(seed), label_(std::move(label)) {
  if (pool_size_ == 0) {
    throw ValidationError("cannot sample from an empty pool (" + label_ + ")");
  }
  regenerate();
}

void PoolCycler::regenerate() {
  order_.resize(pool_size_);
  for (std::size_t i = 0; i < pool_size_; ++i) {
    order_[i] = static_cast<int>(i);
  }
  Rng rng = Rng(seed_).fork(label_ + "-epoch-" + std::to_string(epoch_));
  for (std::size_t i = pool_size_; i > 1; --i) {
    std::swap(order_[i - 1], order_[rng.uniform_below(i)]);
  }
}

int PoolCycler::next() {
  if (cursor_ >= pool_size_) {
    cursor_ = 0;
    ++epoch_;
    regenerate();
  }
  return order_[cursor_++];
}

void PoolCycler::restore(const State& s) {
  if (s.cursor > pool_size_) {
    throw ValidationError("sampler cursor out of range for pool '" + label_ + "'");
  }
  epoch_ = s.epoch;
  cursor_ = s.cursor;
  regenerate();
}

BatchPairSampler::BatchPairSampler(std::size_t source_size, std::size_t target_size, int batch_size,
                                   std::uint64_t seed)
    : source_(source_size, seed, "source"),
      target_(target_size, seed, "target"),
      batch_size_(batch_size) {
  if (batch_size < 1) {
    throw ValidationError("batch size must be >= 1");
  }
}

BatchPairSampler::IndexBatch BatchPairSampler::next() {
  IndexBatch batch;
  batch.source.reserve(batch_size_);
  batch.target.reserve(batch_size_);
  for (int i = 0; i < batch_size_; ++i) {
    batch.source.push_back(source_.next());
  }
  for (int i = 0; i < batch_size_; ++i) {
    batch.target.push_back(target_.next());
  }
  return batch;
}

void BatchPairSampler::restore(const State& s) {
  source_.restore(s.source);
  target_.restore(s.target);
}

BatchPair materialize_batch(const BatchPairSampler::IndexBatch& batch,
                            const std::vector<ExampleRecord>& source_pool,
                            const std::vector<UnlabeledRecord>& target_pool) {
  BatchPair out;
  out.source_batch.reserve(batch.source.size());
  out.target_batch.reserve(batch.target.size());
  for (int i : batch.source) {
    out.source_batch.push_back(source_pool.at(static_cast<std::size_t>(i)));
  }
  for (int i : batch.target) {
    out.target_batch.push_back(target_pool.at(static_cast<std::size_t>(i)));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ExampleRecord>& records) {
  std::ostringstream out;
  for (const auto& rec : records) {
    if (rec.item_ref.find('\t') != std::string::npos ||
        rec.class_name.find('\t') != std::string::npos) {
      throw ValidationError("manifest fields must not contain tab characters: " + rec.item_ref);
    }
    out << rec.item_ref << '\t' << rec.class_name << '\t' << rec.domain_tag << '\n';
  }
  io::write_text_atomic(path, out.str());
}

std::vector<ExampleRecord> read_manifest(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<ExampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto first = line.find('\t');
    const auto second = first == std::string::npos ? std::string::npos : line.find('\t', first + 1);
    if (second == std::string::npos) {
      throw IoError("manifest line " + std::to_string(line_no) + " is malformed in " +
                    path.string());
    }
    ExampleRecord rec;
    rec.item_ref = line.substr(0, first);
    rec.class_name = line.substr(first + 1, second - first - 1);
    rec.domain_tag = line.substr(second + 1);
    records.push_back(std::move(rec));
  }
  return records;
}

void write_split_file(const fs::path& path, const SplitSpec& split) {
  nlohmann::ordered_json j = nlohmann::json(split);
  io::write_text_atomic(path, j.dump(2) + "\n");
}

SplitSpec read_split_file(const fs::path& path) {
  SplitSpec split = nlohmann::json::parse(io::read_text(path)).get<SplitSpec>();
  validate_split(split);
  return split;
}

FeatureSource::FeatureSource(fs::path root, std::optional<fs::path> cache_dir)
    : root_(std::move(root)) {
  if (cache_dir.has_value()) {
    cache_.emplace(*cache_dir);
  }
}

VectorF FeatureSource::load(const std::string& item_ref) const {
  if (cache_.has_value() && cache_->contains(item_ref)) {
    return cache_->read(item_ref);
  }
  const fs::path path = root_ / item_ref;
  if (path.extension() == ".f32") {
    const auto raw = io::read_f32_blob(path);
    VectorF v(static_cast<Eigen::Index>(raw.size()));
    std::copy(raw.begin(), raw.end(), v.data());
    return v;
  }
  throw ValidationError("cannot resolve features for '" + item_ref +
                        "': not in the feature cache and not a raw .f32 vector file; "
                        "encode images into a feature cache first");
}

namespace {

template <class Record, class RefOf>
MatrixF load_feature_rows(const FeatureSource& source, const std::vector<Record>& records,
                          RefOf ref_of) {
  if (records.empty()) {
    throw ValidationError("cannot build a feature pool from zero records");
  }
  VectorF first = source.load(ref_of(records.front()));
  MatrixF features(static_cast<Eigen::Index>(records.size()), first.size());
  features.row(0) = first.transpose();
  for (std::size_t i = 1; i < records.size(); ++i) {
    VectorF v = source.load(ref_of(records[i]));
    if (v.size() != first.size()) {
      throw ValidationError("feature dimension mismatch for '" + ref_of(records[i]) + "': " +
                            std::to_string(v.size()) + " vs " + std::to_string(first.size()));
    }
    features.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return features;
}

int label_index_of(const std::string& class_name, const LabelSpace& labels) {
  for (int i = 0; i < labels.num_known(); ++i) {
    if (labels.known_classes[static_cast<std::size_t>(i)] == class_name) {
      return i;
    }
  }
  return labels.unknown_index;
}

}  // namespace

FeaturePool load_labeled_pool(const FeatureSource& source, const std::vector<ExampleRecord>& records,
                              const LabelSpace& labels) {
  FeaturePool pool;
  pool.features = load_feature_rows(source, records, [](const ExampleRecord& r) { return r.item_ref; });
  pool.labels.reserve(records.size());
  pool.domains.reserve(records.size());
  for (const auto& rec : records) {
    pool.labels.push_back(label_index_of(rec.class_name, labels));
    pool.domains.push_back(rec.domain_tag);
  }
  return pool;
}

FeaturePool load_unlabeled_pool(const FeatureSource& source,
                                const std::vector<UnlabeledRecord>& records) {
  FeaturePool pool;
  pool.features =
      load_feature_rows(source, records, [](const UnlabeledRecord& r) { return r.item_ref; });
  return pool;
}

FeaturePool load_eval_pool(const FeatureSource& source, const std::vector<EvalRecord>& records,
                           const LabelSpace& labels) {
  FeaturePool pool;
  pool.features = load_feature_rows(source, records, [](const EvalRecord& r) { return r.item_ref; });
  pool.labels.reserve(records.size());
  pool.domains.reserve(records.size());
  for (const auto& rec : records) {
    pool.labels.push_back(label_index_of(rec.class_name, labels));
    pool.domains.push_back(rec.domain_tag);
  }
  return pool;
}

void write_synthetic_dataset(const fs::path& root, const SyntheticSpec& spec,
                             const SyntheticGeometry& geometry) {
  if (spec.domains.size() < 2) {
    throw ValidationError("synthetic dataset needs a source domain and at least one target domain");
  }
  if (geometry.known_means.size() != spec.domains.size() ||
      geometry.unknown_means.size() != spec.domains.size()) {
    throw ValidationError("synthetic geometry needs one mean set per domain");
  }
  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    if (geometry.known_means[d].rows() != static_cast<Eigen::Index>(spec.known_classes.size()) ||
        geometry.known_means[d].cols() != spec.feature_dim ||
        geometry.unknown_means[d].rows() !=
            static_cast<Eigen::Index>(spec.unknown_classes.size()) ||
        geometry.unknown_means[d].cols() != spec.feature_dim) {
      throw ValidationError("synthetic geometry shape does not match the spec");
    }
  }
  fs::create_directories(root);
  Rng base(spec.seed);

  auto emit_class = [&](const std::string& domain, const std::string& class_name,
                        const VectorF& mean) {
    const fs::path dir = root / domain / class_name;
    fs::create_directories(dir);
    Rng rng = base.fork("samples-" + domain + "-" + class_name);
    for (int i = 0; i < spec.samples_per_class_domain; ++i) {
      VectorF x = mean;
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        x[k] += static_cast<float>(spec.noise * rng.gaussian());
      }
      x.normalize();
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%04d.f32", i);
      io::write_f32_vector(dir / name, x);
    }
  };

  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    const auto idx = static_cast<Eigen::Index>(d);
    for (std::size_t c = 0; c < spec.known_classes.size(); ++c) {
      emit_class(spec.domains[d], spec.known_classes[c],
                 geometry.known_means[d].row(static_cast<Eigen::Index>(c)).transpose());
    }
    // Unknown classes exist only in target domains.
    if (idx > 0) {
      for (std::size_t c = 0; c < spec.unknown_classes.size(); ++c) {
        emit_class(spec.domains[d], spec.unknown_classes[c],
                   geometry.unknown_means[d].row(static_cast<Eigen::Index>(c)).transpose());
      }
    }
  }
}

}  // namespace cosmo::data
