#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cosmo/core.hpp"
#include "cosmo/io.hpp"

namespace cosmo::data {

/// One dataset item as seen by ingestion and evaluation. Training-view target
/// data never travels in this type (see UnlabeledRecord).
struct ExampleRecord {
  std::string item_ref;  // path relative to the dataset root
  std::string class_name;
  std::string domain_tag;
  bool is_source = false;

  bool operator==(const ExampleRecord&) const = default;
};

/// Trainer-visible target record. By construction it carries neither a class
/// name nor a domain tag, so the training loop cannot depend on them.
struct UnlabeledRecord {
  std::string item_ref;

  bool operator==(const UnlabeledRecord&) const = default;
};

/// Ground truth retained for evaluation, aligned index-for-index with the
/// blended training view but never handed to the trainer.
struct EvalRecord {
  std::string item_ref;
  std::string class_name;
  std::string domain_tag;
};

struct ScanResult {
  std::vector<ExampleRecord> records;
  std::vector<std::string> warnings;
};

/// Walks root/domain/class/file, one record per file, deterministic
/// lexicographic order. An empty `domains` list scans every subdirectory of
/// root as a domain. Missing root or a missing listed domain is an error;
/// an empty class directory only warns.
ScanResult scan_dataset(const std::filesystem::path& root, const std::vector<std::string>& domains);

/// Collects the distinct class names present in `records`, sorted.
std::vector<std::string> collect_class_names(const std::vector<ExampleRecord>& records);

/// Builds an open-set split: the lexicographically first n_known classes are
/// known, the remainder unknown. Requires n_known < |all_classes| so at least
/// one unknown class exists.
SplitSpec make_open_set_split(const std::vector<std::string>& all_classes, int n_known,
                              const std::string& source, const std::vector<std::string>& targets,
                              std::uint64_t seed);

struct BlendedTargets {
  std::vector<UnlabeledRecord> training_view;
  std::vector<EvalRecord> sealed_eval_table;  // aligned with training_view
  std::vector<std::string> warnings;
};

/// Merges every target domain's records into one shuffled unlabeled pool.
/// Labels and domain tags are stripped from the training view and retained in
/// the sealed side table. Missing (domain, class) combinations warn.
BlendedTargets blend_targets(const std::vector<ExampleRecord>& records, const SplitSpec& split);

/// Source-domain records restricted to known classes (the labeled pool).
std::vector<ExampleRecord> source_training_records(const std::vector<ExampleRecord>& records,
                                                   const SplitSpec& split);

struct BatchPair {
  std::vector<ExampleRecord> source_batch;
  std::vector<UnlabeledRecord> target_batch;
};

/// Cycles one pool: a fresh permutation per epoch, deterministic in
/// (seed, label, epoch). State is (epoch, cursor) so checkpoints stay small.
class PoolCycler {
 public:
  PoolCycler(std::size_t pool_size, std::uint64_t seed, std::string label);

  int next();

  struct State {
    std::uint64_t epoch = 0;
    std::uint64_t cursor = 0;
  };
  State state() const { return {epoch_, cursor_}; }
  void restore(const State& s);

 private:
  void regenerate();

  std::size_t pool_size_;
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t epoch_ = 0;
  std::uint64_t cursor_ = 0;
  std::vector<int> order_;
};

/// Paired mini-batch index stream: every call yields exactly batch_size source
/// indices and batch_size target indices; the two pools cycle independently.
class BatchPairSampler {
 public:
  BatchPairSampler(std::size_t source_size, std::size_t target_size, int batch_size,
                   std::uint64_t seed);

  struct IndexBatch {
    std::vector<int> source;
    std::vector<int> target;
  };
  IndexBatch next();

  struct State {
    PoolCycler::State source;
    PoolCycler::State target;
  };
  State state() const { return {source_.state(), target_.state()}; }
  void restore(const State& s);

  int batch_size() const { return batch_size_; }

 private:
  PoolCycler source_;
  PoolCycler target_;
  int batch_size_;
};

BatchPair materialize_batch(const BatchPairSampler::IndexBatch& batch,
                            const std::vector<ExampleRecord>& source_pool,
                            const std::vector<UnlabeledRecord>& target_pool);

// Manifest: one record per line, tab-separated (relative_path, class_name, domain).
void write_manifest(const std::filesystem::path& path, const std::vector<ExampleRecord>& records);
std::vector<ExampleRecord> read_manifest(const std::filesystem::path& path);

void write_split_file(const std::filesystem::path& path, const SplitSpec& split);
SplitSpec read_split_file(const std::filesystem::path& path);

/// Resolves item references to raw feature vectors. A reference is looked up
/// in the attached feature cache first, then read as a raw `.f32` vector file
/// relative to the dataset root. Anything else (e.g. image pixels) requires a
/// cache built by an external encoder pass.
class FeatureSource {
 public:
  FeatureSource(std::filesystem::path root, std::optional<std::filesystem::path> cache_dir);

  VectorF load(const std::string& item_ref) const;

 private:
  std::filesystem::path root_;
  std::optional<io::FeatureCacheReader> cache_;
};

/// Materialized, trainer/eval-facing pool of raw feature vectors.
struct FeaturePool {
  MatrixF features;                  // n x d
  std::vector<int> labels;           // empty for unlabeled training views
  std::vector<std::string> domains;  // empty for unlabeled training views

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

FeaturePool load_labeled_pool(const FeatureSource& source, const std::vector<ExampleRecord>& records,
                              const LabelSpace& labels);
FeaturePool load_unlabeled_pool(const FeatureSource& source,
                                const std::vector<UnlabeledRecord>& records);
FeaturePool load_eval_pool(const FeatureSource& source, const std::vector<EvalRecord>& records,
                           const LabelSpace& labels);

/// Synthetic Gaussian-cluster corpus written as root/domain/class/sample.f32
/// files. Cluster means are supplied per domain by the caller; unknown
/// classes appear only in the target domains (every domain after the first).
struct SyntheticSpec {
  int feature_dim = 64;
  std::vector<std::string> known_classes;
  std::vector<std::string> unknown_classes;
  std::vector<std::string> domains;  // first entry is the source domain
  int samples_per_class_domain = 40;
  double noise = 0.08;
  std::uint64_t seed = 7;
};

struct SyntheticGeometry {
  // Unit cluster means, one matrix per domain in SyntheticSpec order.
  std::vector<MatrixF> known_means;    // [domain] -> |known| x feature_dim
  std::vector<MatrixF> unknown_means;  // [domain] -> |unknown| x feature_dim (source row unused)
};

void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec,
                             const SyntheticGeometry& geometry);

}  // namespace cosmo::data
