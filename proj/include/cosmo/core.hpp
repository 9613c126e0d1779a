#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cosmo/common.hpp"

namespace cosmo {

/// Ordered set of known class names plus the sentinel output slot for
/// "unknown". The order is fixed at construction and serialized with the
/// model: it determines the row order of every prompt and logit matrix.
struct LabelSpace {
  std::vector<std::string> known_classes;
  int unknown_index = 0;  // always == known_classes.size()

  int num_known() const { return static_cast<int>(known_classes.size()); }
  int num_outputs() const { return num_known() + 1; }

  bool operator==(const LabelSpace&) const = default;
};

LabelSpace build_label_space(const std::vector<std::string>& known_class_names);

/// Open-set split: which classes are known vs unknown, and which domain is
/// the labeled source. Target domains share one class set.
struct SplitSpec {
  std::string dataset_name;  // dataset root path or registry name, as given to the split command
  std::string source_domain;
  std::vector<std::string> target_domains;
  std::vector<std::string> known_classes;
  std::vector<std::string> unknown_classes;
  std::uint64_t seed = 0;

  LabelSpace label_space() const { return build_label_space(known_classes); }

  bool operator==(const SplitSpec&) const = default;
};

void validate_split(const SplitSpec& split);

struct TrainConfig {
  int batch_size = 32;
  int context_length = 4;
  double temperature = 0.01;
  double entropy_weight = 1.0;
  double kappa_lower = 0.4;
  double kappa_upper = 0.6;
  // Confidence floor for assigning a known-class pseudo-label. Values above 1
  // disable known pseudo-labels entirely (every low-confidence instance is
  // discarded instead).
  double kappa_known = 0.6;
  double learning_rate = 0.001;
  int total_iterations = 1000;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  int hidden_width = 32;
  bool use_dsbn = true;
  bool separate_prompts = true;
  bool template_init = false;

  bool operator==(const TrainConfig&) const = default;
};

/// Checks invariants and returns the config unchanged. Fields left at their
/// defaults are already the documented defaults, so an empty config validates.
TrainConfig validate_config(const TrainConfig& cfg);

/// Open-set evaluation metrics, all percentages in [0, 100]. `unk` and `hos`
/// are absent when the evaluated pool has no ground-truth-unknown samples.
struct MetricsReport {
  std::map<std::string, double> per_known_class_accuracy;  // fraction in [0,1]
  std::map<std::string, std::int64_t> counts;              // evaluated samples per class
  double os_star = 0.0;
  std::optional<double> unk;
  std::optional<double> hos;
  double os = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

/// Harmonic mean of two percentages; 0 when both are 0.
double harmonic_mean(double a, double b);

// JSON round-trips. Serializing then deserializing is the identity.
void to_json(nlohmann::json& j, const LabelSpace& v);
void from_json(const nlohmann::json& j, LabelSpace& v);
void to_json(nlohmann::json& j, const SplitSpec& v);
void from_json(const nlohmann::json& j, SplitSpec& v);
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const MetricsReport& v);
void from_json(const nlohmann::json& j, MetricsReport& v);

}  // namespace cosmo
