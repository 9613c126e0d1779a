#include "cosmo/core.hpp"

#include <algorithm>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace cosmo {

LabelSpace build_label_space(const std::vector<std::string>& known_class_names) {
  if (known_class_names.empty()) {
    throw ValidationError("label space needs at least one known class");
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : known_class_names) {
    if (name.empty()) {
      throw ValidationError("class names must be non-empty");
    }
    if (!seen.insert(name).second) {
      throw ValidationError("duplicate class name: " + name);
    }
  }
  LabelSpace space;
  space.known_classes = known_class_names;
  space.unknown_index = static_cast<int>(known_class_names.size());
  return space;
}

void validate_split(const SplitSpec& split) {
  if (split.target_domains.empty()) {
    throw ValidationError("split needs at least one target domain");
  }
  for (const auto& t : split.target_domains) {
    if (t == split.source_domain) {
      throw ValidationError("source domain '" + t + "' cannot also be a target domain");
    }
  }
  if (split.unknown_classes.empty()) {
    throw ValidationError("split has no unknown classes; the setting would be closed-set");
  }
  build_label_space(split.known_classes);  // uniqueness / non-empty
  std::unordered_set<std::string> known(split.known_classes.begin(), split.known_classes.end());
  for (const auto& u : split.unknown_classes) {
    if (known.count(u) > 0) {
      throw ValidationError("class '" + u + "' appears as both known and unknown");
    }
  }
}

TrainConfig validate_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) {
    throw ValidationError("batch_size must be >= 1");
  }
  if (cfg.context_length < 1) {
    throw ValidationError("context_length must be >= 1");
  }
  if (!(cfg.temperature > 0.0)) {
    throw ValidationError("temperature must be positive");
  }
  if (cfg.entropy_weight < 0.0) {
    throw ValidationError("entropy_weight must be non-negative");
  }
  auto check_unit = [](double v, const char* name) {
    if (!(v > 0.0) || !(v < 1.0)) {
      throw ValidationError(std::string(name) + " must lie in (0, 1)");
    }
  };
  check_unit(cfg.kappa_lower, "kappa_lower");
  check_unit(cfg.kappa_upper, "kappa_upper");
  if (!(cfg.kappa_known > 0.0) || !(cfg.kappa_known < 2.0)) {
    throw ValidationError("kappa_known must lie in (0, 2); values above 1 disable known pseudo-labels");
  }
  if (cfg.kappa_lower > cfg.kappa_upper) {
    throw ValidationError("kappa_lower must not exceed kappa_upper");
  }
  if (!(cfg.learning_rate > 0.0)) {
    throw ValidationError("learning_rate must be positive");
  }
  if (cfg.total_iterations < 1) {
    throw ValidationError("total_iterations must be >= 1");
  }
  if (cfg.weight_decay < 0.0) {
    throw ValidationError("weight_decay must be non-negative");
  }
  if (!(cfg.beta1 >= 0.0) || !(cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0) || !(cfg.beta2 < 1.0)) {
    throw ValidationError("optimizer moments must lie in [0, 1)");
  }
  if (cfg.checkpoint_every < 1) {
    throw ValidationError("checkpoint_every must be >= 1");
  }
  if (cfg.hidden_width < 1) {
    throw ValidationError("hidden_width must be >= 1");
  }
  return cfg;
}

double harmonic_mean(double a, double b) {
  if (a + b <= 0.0) {
    return 0.0;
  }
  return 2.0 * a * b / (a + b);
}

void to_json(nlohmann::json& j, const LabelSpace& v) {
  j = nlohmann::json{{"known_classes", v.known_classes}, {"unknown_index", v.unknown_index}};
}

void from_json(const nlohmann::json& j, LabelSpace& v) {
  j.at("known_classes").get_to(v.known_classes);
  j.at("unknown_index").get_to(v.unknown_index);
  if (v.unknown_index != static_cast<int>(v.known_classes.size())) {
    throw ValidationError("label space unknown_index does not match class count");
  }
}

void to_json(nlohmann::json& j, const SplitSpec& v) {
  j = nlohmann::json{{"dataset_name", v.dataset_name},
                     {"source_domain", v.source_domain},
                     {"target_domains", v.target_domains},
                     {"known_classes", v.known_classes},
                     {"unknown_classes", v.unknown_classes},
                     {"seed", v.seed}};
}

void from_json(const nlohmann::json& j, SplitSpec& v) {
  j.at("dataset_name").get_to(v.dataset_name);
  j.at("source_domain").get_to(v.source_domain);
  j.at("target_domains").get_to(v.target_domains);
  j.at("known_classes").get_to(v.known_classes);
  j.at("unknown_classes").get_to(v.unknown_classes);
  j.at("seed").get_to(v.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& v) {
  j = nlohmann::json{{"batch_size", v.batch_size},
                     {"context_length", v.context_length},
                     {"temperature", v.temperature},
                     {"entropy_weight", v.entropy_weight},
                     {"kappa_lower", v.kappa_lower},
                     {"kappa_upper", v.kappa_upper},
                     {"kappa_known", v.kappa_known},
                     {"learning_rate", v.learning_rate},
                     {"total_iterations", v.total_iterations},
                     {"weight_decay", v.weight_decay},
                     {"beta1", v.beta1},
                     {"beta2", v.beta2},
                     {"seed", v.seed},
                     {"checkpoint_every", v.checkpoint_every},
                     {"hidden_width", v.hidden_width},
                     {"use_dsbn", v.use_dsbn},
                     {"separate_prompts", v.separate_prompts},
                     {"template_init", v.template_init}};
}

void from_json(const nlohmann::json& j, TrainConfig& v) {
  v = TrainConfig{};  // absent keys keep their defaults
  auto get = [&j](const char* key, auto& out) {
    if (j.contains(key)) {
      j.at(key).get_to(out);
    }
  };
  get("batch_size", v.batch_size);
  get("context_length", v.context_length);
  get("temperature", v.temperature);
  get("entropy_weight", v.entropy_weight);
  get("kappa_lower", v.kappa_lower);
  get("kappa_upper", v.kappa_upper);
  get("kappa_known", v.kappa_known);
  get("learning_rate", v.learning_rate);
  get("total_iterations", v.total_iterations);
  get("weight_decay", v.weight_decay);
  get("beta1", v.beta1);
  get("beta2", v.beta2);
  get("seed", v.seed);
  get("checkpoint_every", v.checkpoint_every);
  get("hidden_width", v.hidden_width);
  get("use_dsbn", v.use_dsbn);
  get("separate_prompts", v.separate_prompts);
  get("template_init", v.template_init);
}

void to_json(nlohmann::json& j, const MetricsReport& v) {
  j = nlohmann::json{{"per_known_class_accuracy", v.per_known_class_accuracy},
                     {"counts", v.counts},
                     {"os_star", v.os_star},
                     {"os", v.os}};
  j["unk"] = v.unk.has_value() ? nlohmann::json(*v.unk) : nlohmann::json(nullptr);
  j["hos"] = v.hos.has_value() ? nlohmann::json(*v.hos) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, MetricsReport& v) {
  j.at("per_known_class_accuracy").get_to(v.per_known_class_accuracy);
  j.at("counts").get_to(v.counts);
  j.at("os_star").get_to(v.os_star);
  j.at("os").get_to(v.os);
  v.unk = j.at("unk").is_null() ? std::nullopt : std::optional<double>(j.at("unk").get<double>());
  v.hos = j.at("hos").is_null() ? std::nullopt : std::optional<double>(j.at("hos").get<double>());
}

}  // namespace cosmo
