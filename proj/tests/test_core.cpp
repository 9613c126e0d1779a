#include <doctest.h>
#include <nlohmann/json.hpp>

#include "cosmo/core.hpp"

using namespace cosmo;

TEST_CASE("build_label_space assigns the sentinel index after the known classes") {
  const std::vector<std::string> office31 = {"back_pack",  "bike",       "bike_helmet",
                                             "bookcase",   "bottle",     "calculator",
                                             "desk_chair", "desk_lamp",  "desktop_computer",
                                             "file_cabinet"};
  const LabelSpace space = build_label_space(office31);
  CHECK(space.unknown_index == 10);
  CHECK(space.num_known() == 10);
  CHECK(space.num_outputs() == 11);
  CHECK(space.known_classes == office31);

  CHECK(build_label_space({"a"}).unknown_index == 1);
}

TEST_CASE("build_label_space rejects duplicates and empty names") {
  CHECK_THROWS_AS(build_label_space({"a", "a"}), ValidationError);
  CHECK_THROWS_AS(build_label_space({"a", ""}), ValidationError);
  CHECK_THROWS_AS(build_label_space({}), ValidationError);
}

TEST_CASE("validate_config keeps documented defaults for an empty config") {
  const TrainConfig cfg = validate_config(TrainConfig{});
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.context_length == 4);
  CHECK(cfg.entropy_weight == doctest::Approx(1.0));
  CHECK(cfg.learning_rate == doctest::Approx(0.001));
  CHECK(cfg.temperature == doctest::Approx(0.01));
  CHECK(cfg.kappa_lower == doctest::Approx(0.4));
  CHECK(cfg.kappa_upper == doctest::Approx(0.6));
  CHECK(cfg.kappa_known == doctest::Approx(0.6));
  CHECK(cfg.weight_decay == doctest::Approx(0.01));
  CHECK(cfg.hidden_width == 32);
}

TEST_CASE("validate_config rejects contract violations") {
  TrainConfig cfg;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);

  cfg = TrainConfig{};
  cfg.kappa_lower = 0.7;
  cfg.kappa_upper = 0.3;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);

  cfg = TrainConfig{};
  cfg.context_length = 0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);

  cfg = TrainConfig{};
  cfg.kappa_known = 1.5;  // allowed: disables known pseudo-labels
  CHECK_NOTHROW(validate_config(cfg));
  cfg.kappa_known = 2.5;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
}

TEST_CASE("validate_split enforces the open-set partition") {
  SplitSpec split;
  split.source_domain = "amazon";
  split.target_domains = {"dslr", "webcam"};
  split.known_classes = {"a", "b"};
  split.unknown_classes = {"c"};
  CHECK_NOTHROW(validate_split(split));

  SplitSpec overlap = split;
  overlap.unknown_classes = {"b"};
  CHECK_THROWS_AS(validate_split(overlap), ValidationError);

  SplitSpec closed = split;
  closed.unknown_classes = {};
  CHECK_THROWS_AS(validate_split(closed), ValidationError);

  SplitSpec self_target = split;
  self_target.target_domains = {"amazon"};
  CHECK_THROWS_AS(validate_split(self_target), ValidationError);
}

TEST_CASE("core types serialize and deserialize to the identity") {
  Rng rng(2024);
  for (int rep = 0; rep < 50; ++rep) {
    LabelSpace space;
    const int n = 1 + static_cast<int>(rng.uniform_below(8));
    for (int i = 0; i < n; ++i) {
      space.known_classes.push_back("class_" + std::to_string(i) + "_" +
                                    std::to_string(rng.next_u64() % 1000));
    }
    space.unknown_index = n;
    const nlohmann::json j = space;
    CHECK(j.get<LabelSpace>() == space);

    SplitSpec split;
    split.dataset_name = "root_" + std::to_string(rng.next_u64() % 100);
    split.source_domain = "s";
    split.target_domains = {"t1", "t2"};
    split.known_classes = space.known_classes;
    split.unknown_classes = {"u1", "u2"};
    split.seed = rng.next_u64();
    const nlohmann::json js = split;
    CHECK(js.get<SplitSpec>() == split);

    TrainConfig cfg;
    cfg.batch_size = 1 + static_cast<int>(rng.uniform_below(64));
    cfg.context_length = 1 + static_cast<int>(rng.uniform_below(16));
    cfg.temperature = 0.01 + rng.uniform();
    cfg.entropy_weight = rng.uniform();
    cfg.kappa_lower = 0.1 + 0.2 * rng.uniform();
    cfg.kappa_upper = 0.5 + 0.2 * rng.uniform();
    cfg.kappa_known = 0.5 + 0.2 * rng.uniform();
    cfg.learning_rate = 0.001 * (1.0 + rng.uniform());
    cfg.total_iterations = 1 + static_cast<int>(rng.uniform_below(5000));
    cfg.weight_decay = rng.uniform() * 0.1;
    cfg.seed = rng.next_u64();
    cfg.use_dsbn = rng.uniform() < 0.5;
    cfg.separate_prompts = rng.uniform() < 0.5;
    const nlohmann::json jc = cfg;
    CHECK(jc.get<TrainConfig>() == cfg);

    MetricsReport report;
    report.per_known_class_accuracy = {{"a", rng.uniform()}, {"b", rng.uniform()}};
    report.counts = {{"a", 10}, {"b", 20}, {"<unknown>", 30}};
    report.os_star = 100.0 * rng.uniform();
    if (rng.uniform() < 0.7) {
      report.unk = 100.0 * rng.uniform();
      report.hos = harmonic_mean(report.os_star, *report.unk);
    }
    report.os = 100.0 * rng.uniform();
    const nlohmann::json jr = report;
    CHECK(jr.get<MetricsReport>() == report);
  }
}

TEST_CASE("harmonic mean identities") {
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);
  CHECK(harmonic_mean(100.0, 0.0) == 0.0);
  CHECK(harmonic_mean(42.5, 42.5) == doctest::Approx(42.5));
  CHECK(harmonic_mean(90.64, 94.36) == harmonic_mean(94.36, 90.64));
}
