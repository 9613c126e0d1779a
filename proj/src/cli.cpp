#include "cosmo/cli.hpp"

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cosmo/bias_net.hpp"
#include "cosmo/clip_text.hpp"
#include "cosmo/eval.hpp"
#include "cosmo/io.hpp"
#include "cosmo/trainer.hpp"

namespace cosmo::cli {

namespace fs = std::filesystem;

TrainConfig load_config_file(const fs::path& path) {
  const auto j = nlohmann::json::parse(io::read_text(path));
  // The pseudo-label thresholds drive what the model trains on, and the
  // defaults are artifact choices rather than published values, so configs
  // must state them explicitly.
  for (const char* key : {"kappa_lower", "kappa_upper", "kappa_known"}) {
    if (!j.contains(key)) {
      throw ValidationError("config file " + path.string() + " is missing mandatory key '" + key +
                            "'");
    }
  }
  return validate_config(j.get<TrainConfig>());
}

encoders::Backend<float> make_backend(const std::string& tag, int data_feature_dim,
                                      std::uint64_t data_seed) {
  if (tag == "toy") {
    return encoders::make_toy_backend<float>(data_feature_dim, data_feature_dim, data_seed);
  }
  if (tag.rfind("clip:", 0) == 0) {
    return encoders::clip::load_clip_backend<float>(tag.substr(5));
  }
  throw ValidationError("unknown backend '" + tag + "' (expected 'toy' or 'clip:<dir>')");
}

data::SyntheticGeometry synthetic_geometry(const encoders::Backend<float>& backend,
                                           const std::vector<std::string>& known_classes,
                                           const std::vector<std::string>& unknown_classes,
                                           const std::vector<std::string>& domains,
                                           std::uint64_t seed,
                                           const SyntheticGeometryParams& params) {
  const int token_dim = backend.embedder->token_dim();
  const Rng base(seed);
  auto unit_token = [&](const std::string& label) {
    Rng rng = base.fork("geometry-" + label);
    VectorF v(token_dim);
    for (int i = 0; i < token_dim; ++i) {
      v[i] = static_cast<float>(rng.gaussian());
    }
    v.normalize();
    return v;
  };
  auto feature_of = [&](const VectorF& token) {
    MatrixF seq(1, token_dim);
    seq.row(0) = token.transpose();
    return backend.text->encode(seq);
  };

  // Class tokens come from the frozen embedder so prompt rows can reach the
  // clusters exactly; the offsets below are what training has to recover.
  std::vector<VectorF> class_tokens;
  for (const auto& name : known_classes) {
    class_tokens.push_back(backend.embedder->embed(name).row(0).transpose());
  }
  const VectorF unk_token = backend.embedder->embed("unknown.").row(0).transpose();
  const VectorF context_target =
      static_cast<float>(params.context_offset) * unit_token("context-target");
  const VectorF unknown_region =
      static_cast<float>(params.unknown_offset) * unit_token("unknown-region");

  // Per-target-domain token shifts inside the class-token span: they bleed
  // across classes unless compensated, and a bias token can compensate them
  // exactly. Equal-magnitude random-sign mixes keep the bleed uniform across
  // classes, so no class flips into another's half-space.
  std::vector<VectorF> domain_offsets;
  domain_offsets.push_back(VectorF::Zero(token_dim));  // source
  for (std::size_t d = 1; d < domains.size(); ++d) {
    Rng rng = base.fork("geometry-domain-" + domains[d]);
    VectorF mix = VectorF::Zero(token_dim);
    for (const auto& token : class_tokens) {
      mix += (rng.uniform() < 0.5 ? -1.0f : 1.0f) * token;
    }
    mix.normalize();
    domain_offsets.push_back(static_cast<float>(params.domain_offset) * mix);
  }

  data::SyntheticGeometry geo;
  geo.known_means.resize(domains.size());
  geo.unknown_means.resize(domains.size());
  for (std::size_t d = 0; d < domains.size(); ++d) {
    auto& known = geo.known_means[d];
    known.resize(static_cast<Eigen::Index>(known_classes.size()), backend.image->feature_dim());
    for (std::size_t c = 0; c < known_classes.size(); ++c) {
      known.row(static_cast<Eigen::Index>(c)) =
          feature_of(class_tokens[c] + context_target + domain_offsets[d]).transpose();
    }
    auto& unknown = geo.unknown_means[d];
    unknown.resize(static_cast<Eigen::Index>(unknown_classes.size()),
                   backend.image->feature_dim());
    for (std::size_t c = 0; c < unknown_classes.size(); ++c) {
      const VectorF anchor = unk_token + unknown_region +
                             static_cast<float>(params.unknown_spread) *
                                 unit_token("unknown-cluster-" + unknown_classes[c]);
      unknown.row(static_cast<Eigen::Index>(c)) =
          feature_of(anchor + domain_offsets[d]).transpose();
    }
  }
  return geo;
}

namespace {

std::string with_thousands(std::int64_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count > 0 && count % 3 == 0) {
      out.push_back(',');
    }
    out.push_back(*it);
    ++count;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string format_param_count(std::int64_t count) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1fK", biasnet::params_in_k(count));
  return with_thousands(count) + " (" + buf + ")";
}

struct LoadedDataset {
  LabelSpace labels;
  std::vector<data::ExampleRecord> source_records;
  data::BlendedTargets blended;
  data::FeatureSource features;
};

LoadedDataset load_dataset(const SplitSpec& split) {
  const fs::path root = split.dataset_name;
  std::vector<std::string> domains = split.target_domains;
  domains.push_back(split.source_domain);
  std::sort(domains.begin(), domains.end());
  auto scan = data::scan_dataset(root, domains);
  for (const auto& w : scan.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  std::optional<fs::path> cache;
  if (fs::exists(root / "feature_cache" / "index.json")) {
    cache = root / "feature_cache";
  }
  LoadedDataset out{split.label_space(),
                    data::source_training_records(scan.records, split),
                    data::blend_targets(scan.records, split),
                    data::FeatureSource(root, cache)};
  for (const auto& w : out.blended.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  if (out.source_records.empty()) {
    throw ValidationError("source domain has no known-class samples");
  }
  return out;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

struct SplitArgs {
  std::string dataset_root;
  int n_known = 0;
  std::string source;
  std::vector<std::string> targets;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_split(const SplitArgs& args) {
  std::vector<std::string> domains = args.targets;
  domains.push_back(args.source);
  std::sort(domains.begin(), domains.end());
  auto scan = data::scan_dataset(args.dataset_root, domains);
  for (const auto& w : scan.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  const auto classes = data::collect_class_names(scan.records);
  SplitSpec split =
      data::make_open_set_split(classes, args.n_known, args.source, args.targets, args.seed);
  split.dataset_name = args.dataset_root;
  data::write_split_file(args.out, split);

  std::int64_t known_samples = 0;
  std::int64_t unknown_samples = 0;
  const std::set<std::string> known(split.known_classes.begin(), split.known_classes.end());
  const std::set<std::string> targets(split.target_domains.begin(), split.target_domains.end());
  for (const auto& rec : scan.records) {
    if (targets.count(rec.domain_tag) == 0) {
      continue;
    }
    (known.count(rec.class_name) > 0 ? known_samples : unknown_samples) += 1;
  }
  std::cout << "dataset: " << args.dataset_root << "\n"
            << "source domain: " << split.source_domain << "\n"
            << "known classes: " << split.known_classes.size()
            << ", unknown classes: " << split.unknown_classes.size() << "\n"
            << "target samples: " << known_samples << " known / " << unknown_samples
            << " unknown\n"
            << "split written to " << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string split;
  std::string backend = "toy";
  std::string out = "run";
  bool resume = false;
  std::optional<std::uint64_t> seed;
};

nlohmann::ordered_json report_to_json(const trainer::StepReport& r) {
  return nlohmann::ordered_json{
      {"iteration", r.iteration},
      {"loss_source", r.loss_source},
      {"loss_target", r.loss_target},
      {"pseudo",
       {{"known", r.pseudo_known}, {"unknown", r.pseudo_unknown}, {"discarded", r.pseudo_discarded}}},
      {"learning_rate", r.learning_rate},
      {"target_update_skipped", r.target_update_skipped}};
}

std::optional<fs::path> find_resume_checkpoint(const fs::path& ckpt_dir) {
  if (!fs::exists(ckpt_dir)) {
    return std::nullopt;
  }
  std::optional<fs::path> best;
  std::int64_t best_iteration = -1;
  for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "meta.json")) {
      continue;
    }
    const auto meta = nlohmann::json::parse(io::read_text(entry.path() / "meta.json"));
    const auto iteration = meta.at("iteration").get<std::int64_t>();
    if (iteration > best_iteration) {
      best_iteration = iteration;
      best = entry.path();
    }
  }
  return best;
}

int cmd_train(const TrainArgs& args) {
  TrainConfig cfg = load_config_file(args.config);
  if (args.seed.has_value()) {
    cfg.seed = *args.seed;
  }
  const SplitSpec split = data::read_split_file(args.split);
  LoadedDataset dataset = load_dataset(split);

  const data::FeaturePool source_pool =
      data::load_labeled_pool(dataset.features, dataset.source_records, dataset.labels);
  const data::FeaturePool target_pool =
      data::load_unlabeled_pool(dataset.features, dataset.blended.training_view);

  auto backend = make_backend(args.backend, static_cast<int>(source_pool.dim()), split.seed);
  trainer::Trainer trainer(cfg, backend, dataset.labels, args.backend);

  const fs::path out_dir = args.out;
  const fs::path ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  if (args.resume) {
    const auto latest = find_resume_checkpoint(ckpt_dir);
    if (!latest.has_value()) {
      throw ValidationError("--resume given but no checkpoint found under " + ckpt_dir.string());
    }
    trainer.restore(trainer::load_checkpoint(*latest));
    std::cout << "resuming from " << latest->string() << " at iteration "
              << trainer.state().iteration << "\n";
  } else {
    trainer.initialize();
  }

  nlohmann::ordered_json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["command"] = "train";
  manifest["backend"] = args.backend;
  manifest["seed"] = cfg.seed;
  manifest["config"] = nlohmann::json(cfg);
  manifest["split_file"] = args.split;
  manifest["split"] = nlohmann::json(split);
  manifest["checkpoint_dir"] = "checkpoints";
  manifest["report_stream"] = "step_reports.jsonl";
  io::write_text_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream reports(out_dir / "step_reports.jsonl", args.resume ? std::ios::app : std::ios::trunc);
  if (!reports) {
    throw IoError("cannot open report stream under " + out_dir.string());
  }

  trainer::FitOptions options;
  options.checkpoint_dir = ckpt_dir;
  options.on_step = [&reports](const trainer::StepReport& r) {
    reports << report_to_json(r).dump() << "\n";
  };
  const auto summary = trainer.fit(source_pool, target_pool, options);

  std::cout << "trained " << summary.iterations_run << " iterations; final losses source="
            << eval::format_percent(summary.last_report.loss_source)
            << " target=" << eval::format_percent(summary.last_report.loss_target) << "\n"
            << "checkpoint: " << (ckpt_dir / "final").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string split;
  std::string pool = "blended";
  std::string out;
  std::string backend;  // defaults to the checkpoint's backend tag
  std::string baseline;
  double threshold = 0.5;
};

int cmd_eval(const EvalArgs& args) {
  const trainer::Checkpoint ckpt = trainer::load_checkpoint(args.checkpoint);
  const SplitSpec split = data::read_split_file(args.split);
  if (ckpt.label_space != split.label_space()) {
    throw ValidationError("checkpoint label space does not match the split's label space");
  }
  LoadedDataset dataset = load_dataset(split);

  const std::string backend_tag = args.backend.empty() ? ckpt.backend_tag : args.backend;
  auto backend = make_backend(backend_tag, ckpt.feature_dim, split.seed);
  trainer::Trainer trainer(ckpt.config, backend, dataset.labels, backend_tag);
  trainer.restore(ckpt);
  const auto model = trainer.model_view();

  data::FeaturePool pool;
  bool per_domain = false;
  if (args.pool == "blended") {
    pool = data::load_eval_pool(dataset.features, dataset.blended.sealed_eval_table, dataset.labels);
    per_domain = split.target_domains.size() > 1;
  } else if (args.pool == "source") {
    pool = data::load_labeled_pool(dataset.features, dataset.source_records, dataset.labels);
  } else if (args.pool.rfind("domain:", 0) == 0) {
    const std::string tag = args.pool.substr(7);
    std::vector<data::EvalRecord> records;
    for (const auto& rec : dataset.blended.sealed_eval_table) {
      if (rec.domain_tag == tag) {
        records.push_back(rec);
      }
    }
    if (records.empty()) {
      throw ValidationError("no evaluation records for domain '" + tag + "'");
    }
    pool = data::load_eval_pool(dataset.features, records, dataset.labels);
  } else {
    throw ValidationError("unknown pool selector '" + args.pool +
                          "' (expected blended, source, or domain:<tag>)");
  }

  eval::PredictionSet preds;
  if (!args.baseline.empty()) {
    if (args.baseline != "zero-shot") {
      throw ValidationError("unknown baseline '" + args.baseline + "'");
    }
    const MatrixF templates =
        eval::template_text_features(*backend.text, *backend.embedder, dataset.labels);
    preds = eval::zero_shot_baseline(*backend.image, pool, templates,
                                     static_cast<float>(ckpt.config.temperature), args.threshold);
  } else {
    preds = eval::predict_pool(model, pool);
  }

  std::vector<std::pair<std::string, MetricsReport>> sections;
  sections.emplace_back(args.pool, eval::compute_metrics(preds, dataset.labels));
  if (per_domain) {
    for (auto& [domain, report] : eval::per_domain_metrics(preds, dataset.labels)) {
      sections.emplace_back("  " + domain, std::move(report));
    }
  }
  const std::string table = eval::format_metrics_table(sections);
  std::cout << table;

  if (!args.out.empty()) {
    const fs::path out_dir = args.out;
    fs::create_directories(out_dir);
    nlohmann::ordered_json doc;
    doc["tool_version"] = kToolVersion;
    doc["checkpoint"] = args.checkpoint;
    doc["pool"] = args.pool;
    doc["baseline"] = args.baseline;
    for (const auto& [name, report] : sections) {
      std::string key = name;
      key.erase(0, key.find_first_not_of(' '));
      doc["metrics"][key] = nlohmann::json(report);
    }
    io::write_text_atomic(out_dir / "metrics.json", doc.dump(2) + "\n");
    io::write_text_atomic(out_dir / "metrics.txt", table);
    if (args.pool == "blended" && args.baseline.empty()) {
      eval::export_embeddings(model, dataset.labels, pool, out_dir / "embeddings");
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// params
// ---------------------------------------------------------------------------

int cmd_params(const std::string& config_path) {
  // Counting is informational, so missing threshold keys are fine here.
  const TrainConfig cfg =
      validate_config(nlohmann::json::parse(io::read_text(config_path)).get<TrainConfig>());
  // Reference dual-encoder dimensions (ViT-B/16 text tower: 512/512).
  const int feature_dim = 512;
  const int token_dim = 512;
  std::cout << "trainable parameters (feature_dim=512, token_dim=512, hidden_width="
            << cfg.hidden_width << ")\n";
  auto line = [&](int m, bool configured) {
    const auto count = biasnet::count_trainable_params(m, feature_dim, token_dim, cfg.hidden_width);
    std::cout << "  m=" << m << ": " << format_param_count(count) << (configured ? "  <- configured" : "")
              << "\n";
  };
  line(cfg.context_length, true);
  for (int m : {4, 8, 16}) {
    if (m != cfg.context_length) {
      line(m, false);
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string eval_out;
  std::uint64_t seed = 7;
  int feature_dim = 64;
  int n_known = 5;
  int n_unknown = 3;
  int n_targets = 2;
  int samples = 40;
  double noise = 0.08;
  SyntheticGeometryParams geometry;
};

int cmd_synth(const SynthArgs& args) {
  data::SyntheticSpec spec;
  spec.feature_dim = args.feature_dim;
  spec.samples_per_class_domain = args.samples;
  spec.noise = args.noise;
  spec.seed = args.seed;
  for (int c = 0; c < args.n_known; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02d", c);
    spec.known_classes.push_back(name);
  }
  for (int c = 0; c < args.n_unknown; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02d", args.n_known + c);
    spec.unknown_classes.push_back(name);
  }
  spec.domains.push_back("source");
  for (int t = 0; t < args.n_targets; ++t) {
    spec.domains.push_back("target_" + std::string(1, static_cast<char>('a' + t)));
  }

  const auto backend =
      encoders::make_toy_backend<float>(args.feature_dim, args.feature_dim, args.seed);
  const auto geometry = synthetic_geometry(backend, spec.known_classes, spec.unknown_classes,
                                           spec.domains, args.seed, args.geometry);
  data::write_synthetic_dataset(args.out, spec, geometry);
  std::cout << "synthetic dataset written to " << args.out << "\n";
  if (!args.eval_out.empty()) {
    data::SyntheticSpec eval_spec = spec;
    eval_spec.seed = Rng(args.seed).fork("synthetic-eval").state();
    data::write_synthetic_dataset(args.eval_out, eval_spec, geometry);
    std::cout << "held-out evaluation dataset written to " << args.eval_out << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Source-domain-guided prompt learning for open-set multi-target domain adaptation"};
  app.require_subcommand(1);

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Build an open-set split from a dataset tree");
  split_cmd->add_option("dataset_root", split_args.dataset_root, "root with domain/class/file layout")
      ->required();
  split_cmd->add_option("--n-known", split_args.n_known, "number of known classes")->required();
  split_cmd->add_option("--source", split_args.source, "source domain")->required();
  split_cmd->add_option("--targets", split_args.targets, "target domains")->required()->delimiter(',');
  split_cmd->add_option("--seed", split_args.seed, "split seed");
  split_cmd->add_option("--out", split_args.out, "output split file")->required();

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train prompts and the bias network");
  train_cmd->add_option("--config", train_args.config, "training config file")->required();
  train_cmd->add_option("--split", train_args.split, "split file")->required();
  train_cmd->add_option("--backend", train_args.backend, "toy or clip:<converted checkpoint dir>");
  train_cmd->add_option("--out", train_args.out, "run directory");
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "override the config seed");
  train_cmd->add_flag("--resume", train_args.resume, "resume from the latest checkpoint");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with open-set metrics");
  eval_cmd->add_option("checkpoint", eval_args.checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--split", eval_args.split, "split file")->required();
  eval_cmd->add_option("--pool", eval_args.pool, "blended, source, or domain:<tag>");
  eval_cmd->add_option("--out", eval_args.out, "output directory for reports and embeddings");
  eval_cmd->add_option("--backend", eval_args.backend, "override the checkpoint backend tag");
  eval_cmd->add_option("--baseline", eval_args.baseline, "zero-shot");
  eval_cmd->add_option("--threshold", eval_args.threshold, "baseline rejection threshold");

  std::string params_config;
  auto* params_cmd = app.add_subcommand("params", "Print trainable-parameter counts");
  params_cmd->add_option("--config", params_config, "training config file")->required();

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic feature-vector dataset");
  synth_cmd->add_option("--out", synth_args.out, "dataset root to create")->required();
  synth_cmd->add_option("--eval-out", synth_args.eval_out, "held-out dataset root");
  synth_cmd->add_option("--seed", synth_args.seed, "geometry and sampling seed");
  synth_cmd->add_option("--feature-dim", synth_args.feature_dim, "feature dimension");
  synth_cmd->add_option("--known", synth_args.n_known, "known class count");
  synth_cmd->add_option("--unknown", synth_args.n_unknown, "unknown class count");
  synth_cmd->add_option("--targets", synth_args.n_targets, "target domain count");
  synth_cmd->add_option("--samples", synth_args.samples, "samples per class and domain");
  synth_cmd->add_option("--noise", synth_args.noise, "cluster noise");
  synth_cmd->add_option("--domain-offset", synth_args.geometry.domain_offset,
                        "per-target-domain token shift strength");
  synth_cmd->add_option("--context-offset", synth_args.geometry.context_offset,
                        "known-context token offset");
  synth_cmd->add_option("--unknown-offset", synth_args.geometry.unknown_offset,
                        "unknown-region token offset");
  synth_cmd->add_option("--unknown-spread", synth_args.geometry.unknown_spread,
                        "unknown cluster spread");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (split_cmd->parsed()) {
      return cmd_split(split_args);
    }
    if (train_cmd->parsed()) {
      if (seed_opt->count() > 0) {
        train_args.seed = train_seed;
      }
      return cmd_train(train_args);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_args);
    }
    if (params_cmd->parsed()) {
      return cmd_params(params_config);
    }
    if (synth_cmd->parsed()) {
      return cmd_synth(synth_args);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace cosmo::cli
