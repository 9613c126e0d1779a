#include "cosmo/trainer.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "cosmo/io.hpp"

namespace cosmo::trainer {

namespace fs = std::filesystem;

double cosine_lr(double base, std::int64_t iteration, std::int64_t total) {
  if (total < 1 || iteration < 0 || iteration >= total) {
    throw ValidationError("schedule position out of range");
  }
  const double phase = std::numbers::pi * static_cast<double>(iteration) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(phase));
}

namespace {

constexpr float kAdamEps = 1e-8f;

/// One decoupled-weight-decay adaptive-moment update. Freezing a tensor means
/// simply not calling this, which leaves the parameter, its moments, and its
/// bias-correction step untouched.
template <class T>
void adamw_update(T& param, const T& grad, AdamMoments<T>& moments, const TrainConfig& cfg,
                  double lr) {
  const float beta1 = static_cast<float>(cfg.beta1);
  const float beta2 = static_cast<float>(cfg.beta2);
  moments.step += 1;
  moments.first = beta1 * moments.first + (1.0f - beta1) * grad;
  moments.second = beta2 * moments.second + (1.0f - beta2) * grad.cwiseProduct(grad);
  const float bias1 = 1.0f - std::pow(beta1, static_cast<float>(moments.step));
  const float bias2 = 1.0f - std::pow(beta2, static_cast<float>(moments.step));
  const float flr = static_cast<float>(lr);
  const float wd = static_cast<float>(cfg.weight_decay);
  T m_hat = moments.first / bias1;
  T v_hat = moments.second / bias2;
  param -= flr * (m_hat.array() / (v_hat.array().sqrt() + kAdamEps)).matrix();
  if (wd != 0.0f) {
    param -= (flr * wd) * param;
  }
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, encoders::Backend<float> backend, LabelSpace labels,
                 std::string backend_tag)
    : cfg_(validate_config(cfg)),
      backend_(std::move(backend)),
      labels_(std::move(labels)),
      backend_tag_(std::move(backend_tag)),
      bank_(encoders::build_token_bank<float>(*backend_.embedder, labels_)) {}

void Trainer::initialize() {
  const Rng run_rng(cfg_.seed);
  state_ = TrainState{};
  state_.prompt_state = prompts::init_prompt_state<float>(
      cfg_.context_length, backend_.text->token_dim(), run_rng, cfg_.template_init,
      backend_.embedder.get());
  state_.bias_params = biasnet::init_bias_net<float>(backend_.image->feature_dim(),
                                                     cfg_.hidden_width, backend_.text->token_dim(),
                                                     run_rng);
  state_.opt_known_context = AdamMoments<MatrixF>::zeros_like(state_.prompt_state.known_context);
  state_.opt_unknown_context = AdamMoments<MatrixF>::zeros_like(state_.prompt_state.unknown_context);
  state_.opt_hidden_weight = AdamMoments<MatrixF>::zeros_like(state_.bias_params.hidden_weight);
  state_.opt_hidden_bias = AdamMoments<VectorF>::zeros_like(state_.bias_params.hidden_bias);
  state_.opt_output_weight = AdamMoments<MatrixF>::zeros_like(state_.bias_params.output_weight);
  state_.opt_output_bias = AdamMoments<VectorF>::zeros_like(state_.bias_params.output_bias);
  initialized_ = true;
}

void Trainer::restore(const Checkpoint& ckpt) {
  auto mismatch = [](const std::string& tensor, Eigen::Index have_r, Eigen::Index have_c,
                     Eigen::Index want_r, Eigen::Index want_c) {
    throw ValidationError("checkpoint tensor '" + tensor + "' has shape " + std::to_string(have_r) +
                          "x" + std::to_string(have_c) + ", current config expects " +
                          std::to_string(want_r) + "x" + std::to_string(want_c));
  };
  const auto& ps = ckpt.state.prompt_state;
  if (ps.known_context.rows() != cfg_.context_length ||
      ps.known_context.cols() != backend_.text->token_dim()) {
    mismatch("known_context", ps.known_context.rows(), ps.known_context.cols(),
             cfg_.context_length, backend_.text->token_dim());
  }
  if (ps.unknown_context.rows() != cfg_.context_length ||
      ps.unknown_context.cols() != backend_.text->token_dim()) {
    mismatch("unknown_context", ps.unknown_context.rows(), ps.unknown_context.cols(),
             cfg_.context_length, backend_.text->token_dim());
  }
  const auto& bp = ckpt.state.bias_params;
  if (bp.hidden_weight.rows() != backend_.image->feature_dim() ||
      bp.hidden_weight.cols() != cfg_.hidden_width) {
    mismatch("bias_hidden_weight", bp.hidden_weight.rows(), bp.hidden_weight.cols(),
             backend_.image->feature_dim(), cfg_.hidden_width);
  }
  if (bp.output_weight.rows() != cfg_.hidden_width ||
      bp.output_weight.cols() != backend_.text->token_dim()) {
    mismatch("bias_output_weight", bp.output_weight.rows(), bp.output_weight.cols(),
             cfg_.hidden_width, backend_.text->token_dim());
  }
  if (ckpt.label_space != labels_) {
    throw ValidationError("checkpoint label space does not match the current split");
  }
  state_ = ckpt.state;
  initialized_ = true;
}

objective::Model<float> Trainer::model_view() const {
  objective::Model<float> model;
  model.image_encoder = backend_.image.get();
  model.text_encoder = backend_.text.get();
  model.bank = &bank_;
  model.prompt_state = &state_.prompt_state;
  model.bias_params = &state_.bias_params;
  model.temperature = static_cast<float>(cfg_.temperature);
  model.use_dsbn = cfg_.use_dsbn;
  model.separate_prompts = cfg_.separate_prompts;
  return model;
}

void Trainer::apply_source_updates(const objective::ParamGradients<float>& grads, double lr) {
  // Unknown context is gradient-masked here: no moment update, no decay.
  adamw_update(state_.prompt_state.known_context, grads.known_context, state_.opt_known_context,
               cfg_, lr);
  if (cfg_.use_dsbn) {
    adamw_update(state_.bias_params.hidden_weight, grads.bias.hidden_weight,
                 state_.opt_hidden_weight, cfg_, lr);
    adamw_update(state_.bias_params.hidden_bias, grads.bias.hidden_bias, state_.opt_hidden_bias,
                 cfg_, lr);
    adamw_update(state_.bias_params.output_weight, grads.bias.output_weight,
                 state_.opt_output_weight, cfg_, lr);
    adamw_update(state_.bias_params.output_bias, grads.bias.output_bias, state_.opt_output_bias,
                 cfg_, lr);
  }
}

void Trainer::apply_target_updates(const objective::ParamGradients<float>& grads, double lr) {
  // Known context is gradient-masked here, except in the shared-prompt
  // ablation where the single context plays both roles.
  if (cfg_.separate_prompts) {
    adamw_update(state_.prompt_state.unknown_context, grads.unknown_context,
                 state_.opt_unknown_context, cfg_, lr);
  } else {
    adamw_update(state_.prompt_state.known_context, grads.known_context, state_.opt_known_context,
                 cfg_, lr);
  }
  if (cfg_.use_dsbn) {
    adamw_update(state_.bias_params.hidden_weight, grads.bias.hidden_weight,
                 state_.opt_hidden_weight, cfg_, lr);
    adamw_update(state_.bias_params.hidden_bias, grads.bias.hidden_bias, state_.opt_hidden_bias,
                 cfg_, lr);
    adamw_update(state_.bias_params.output_weight, grads.bias.output_weight,
                 state_.opt_output_weight, cfg_, lr);
    adamw_update(state_.bias_params.output_bias, grads.bias.output_bias, state_.opt_output_bias,
                 cfg_, lr);
  }
}

float Trainer::source_substep(const MatrixF& raw_features, std::span<const int> labels, double lr) {
  const auto result = objective::source_loss_with_gradients<float>(
      model_view(), raw_features, labels, static_cast<float>(cfg_.entropy_weight));
  if (!std::isfinite(result.loss)) {
    throw TrainingError("source loss is not finite at iteration " +
                        std::to_string(state_.iteration));
  }
  apply_source_updates(result.grads, lr);
  return result.loss;
}

std::vector<objective::PseudoLabelDecision> Trainer::pseudo_labels(const MatrixF& raw_features) const {
  const auto probs = objective::forward_batch_probabilities<float>(model_view(), raw_features);
  return objective::assign_pseudo_labels<float>(probs, cfg_.kappa_lower, cfg_.kappa_upper,
                                                cfg_.kappa_known);
}

Trainer::TargetOutcome Trainer::target_substep(
    const MatrixF& raw_features, std::span<const objective::PseudoLabelDecision> decisions,
    double lr) {
  const auto result = objective::target_loss_with_gradients<float>(
      model_view(), raw_features, decisions, static_cast<float>(cfg_.entropy_weight));
  TargetOutcome outcome;
  if (result.all_discarded) {
    // Nothing retained: the sub-step contributes no update at all, so the
    // iteration degenerates to supervised prompt tuning on the source batch.
    outcome.update_skipped = true;
    return outcome;
  }
  if (!std::isfinite(result.loss)) {
    throw TrainingError("target loss is not finite at iteration " +
                        std::to_string(state_.iteration));
  }
  outcome.loss = result.loss;
  apply_target_updates(result.grads, lr);
  return outcome;
}

StepReport Trainer::train_step(const MatrixF& source_features, std::span<const int> source_labels,
                               const MatrixF& target_features) {
  if (!initialized_) {
    throw TrainingError("trainer used before initialize() or restore()");
  }
  StepReport report;
  report.iteration = state_.iteration;
  report.learning_rate = cosine_lr(cfg_.learning_rate, state_.iteration, cfg_.total_iterations);

  report.loss_source = source_substep(source_features, source_labels, report.learning_rate);

  const auto decisions = pseudo_labels(target_features);
  for (const auto& d : decisions) {
    switch (d.outcome) {
      case objective::PseudoLabelOutcome::kKnown: ++report.pseudo_known; break;
      case objective::PseudoLabelOutcome::kUnknown: ++report.pseudo_unknown; break;
      case objective::PseudoLabelOutcome::kDiscard: ++report.pseudo_discarded; break;
    }
  }

  const TargetOutcome target = target_substep(target_features, decisions, report.learning_rate);
  report.loss_target = target.loss;
  report.target_update_skipped = target.update_skipped;

  state_.iteration += 1;
  return report;
}

FitSummary Trainer::fit(const data::FeaturePool& source_pool, const data::FeaturePool& target_pool,
                        const FitOptions& options) {
  if (!initialized_) {
    initialize();
  }
  if (source_pool.size() == 0 || target_pool.size() == 0) {
    throw ValidationError("training pools must be non-empty");
  }
  if (source_pool.labels.size() != static_cast<std::size_t>(source_pool.size())) {
    throw ValidationError("source pool must be labeled");
  }

  data::BatchPairSampler sampler(static_cast<std::size_t>(source_pool.size()),
                                 static_cast<std::size_t>(target_pool.size()), cfg_.batch_size,
                                 cfg_.seed);
  sampler.restore(state_.sampler_state);

  auto write_ckpt = [&](const fs::path& dir) {
    state_.sampler_state = sampler.state();
    save_checkpoint(make_checkpoint(), dir);
  };

  FitSummary summary;
  const Eigen::Index dim = source_pool.dim();
  MatrixF source_batch(cfg_.batch_size, dim);
  MatrixF target_batch(cfg_.batch_size, dim);
  std::vector<int> labels(static_cast<std::size_t>(cfg_.batch_size));

  while (state_.iteration < cfg_.total_iterations) {
    if (options.stop_after >= 0 && summary.iterations_run >= options.stop_after) {
      summary.stopped_early = true;
      break;
    }
    const auto batch = sampler.next();
    for (int i = 0; i < cfg_.batch_size; ++i) {
      source_batch.row(i) = source_pool.features.row(batch.source[static_cast<std::size_t>(i)]);
      labels[static_cast<std::size_t>(i)] =
          source_pool.labels[static_cast<std::size_t>(batch.source[static_cast<std::size_t>(i)])];
      target_batch.row(i) = target_pool.features.row(batch.target[static_cast<std::size_t>(i)]);
    }

    StepReport report;
    try {
      report = train_step(source_batch, labels, target_batch);
    } catch (const TrainingError&) {
      if (!options.checkpoint_dir.empty()) {
        write_ckpt(options.checkpoint_dir / "diverged_snapshot");
      }
      throw;
    }
    summary.iterations_run += 1;
    summary.last_report = report;
    if (options.on_step) {
      options.on_step(report);
    }
    if (!options.checkpoint_dir.empty() &&
        (state_.iteration % cfg_.checkpoint_every == 0 ||
         state_.iteration == cfg_.total_iterations)) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%08lld",
                    static_cast<long long>(state_.iteration));
      write_ckpt(options.checkpoint_dir / name);
    }
  }

  state_.sampler_state = sampler.state();
  if (!options.checkpoint_dir.empty()) {
    write_ckpt(options.checkpoint_dir / (summary.stopped_early ? "interrupted" : "final"));
  }
  return summary;
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = cfg_;
  ckpt.label_space = labels_;
  ckpt.backend_tag = backend_tag_;
  ckpt.feature_dim = backend_.image->feature_dim();
  ckpt.token_dim = backend_.text->token_dim();
  ckpt.state = state_;
  return ckpt;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

struct TensorSpec {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
};

nlohmann::ordered_json shape_json(Eigen::Index rows, Eigen::Index cols) {
  return nlohmann::ordered_json::array({rows, cols});
}

void save_matrix_with_moments(const fs::path& dir, const std::string& name, const MatrixF& tensor,
                              const AdamMoments<MatrixF>& moments) {
  io::write_f32_matrix(dir / (name + ".f32"), tensor);
  io::write_f32_matrix(dir / ("adam_m_" + name + ".f32"), moments.first);
  io::write_f32_matrix(dir / ("adam_v_" + name + ".f32"), moments.second);
}

void save_vector_with_moments(const fs::path& dir, const std::string& name, const VectorF& tensor,
                              const AdamMoments<VectorF>& moments) {
  io::write_f32_vector(dir / (name + ".f32"), tensor);
  io::write_f32_vector(dir / ("adam_m_" + name + ".f32"), moments.first);
  io::write_f32_vector(dir / ("adam_v_" + name + ".f32"), moments.second);
}

MatrixF load_matrix(const fs::path& dir, const std::string& name, Eigen::Index rows,
                    Eigen::Index cols) {
  return io::read_f32_matrix(dir / (name + ".f32"), rows, cols);
}

VectorF load_vector(const fs::path& dir, const std::string& name, Eigen::Index size) {
  return io::read_f32_vector(dir / (name + ".f32"), size);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const fs::path tmp = dir.string() + ".writing";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  const auto& st = ckpt.state;
  save_matrix_with_moments(tmp, "known_context", st.prompt_state.known_context,
                           st.opt_known_context);
  save_matrix_with_moments(tmp, "unknown_context", st.prompt_state.unknown_context,
                           st.opt_unknown_context);
  save_matrix_with_moments(tmp, "bias_hidden_weight", st.bias_params.hidden_weight,
                           st.opt_hidden_weight);
  save_vector_with_moments(tmp, "bias_hidden_bias", st.bias_params.hidden_bias,
                           st.opt_hidden_bias);
  save_matrix_with_moments(tmp, "bias_output_weight", st.bias_params.output_weight,
                           st.opt_output_weight);
  save_vector_with_moments(tmp, "bias_output_bias", st.bias_params.output_bias,
                           st.opt_output_bias);

  nlohmann::ordered_json meta;
  meta["format_version"] = ckpt.format_version;
  meta["iteration"] = st.iteration;
  meta["backend"] = ckpt.backend_tag;
  meta["feature_dim"] = ckpt.feature_dim;
  meta["token_dim"] = ckpt.token_dim;
  meta["config"] = nlohmann::json(ckpt.config);
  meta["label_space"] = nlohmann::json(ckpt.label_space);
  nlohmann::ordered_json tensors;
  tensors["known_context"] =
      shape_json(st.prompt_state.known_context.rows(), st.prompt_state.known_context.cols());
  tensors["unknown_context"] =
      shape_json(st.prompt_state.unknown_context.rows(), st.prompt_state.unknown_context.cols());
  tensors["bias_hidden_weight"] =
      shape_json(st.bias_params.hidden_weight.rows(), st.bias_params.hidden_weight.cols());
  tensors["bias_hidden_bias"] = shape_json(st.bias_params.hidden_bias.size(), 1);
  tensors["bias_output_weight"] =
      shape_json(st.bias_params.output_weight.rows(), st.bias_params.output_weight.cols());
  tensors["bias_output_bias"] = shape_json(st.bias_params.output_bias.size(), 1);
  meta["tensors"] = tensors;
  nlohmann::ordered_json adam;
  adam["known_context"] = st.opt_known_context.step;
  adam["unknown_context"] = st.opt_unknown_context.step;
  adam["bias_hidden_weight"] = st.opt_hidden_weight.step;
  adam["bias_hidden_bias"] = st.opt_hidden_bias.step;
  adam["bias_output_weight"] = st.opt_output_weight.step;
  adam["bias_output_bias"] = st.opt_output_bias.step;
  meta["adam_steps"] = adam;
  meta["sampler"] = {
      {"source", {{"epoch", st.sampler_state.source.epoch}, {"cursor", st.sampler_state.source.cursor}}},
      {"target", {{"epoch", st.sampler_state.target.epoch}, {"cursor", st.sampler_state.target.cursor}}}};
  io::write_text_atomic(tmp / "meta.json", meta.dump(2) + "\n");

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) {
    throw IoError("not a checkpoint directory (missing meta.json): " + dir.string());
  }
  const auto meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
  Checkpoint ckpt;
  ckpt.format_version = meta.at("format_version").get<int>();
  if (ckpt.format_version != 1) {
    throw IoError("unsupported checkpoint format version " + std::to_string(ckpt.format_version));
  }
  ckpt.backend_tag = meta.at("backend").get<std::string>();
  ckpt.feature_dim = meta.at("feature_dim").get<int>();
  ckpt.token_dim = meta.at("token_dim").get<int>();
  ckpt.config = meta.at("config").get<TrainConfig>();
  ckpt.label_space = meta.at("label_space").get<LabelSpace>();

  auto shape_of = [&meta](const std::string& name) {
    const auto& arr = meta.at("tensors").at(name);
    return std::pair<Eigen::Index, Eigen::Index>(arr.at(0).get<Eigen::Index>(),
                                                 arr.at(1).get<Eigen::Index>());
  };
  auto load_m = [&](const std::string& name, AdamMoments<MatrixF>& moments) {
    const auto [r, c] = shape_of(name);
    moments.first = load_matrix(dir, "adam_m_" + name, r, c);
    moments.second = load_matrix(dir, "adam_v_" + name, r, c);
    moments.step = meta.at("adam_steps").at(name).get<std::int64_t>();
    return load_matrix(dir, name, r, c);
  };
  auto load_v = [&](const std::string& name, AdamMoments<VectorF>& moments) {
    const auto [r, c] = shape_of(name);
    if (c != 1) {
      throw IoError("checkpoint tensor '" + name + "' should be a vector");
    }
    moments.first = load_vector(dir, "adam_m_" + name, r);
    moments.second = load_vector(dir, "adam_v_" + name, r);
    moments.step = meta.at("adam_steps").at(name).get<std::int64_t>();
    return load_vector(dir, name, r);
  };

  auto& st = ckpt.state;
  st.prompt_state.known_context = load_m("known_context", st.opt_known_context);
  st.prompt_state.unknown_context = load_m("unknown_context", st.opt_unknown_context);
  st.bias_params.hidden_weight = load_m("bias_hidden_weight", st.opt_hidden_weight);
  st.bias_params.hidden_bias = load_v("bias_hidden_bias", st.opt_hidden_bias);
  st.bias_params.output_weight = load_m("bias_output_weight", st.opt_output_weight);
  st.bias_params.output_bias = load_v("bias_output_bias", st.opt_output_bias);
  st.iteration = meta.at("iteration").get<std::int64_t>();
  st.sampler_state.source.epoch = meta.at("sampler").at("source").at("epoch").get<std::uint64_t>();
  st.sampler_state.source.cursor = meta.at("sampler").at("source").at("cursor").get<std::uint64_t>();
  st.sampler_state.target.epoch = meta.at("sampler").at("target").at("epoch").get<std::uint64_t>();
  st.sampler_state.target.cursor = meta.at("sampler").at("target").at("cursor").get<std::uint64_t>();
  return ckpt;
}

}  // namespace cosmo::trainer
