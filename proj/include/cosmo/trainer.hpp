#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "cosmo/core.hpp"
#include "cosmo/data.hpp"
#include "cosmo/encoders.hpp"
#include "cosmo/objective.hpp"

namespace cosmo::trainer {

/// Cosine annealing from `base` toward 0 across `total` iterations; the
/// first iteration uses exactly `base`.
double cosine_lr(double base, std::int64_t iteration, std::int64_t total);

template <class T>
struct AdamMoments {
  T first;
  T second;
  std::int64_t step = 0;

  static AdamMoments zeros_like(const T& t) { return {T::Zero(t.rows(), t.cols()), T::Zero(t.rows(), t.cols()), 0}; }
};

/// Everything that trains plus the optimizer and sampler positions. Encoder
/// and token-bank constants are deliberately not part of this state.
struct TrainState {
  prompts::PromptState<float> prompt_state;
  biasnet::BiasNetParams<float> bias_params;

  AdamMoments<MatrixF> opt_known_context;
  AdamMoments<MatrixF> opt_unknown_context;
  AdamMoments<MatrixF> opt_hidden_weight;
  AdamMoments<VectorF> opt_hidden_bias;
  AdamMoments<MatrixF> opt_output_weight;
  AdamMoments<VectorF> opt_output_bias;

  std::int64_t iteration = 0;
  data::BatchPairSampler::State sampler_state;
};

struct StepReport {
  std::int64_t iteration = 0;
  float loss_source = 0.0f;
  float loss_target = 0.0f;
  int pseudo_known = 0;
  int pseudo_unknown = 0;
  int pseudo_discarded = 0;
  double learning_rate = 0.0;
  bool target_update_skipped = false;  // all target instances discarded
};

struct Checkpoint {
  int format_version = 1;
  TrainConfig config;
  LabelSpace label_space;
  std::string backend_tag;  // "toy" or "clip:<path>"
  int feature_dim = 0;
  int token_dim = 0;
  TrainState state;
};

/// Checkpoint directory: meta.json plus named little-endian float32 blobs.
/// Writes are atomic (temp directory, then rename). load(save(x)) reproduces
/// every tensor bitwise along with the schedule and sampler position.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct FitOptions {
  std::filesystem::path checkpoint_dir;  // empty disables periodic checkpoints
  std::int64_t stop_after = -1;          // >=0: halt after this many iterations (resumable)
  std::function<void(const StepReport&)> on_step;
};

struct FitSummary {
  std::int64_t iterations_run = 0;
  StepReport last_report;
  bool stopped_early = false;
};

/// Alternating-freeze optimization loop. Per iteration: (a) source batch
/// forward with the unknown context gradient-masked, update bias net and
/// known context; (b) pseudo-label the target batch with the updated
/// parameters under no-gradient evaluation; (c) target batch forward with the
/// known context gradient-masked, update bias net and unknown context.
/// Masked tensors are bitwise invariant across their masked sub-step,
/// including optimizer moments.
class Trainer {
 public:
  Trainer(TrainConfig cfg, encoders::Backend<float> backend, LabelSpace labels,
          std::string backend_tag);

  /// Fresh parameter initialization from cfg.seed.
  void initialize();

  /// Resume from a checkpoint; shapes and label space must match the
  /// constructor arguments.
  void restore(const Checkpoint& ckpt);

  FitSummary fit(const data::FeaturePool& source_pool, const data::FeaturePool& target_pool,
                 const FitOptions& options = {});

  // Fine-grained sub-steps, exposed so tests can assert the freeze contract
  // between them. `iteration_lr` is the shared schedule value for the step.
  float source_substep(const MatrixF& raw_features, std::span<const int> labels, double lr);
  std::vector<objective::PseudoLabelDecision> pseudo_labels(const MatrixF& raw_features) const;
  struct TargetOutcome {
    float loss = 0.0f;
    bool update_skipped = false;
  };
  TargetOutcome target_substep(const MatrixF& raw_features,
                               std::span<const objective::PseudoLabelDecision> decisions, double lr);

  StepReport train_step(const MatrixF& source_features, std::span<const int> source_labels,
                        const MatrixF& target_features);

  objective::Model<float> model_view() const;
  const TrainState& state() const { return state_; }
  TrainState& mutable_state() { return state_; }
  const encoders::TokenBank<float>& bank() const { return bank_; }
  const TrainConfig& config() const { return cfg_; }
  Checkpoint make_checkpoint() const;

 private:
  void apply_source_updates(const objective::ParamGradients<float>& grads, double lr);
  void apply_target_updates(const objective::ParamGradients<float>& grads, double lr);

  TrainConfig cfg_;
  encoders::Backend<float> backend_;
  LabelSpace labels_;
  std::string backend_tag_;
  encoders::TokenBank<float> bank_;
  TrainState state_;
  bool initialized_ = false;
};

}  // namespace cosmo::trainer
