#pragma once

#include <span>
#include <vector>

#include "cosmo/bias_net.hpp"
#include "cosmo/common.hpp"
#include "cosmo/encoders.hpp"
#include "cosmo/prompts.hpp"

namespace cosmo::objective {

template <class S>
struct ProbVector {
  VectorX<S> probs;  // length |C_k|+1, known classes then unknown
  S temperature;
};

/// Softmax over cosine similarities scaled by 1/temperature. Inputs must be
/// unit vectors (checked to 1e-4); rows of `text_features` follow label-space
/// order with the unknown row last.
template <class S>
ProbVector<S> class_probabilities(const VectorX<S>& image_feature, const MatrixX<S>& text_features,
                                  S temperature) {
  if (!(temperature > S(0))) {
    throw ValidationError("temperature must be positive");
  }
  if (text_features.cols() != image_feature.size()) {
    throw ValidationError("text features have dimension " + std::to_string(text_features.cols()) +
                          ", image feature has " + std::to_string(image_feature.size()));
  }
  const double norm_tol = 1e-4;
  if (std::abs(static_cast<double>(image_feature.norm()) - 1.0) > norm_tol) {
    throw ValidationError("image feature is not L2-normalized");
  }
  for (Eigen::Index r = 0; r < text_features.rows(); ++r) {
    if (std::abs(static_cast<double>(text_features.row(r).norm()) - 1.0) > norm_tol) {
      throw ValidationError("text feature row " + std::to_string(r) + " is not L2-normalized");
    }
  }
  VectorX<S> logits = (text_features * image_feature) / temperature;
  const S max_logit = logits.maxCoeff();
  VectorX<S> exps = (logits.array() - max_logit).exp();
  ProbVector<S> out;
  out.probs = exps / exps.sum();
  out.temperature = temperature;
  return out;
}

/// Shannon entropy in nats with the 0*log(0) := 0 convention.
template <class S>
S entropy(const ProbVector<S>& p) {
  S h = S(0);
  for (Eigen::Index i = 0; i < p.probs.size(); ++i) {
    const S pi = p.probs[i];
    if (pi > S(0)) {
      h -= pi * std::log(pi);
    }
  }
  return h;
}

inline constexpr double kLogFloor = 1e-30;  // guards -log(p) when p underflows

/// Mean cross-entropy on true labels plus entropy_weight times the mean
/// predictive entropy, both over the whole batch. Labels must be known-class
/// indices; source data has no unknowns.
template <class S>
S source_loss(std::span<const ProbVector<S>> probs, std::span<const int> labels, S entropy_weight) {
  if (probs.empty() || probs.size() != labels.size()) {
    throw ValidationError("source loss needs one label per probability vector");
  }
  S ce = S(0);
  S ent = S(0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int num_known = static_cast<int>(probs[i].probs.size()) - 1;
    if (labels[i] < 0 || labels[i] >= num_known) {
      throw ValidationError("source label " + std::to_string(labels[i]) +
                            " is not a known-class index");
    }
    ce -= std::log(std::max<S>(probs[i].probs[labels[i]], S(kLogFloor)));
    ent += entropy(probs[i]);
  }
  const S inv = S(1) / static_cast<S>(probs.size());
  return ce * inv + entropy_weight * ent * inv;
}

enum class PseudoLabelOutcome { kKnown, kUnknown, kDiscard };

struct PseudoLabelDecision {
  PseudoLabelOutcome outcome = PseudoLabelOutcome::kDiscard;
  int class_index = -1;  // known-class index, only for kKnown
  // Probability of the assigned slot; for discards the overall max.
  double confidence = 0.0;
};

/// Threshold rules, applied per instance:
///   unknown  if every known-class probability < kappa_lower, or the
///            unknown-slot probability >= kappa_upper;
///   known(c) otherwise, when the max known probability >= kappa_known;
///   discard  otherwise.
template <class S>
std::vector<PseudoLabelDecision> assign_pseudo_labels(std::span<const ProbVector<S>> probs,
                                                      double kappa_lower, double kappa_upper,
                                                      double kappa_known) {
  std::vector<PseudoLabelDecision> decisions;
  decisions.reserve(probs.size());
  for (const auto& p : probs) {
    const int num_known = static_cast<int>(p.probs.size()) - 1;
    int best_known = 0;
    for (int c = 1; c < num_known; ++c) {
      if (p.probs[c] > p.probs[best_known]) {
        best_known = c;
      }
    }
    const double max_known = static_cast<double>(p.probs[best_known]);
    const double unknown_prob = static_cast<double>(p.probs[num_known]);

    PseudoLabelDecision d;
    if (max_known < kappa_lower || unknown_prob >= kappa_upper) {
      d.outcome = PseudoLabelOutcome::kUnknown;
      d.confidence = unknown_prob;
    } else if (max_known >= kappa_known) {
      d.outcome = PseudoLabelOutcome::kKnown;
      d.class_index = best_known;
      d.confidence = max_known;
    } else {
      d.outcome = PseudoLabelOutcome::kDiscard;
      d.confidence = std::max(max_known, unknown_prob);
    }
    decisions.push_back(d);
  }
  return decisions;
}

template <class S>
struct TargetLossValue {
  S value = S(0);
  int retained = 0;
  bool all_discarded = false;
};

/// Mean cross-entropy on pseudo-labels plus entropy_weight times the mean
/// predictive entropy, over retained (non-discarded) instances only. A batch
/// with nothing retained contributes a defined zero.
template <class S>
TargetLossValue<S> target_loss(std::span<const ProbVector<S>> probs,
                               std::span<const PseudoLabelDecision> decisions, S entropy_weight) {
  if (probs.size() != decisions.size()) {
    throw ValidationError("target loss needs one decision per probability vector");
  }
  TargetLossValue<S> out;
  S ce = S(0);
  S ent = S(0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& d = decisions[i];
    if (d.outcome == PseudoLabelOutcome::kDiscard) {
      continue;
    }
    const int num_known = static_cast<int>(probs[i].probs.size()) - 1;
    const int target = d.outcome == PseudoLabelOutcome::kUnknown ? num_known : d.class_index;
    if (target < 0 || target > num_known) {
      throw ValidationError("pseudo-label index out of range");
    }
    ce -= std::log(std::max<S>(probs[i].probs[target], S(kLogFloor)));
    ent += entropy(probs[i]);
    ++out.retained;
  }
  if (out.retained == 0) {
    out.all_discarded = true;
    return out;
  }
  const S inv = S(1) / static_cast<S>(out.retained);
  out.value = ce * inv + entropy_weight * ent * inv;
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end differentiable path: image feature -> bias -> biased prompts ->
// text encoder -> cosine logits -> probabilities -> loss. The encoders and
// token bank are frozen; gradients accumulate only into the prompt contexts
// and the bias network.
// ---------------------------------------------------------------------------

/// Non-owning bundle of everything one forward pass needs.
template <class S>
struct Model {
  const encoders::ImageEncoder<S>* image_encoder = nullptr;
  const encoders::TextEncoder<S>* text_encoder = nullptr;
  const encoders::TokenBank<S>* bank = nullptr;
  const prompts::PromptState<S>* prompt_state = nullptr;
  const biasnet::BiasNetParams<S>* bias_params = nullptr;
  S temperature = S(0.01);
  // Ablation switches: without DSBN the bias is identically zero; without
  // separate prompts the unknown row reuses the known context.
  bool use_dsbn = true;
  bool separate_prompts = true;

  int num_known() const { return static_cast<int>(bank->class_token_sequences.size()); }

  const MatrixX<S>& unknown_context() const {
    return separate_prompts ? prompt_state->unknown_context : prompt_state->known_context;
  }
};

template <class S>
struct SampleForward {
  VectorX<S> image_feature;          // normalized
  biasnet::BiasForward<S> bias_fwd;  // hidden-layer cache (zeroed when DSBN is off)
  MatrixX<S> text_features;          // (|C_k|+1) x d_v, unit rows
  ProbVector<S> probs;
};

template <class S>
SampleForward<S> forward_sample(const Model<S>& model, const VectorX<S>& raw_feature) {
  SampleForward<S> fwd;
  fwd.image_feature = model.image_encoder->encode(raw_feature);
  if (model.use_dsbn) {
    fwd.bias_fwd = biasnet::compute_bias_cached(fwd.image_feature, *model.bias_params);
  } else {
    fwd.bias_fwd.bias = VectorX<S>::Zero(model.prompt_state->token_dim());
  }

  const int rows = model.num_known() + 1;
  fwd.text_features.resize(rows, model.text_encoder->output_dim());
  for (int c = 0; c < model.num_known(); ++c) {
    const MatrixX<S> seq = prompts::build_prompt_sequence<S>(
        model.prompt_state->known_context, fwd.bias_fwd.bias,
        model.bank->class_token_sequences[static_cast<std::size_t>(c)]);
    fwd.text_features.row(c) = model.text_encoder->encode(seq).transpose();
  }
  const MatrixX<S> unk_seq = prompts::build_prompt_sequence<S>(
      model.unknown_context(), fwd.bias_fwd.bias, model.bank->unk_token_sequence);
  fwd.text_features.row(rows - 1) = model.text_encoder->encode(unk_seq).transpose();

  fwd.probs = class_probabilities<S>(fwd.image_feature, fwd.text_features, model.temperature);
  return fwd;
}

/// Probabilities for every row of a raw feature batch (no gradient state).
template <class S>
std::vector<ProbVector<S>> forward_batch_probabilities(const Model<S>& model,
                                                       const MatrixX<S>& raw_features) {
  std::vector<ProbVector<S>> out;
  out.reserve(static_cast<std::size_t>(raw_features.rows()));
  for (Eigen::Index i = 0; i < raw_features.rows(); ++i) {
    out.push_back(forward_sample(model, VectorX<S>(raw_features.row(i).transpose())).probs);
  }
  return out;
}

template <class S>
struct ParamGradients {
  MatrixX<S> known_context;
  MatrixX<S> unknown_context;
  biasnet::BiasNetGradients<S> bias;

  static ParamGradients zeros_like(const Model<S>& model) {
    ParamGradients g;
    g.known_context = MatrixX<S>::Zero(model.prompt_state->known_context.rows(),
                                       model.prompt_state->known_context.cols());
    g.unknown_context = MatrixX<S>::Zero(model.prompt_state->unknown_context.rows(),
                                         model.prompt_state->unknown_context.cols());
    g.bias = biasnet::BiasNetGradients<S>::zeros_like(*model.bias_params);
    return g;
  }
};

namespace detail {

/// d(weight_ce * CE(y) + weight_ent * H) / d(logits) for one sample.
template <class S>
VectorX<S> loss_logit_gradient(const ProbVector<S>& p, int target, S weight_ce, S weight_ent) {
  const S h = entropy(p);
  VectorX<S> g(p.probs.size());
  for (Eigen::Index j = 0; j < p.probs.size(); ++j) {
    const S pj = p.probs[j];
    S g_ce = pj - (j == target ? S(1) : S(0));
    S g_ent = S(0);
    if (pj > S(0)) {
      g_ent = -pj * (std::log(pj) + h);
    }
    g[j] = weight_ce * g_ce + weight_ent * g_ent;
  }
  return g;
}

/// Backpropagates one sample's logit gradient into the learnable tensors.
template <class S>
void accumulate_sample_gradients(const Model<S>& model, const SampleForward<S>& fwd,
                                 const VectorX<S>& d_logits, ParamGradients<S>& grads) {
  const int num_known = model.num_known();
  const int m = model.prompt_state->context_length();
  VectorX<S> d_bias = VectorX<S>::Zero(model.prompt_state->token_dim());
  const S inv_temp = S(1) / model.temperature;

  for (int row = 0; row <= num_known; ++row) {
    if (d_logits[row] == S(0)) {
      continue;
    }
    const VectorX<S> d_tau = fwd.image_feature * (d_logits[row] * inv_temp);
    const bool unknown_row = row == num_known;
    const MatrixX<S>& context =
        unknown_row ? model.unknown_context() : model.prompt_state->known_context;
    const MatrixX<S>& class_tokens =
        unknown_row ? model.bank->unk_token_sequence
                    : model.bank->class_token_sequences[static_cast<std::size_t>(row)];
    const MatrixX<S> seq = prompts::build_prompt_sequence<S>(context, fwd.bias_fwd.bias, class_tokens);
    const MatrixX<S> d_seq = model.text_encoder->encode_backward(seq, d_tau);
    const auto split = prompts::split_sequence_gradient<S>(d_seq, m);
    if (unknown_row && model.separate_prompts) {
      grads.unknown_context += split.d_context;
    } else {
      grads.known_context += split.d_context;
    }
    d_bias += split.d_bias;
  }

  if (model.use_dsbn) {
    biasnet::accumulate_bias_gradients<S>(fwd.image_feature, *model.bias_params, fwd.bias_fwd,
                                          d_bias, grads.bias);
  }
}

}  // namespace detail

template <class S>
struct SourceLossResult {
  S loss = S(0);
  ParamGradients<S> grads;
  std::vector<ProbVector<S>> probs;
};

template <class S>
SourceLossResult<S> source_loss_with_gradients(const Model<S>& model, const MatrixX<S>& raw_features,
                                               std::span<const int> labels, S entropy_weight) {
  if (raw_features.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ValidationError("source batch needs one label per feature row");
  }
  SourceLossResult<S> result;
  result.grads = ParamGradients<S>::zeros_like(model);
  result.probs.reserve(labels.size());
  const int num_known = model.num_known();
  const S inv_batch = S(1) / static_cast<S>(labels.size());

  for (Eigen::Index i = 0; i < raw_features.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_known) {
      throw ValidationError("source label " + std::to_string(y) + " is not a known-class index");
    }
    const SampleForward<S> fwd = forward_sample(model, VectorX<S>(raw_features.row(i).transpose()));
    const VectorX<S> d_logits =
        detail::loss_logit_gradient<S>(fwd.probs, y, inv_batch, entropy_weight * inv_batch);
    detail::accumulate_sample_gradients(model, fwd, d_logits, result.grads);
    result.probs.push_back(fwd.probs);
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  result.loss = source_loss<S>(result.probs, label_copy, entropy_weight);
  return result;
}

template <class S>
struct TargetLossResult {
  S loss = S(0);
  int retained = 0;
  bool all_discarded = false;
  ParamGradients<S> grads;
};

/// Pseudo-label decisions are inputs here (held fixed), so this loss is a
/// smooth function of the parameters; label assignment happens separately
/// under no-gradient evaluation.
template <class S>
TargetLossResult<S> target_loss_with_gradients(const Model<S>& model, const MatrixX<S>& raw_features,
                                               std::span<const PseudoLabelDecision> decisions,
                                               S entropy_weight) {
  if (raw_features.rows() != static_cast<Eigen::Index>(decisions.size())) {
    throw ValidationError("target batch needs one decision per feature row");
  }
  TargetLossResult<S> result;
  result.grads = ParamGradients<S>::zeros_like(model);
  const int num_known = model.num_known();
  for (const auto& d : decisions) {
    if (d.outcome != PseudoLabelOutcome::kDiscard) {
      ++result.retained;
    }
  }
  if (result.retained == 0) {
    result.all_discarded = true;
    return result;
  }
  const S inv_retained = S(1) / static_cast<S>(result.retained);

  std::vector<ProbVector<S>> probs;
  probs.reserve(decisions.size());
  for (Eigen::Index i = 0; i < raw_features.rows(); ++i) {
    const auto& d = decisions[static_cast<std::size_t>(i)];
    if (d.outcome == PseudoLabelOutcome::kDiscard) {
      probs.push_back(ProbVector<S>{});  // placeholder, never read
      continue;
    }
    const int target = d.outcome == PseudoLabelOutcome::kUnknown ? num_known : d.class_index;
    const SampleForward<S> fwd = forward_sample(model, VectorX<S>(raw_features.row(i).transpose()));
    const VectorX<S> d_logits =
        detail::loss_logit_gradient<S>(fwd.probs, target, inv_retained, entropy_weight * inv_retained);
    detail::accumulate_sample_gradients(model, fwd, d_logits, result.grads);
    probs.push_back(fwd.probs);
  }

  S ce = S(0);
  S ent = S(0);
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const auto& d = decisions[i];
    if (d.outcome == PseudoLabelOutcome::kDiscard) {
      continue;
    }
    const int target = d.outcome == PseudoLabelOutcome::kUnknown ? num_known : d.class_index;
    ce -= std::log(std::max<S>(probs[i].probs[target], S(kLogFloor)));
    ent += entropy(probs[i]);
  }
  result.loss = ce * inv_retained + entropy_weight * ent * inv_retained;
  return result;
}

}  // namespace cosmo::objective
