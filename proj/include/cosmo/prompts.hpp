#pragma once

#include <vector>

#include "cosmo/common.hpp"
#include "cosmo/encoders.hpp"

namespace cosmo::prompts {

/// The learnable surface of the prompt layer: one context shared by all known
/// classes and one context for the unknown class. Everything else that enters
/// a prompt (class and UNK token sequences) is frozen in the TokenBank.
template <class S>
struct PromptState {
  MatrixX<S> known_context;    // m x d_t
  MatrixX<S> unknown_context;  // m x d_t

  int context_length() const { return static_cast<int>(known_context.rows()); }
  int token_dim() const { return static_cast<int>(known_context.cols()); }
};

/// Gaussian(0, 0.02) initialization; the two contexts draw from independent
/// streams. With template_init the known context starts from the embedding of
/// "a photo of a" instead (truncated or Gaussian-padded to length m).
template <class S>
PromptState<S> init_prompt_state(int context_length, int token_dim, const Rng& run_rng,
                                 bool template_init = false,
                                 const encoders::TextEmbedder<S>* embedder = nullptr) {
  if (context_length < 1 || token_dim < 1) {
    throw ValidationError("prompt context shape must be positive");
  }
  PromptState<S> state;
  state.known_context.resize(context_length, token_dim);
  state.unknown_context.resize(context_length, token_dim);
  auto fill_gaussian = [&](MatrixX<S>& m, const char* label) {
    Rng rng = run_rng.fork(label);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = static_cast<S>(0.02 * rng.gaussian());
      }
    }
  };
  fill_gaussian(state.known_context, "known-context-init");
  fill_gaussian(state.unknown_context, "unknown-context-init");
  if (template_init) {
    if (embedder == nullptr) {
      throw ValidationError("template initialization needs a text embedder");
    }
    const MatrixX<S> tpl = embedder->embed("a photo of a");
    const Eigen::Index rows = std::min<Eigen::Index>(context_length, tpl.rows());
    state.known_context.topRows(rows) = tpl.topRows(rows);
  }
  return state;
}

namespace detail {

template <class S>
void check_bias_dim(const MatrixX<S>& context, const VectorX<S>& bias) {
  if (bias.size() != context.cols()) {
    throw ValidationError("bias dimension " + std::to_string(bias.size()) +
                          " does not match context token dimension " +
                          std::to_string(context.cols()));
  }
}

}  // namespace detail

/// One prompt sequence: the context rows with the bias added to every context
/// position, followed by the frozen class tokens (bias-free).
template <class S>
MatrixX<S> build_prompt_sequence(const MatrixX<S>& context, const VectorX<S>& bias,
                                 const MatrixX<S>& class_tokens) {
  detail::check_bias_dim(context, bias);
  if (class_tokens.cols() != context.cols()) {
    throw ValidationError("class token dimension " + std::to_string(class_tokens.cols()) +
                          " does not match context token dimension " +
                          std::to_string(context.cols()));
  }
  MatrixX<S> seq(context.rows() + class_tokens.rows(), context.cols());
  seq.topRows(context.rows()) = context.rowwise() + bias.transpose();
  seq.bottomRows(class_tokens.rows()) = class_tokens;
  return seq;
}

template <class S>
std::vector<MatrixX<S>> build_known_prompts(const PromptState<S>& state,
                                            const encoders::TokenBank<S>& bank,
                                            const VectorX<S>& bias) {
  std::vector<MatrixX<S>> sequences;
  sequences.reserve(bank.class_token_sequences.size());
  for (const auto& class_tokens : bank.class_token_sequences) {
    sequences.push_back(build_prompt_sequence(state.known_context, bias, class_tokens));
  }
  return sequences;
}

template <class S>
MatrixX<S> build_unknown_prompt(const PromptState<S>& state, const encoders::TokenBank<S>& bank,
                                const VectorX<S>& bias) {
  return build_prompt_sequence(state.unknown_context, bias, bank.unk_token_sequence);
}

/// Text-feature matrix W: one row per known class in label order, the unknown
/// prompt last. Rows are unit vectors (the encoder normalizes).
template <class S>
MatrixX<S> assemble_text_features(const PromptState<S>& state, const encoders::TokenBank<S>& bank,
                                  const VectorX<S>& bias, const encoders::TextEncoder<S>& text_encoder) {
  const auto known = build_known_prompts(state, bank, bias);
  const MatrixX<S> unknown = build_unknown_prompt(state, bank, bias);
  MatrixX<S> features(static_cast<Eigen::Index>(known.size()) + 1, text_encoder.output_dim());
  for (std::size_t i = 0; i < known.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) = text_encoder.encode(known[i]).transpose();
  }
  features.row(features.rows() - 1) = text_encoder.encode(unknown).transpose();
  return features;
}

/// Splits a sequence gradient into its learnable parts: the context rows'
/// gradient and the bias gradient (the bias enters every context position, so
/// its gradient is the sum over those rows). Gradients on the frozen class
/// tokens are dropped.
template <class S>
struct SequenceGradient {
  MatrixX<S> d_context;  // m x d_t
  VectorX<S> d_bias;     // d_t
};

template <class S>
SequenceGradient<S> split_sequence_gradient(const MatrixX<S>& d_sequence, int context_length) {
  if (d_sequence.rows() < context_length) {
    throw ValidationError("sequence gradient shorter than the context length");
  }
  SequenceGradient<S> g;
  g.d_context = d_sequence.topRows(context_length);
  g.d_bias = g.d_context.colwise().sum().transpose();
  return g;
}

}  // namespace cosmo::prompts
