#pragma once

#include <cstdint>

#include "cosmo/common.hpp"

namespace cosmo::biasnet {

/// Two affine layers with a rectifier between them, mapping an L2-normalized
/// image feature to the domain-bias context token. All four tensors train.
template <class S>
struct BiasNetParams {
  MatrixX<S> hidden_weight;  // d_v x h
  VectorX<S> hidden_bias;    // h
  MatrixX<S> output_weight;  // h x d_t
  VectorX<S> output_bias;    // d_t

  int feature_dim() const { return static_cast<int>(hidden_weight.rows()); }
  int hidden_width() const { return static_cast<int>(hidden_weight.cols()); }
  int token_dim() const { return static_cast<int>(output_weight.cols()); }
};

/// Hidden layer gets a scaled Gaussian start; the output layer starts at zero
/// so the bias is exactly 0 until training moves it (unbiased-prompt start).
template <class S>
BiasNetParams<S> init_bias_net(int feature_dim, int hidden_width, int token_dim, const Rng& run_rng) {
  if (feature_dim < 1 || hidden_width < 1 || token_dim < 1) {
    throw ValidationError("bias net dimensions must be positive");
  }
  BiasNetParams<S> params;
  params.hidden_weight.resize(feature_dim, hidden_width);
  params.hidden_bias = VectorX<S>::Zero(hidden_width);
  params.output_weight = MatrixX<S>::Zero(hidden_width, token_dim);
  params.output_bias = VectorX<S>::Zero(token_dim);
  Rng rng = run_rng.fork("bias-net-init");
  const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (Eigen::Index r = 0; r < params.hidden_weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < params.hidden_weight.cols(); ++c) {
      params.hidden_weight(r, c) = static_cast<S>(scale * rng.gaussian());
    }
  }
  return params;
}

template <class S>
struct BiasForward {
  VectorX<S> pre_activation;  // h
  VectorX<S> hidden;          // h, rectified
  VectorX<S> bias;            // d_t
};

template <class S>
BiasForward<S> compute_bias_cached(const VectorX<S>& image_feature, const BiasNetParams<S>& params) {
  if (image_feature.size() != params.hidden_weight.rows()) {
    throw ValidationError("image feature dimension " + std::to_string(image_feature.size()) +
                          " does not match bias net input dimension " +
                          std::to_string(params.hidden_weight.rows()));
  }
  BiasForward<S> fwd;
  fwd.pre_activation = params.hidden_weight.transpose() * image_feature + params.hidden_bias;
  fwd.hidden = fwd.pre_activation.cwiseMax(S(0));
  fwd.bias = params.output_weight.transpose() * fwd.hidden + params.output_bias;
  return fwd;
}

template <class S>
VectorX<S> compute_bias(const VectorX<S>& image_feature, const BiasNetParams<S>& params) {
  return compute_bias_cached(image_feature, params).bias;
}

template <class S>
struct BiasNetGradients {
  MatrixX<S> hidden_weight;
  VectorX<S> hidden_bias;
  MatrixX<S> output_weight;
  VectorX<S> output_bias;

  static BiasNetGradients zeros_like(const BiasNetParams<S>& p) {
    return {MatrixX<S>::Zero(p.hidden_weight.rows(), p.hidden_weight.cols()),
            VectorX<S>::Zero(p.hidden_bias.size()),
            MatrixX<S>::Zero(p.output_weight.rows(), p.output_weight.cols()),
            VectorX<S>::Zero(p.output_bias.size())};
  }
};

/// Accumulates d(loss)/d(params) for one image given d(loss)/d(bias).
template <class S>
void accumulate_bias_gradients(const VectorX<S>& image_feature, const BiasNetParams<S>& params,
                               const BiasForward<S>& fwd, const VectorX<S>& d_bias,
                               BiasNetGradients<S>& grads) {
  grads.output_bias += d_bias;
  grads.output_weight += fwd.hidden * d_bias.transpose();
  VectorX<S> d_hidden = params.output_weight * d_bias;
  for (Eigen::Index i = 0; i < d_hidden.size(); ++i) {
    if (fwd.pre_activation[i] <= S(0)) {
      d_hidden[i] = S(0);
    }
  }
  grads.hidden_bias += d_hidden;
  grads.hidden_weight += image_feature * d_hidden.transpose();
}

/// Trainable parameter count for the whole model: both prompt contexts plus
/// the bias network (hidden affine + output affine).
inline std::int64_t count_trainable_params(int context_length, int feature_dim, int token_dim,
                                           int hidden_width) {
  if (context_length < 1 || feature_dim < 1 || token_dim < 1 || hidden_width < 1) {
    throw ValidationError("parameter counting needs positive dimensions");
  }
  const std::int64_t contexts = 2ll * context_length * token_dim;
  const std::int64_t hidden = static_cast<std::int64_t>(feature_dim) * hidden_width + hidden_width;
  const std::int64_t output = static_cast<std::int64_t>(hidden_width) * token_dim + token_dim;
  return contexts + hidden + output;
}

/// The count in units of K rounded to one decimal, as reported in parameter
/// tables (e.g. 37408 -> 37.4).
inline double params_in_k(std::int64_t count) {
  return std::round(static_cast<double>(count) / 100.0) / 10.0;
}

}  // namespace cosmo::biasnet
