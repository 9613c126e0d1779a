#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cosmo/common.hpp"
#include "cosmo/encoders.hpp"

// Adapter for published dual-encoder checkpoints converted into this
// project's on-disk layout:
//
//   <dir>/meta.json     variant, vocab_size, context_length, width, heads,
//                       layers, sot/eot token ids, tensors: name -> shape
//   <dir>/vocab.json    {"tokens": {"a</w>": 320, ...}}
//   <dir>/merges.txt    one BPE merge per line, rank order ("t h", "th e", ...)
//   <dir>/tensors/*.f32 row-major little-endian float32 blobs, torch naming:
//       token_embedding.weight            [vocab, width]
//       positional_embedding              [context_length, width]
//       resblocks.{i}.ln_1.weight/.bias   [width]
//       resblocks.{i}.attn.in_proj_weight [3*width, width] (+ in_proj_bias)
//       resblocks.{i}.attn.out_proj.weight[width, width]   (+ .bias)
//       resblocks.{i}.ln_2.weight/.bias   [width]
//       resblocks.{i}.mlp.c_fc.weight     [4*width, width] (+ .bias)
//       resblocks.{i}.mlp.c_proj.weight   [width, 4*width] (+ .bias)
//       ln_final.weight/.bias             [width]
//       text_projection                   [width, feature_dim]
//
// The image tower is consumed through precomputed features (the encoders are
// frozen, so caching is exact); this adapter validates and normalizes them.
// The text tower runs natively and is differentiable with respect to its
// input token embeddings, which is what prompt training needs.

namespace cosmo::encoders::clip {

struct ClipMeta {
  std::string variant;
  int vocab_size = 0;
  int context_length = 0;
  int width = 0;
  int heads = 0;
  int layers = 0;
  int feature_dim = 0;  // read from the text_projection shape
  int sot_token = 0;
  int eot_token = 0;
};

/// Byte-pair tokenizer over the checkpoint's vocab and merge list. Covers
/// lowercase ASCII text (class names); underscores are treated as spaces.
class BpeTokenizer {
 public:
  BpeTokenizer(std::map<std::string, int> vocab, std::vector<std::pair<std::string, std::string>> merges);

  std::vector<int> tokenize(const std::string& text) const;

 private:
  std::vector<int> tokenize_word(const std::string& word) const;

  std::map<std::string, int> vocab_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
};

BpeTokenizer load_tokenizer(const std::filesystem::path& dir);
ClipMeta load_meta(const std::filesystem::path& dir);

template <class S>
struct LayerWeights {
  VectorX<S> ln1_weight, ln1_bias;
  MatrixX<S> attn_in_weight;   // 3w x w
  VectorX<S> attn_in_bias;     // 3w
  MatrixX<S> attn_out_weight;  // w x w
  VectorX<S> attn_out_bias;    // w
  VectorX<S> ln2_weight, ln2_bias;
  MatrixX<S> fc1_weight;  // 4w x w
  VectorX<S> fc1_bias;    // 4w
  MatrixX<S> fc2_weight;  // w x 4w
  VectorX<S> fc2_bias;    // w
};

template <class S>
struct TransformerWeights {
  MatrixX<S> token_embedding;       // vocab x w
  MatrixX<S> positional_embedding;  // context_length x w
  std::vector<LayerWeights<S>> layers;
  VectorX<S> ln_final_weight, ln_final_bias;
  MatrixX<S> text_projection;  // w x feature_dim
};

template <class S>
TransformerWeights<S> load_transformer_weights(const std::filesystem::path& dir, const ClipMeta& meta);

/// Causal pre-LN transformer over [SOT, input tokens, EOT]; the EOT
/// position's final-layer output, layer-normalized and projected, is the text
/// feature (L2-normalized). Weights are frozen; encode_backward differentiates
/// with respect to the input token embeddings only.
template <class S>
class ClipTextEncoder final : public TextEncoder<S> {
 public:
  ClipTextEncoder(ClipMeta meta, TransformerWeights<S> weights)
      : meta_(std::move(meta)), w_(std::move(weights)) {}

  int token_dim() const override { return meta_.width; }
  int output_dim() const override { return meta_.feature_dim; }
  // Room must remain for the start/end markers the encoder adds itself.
  int max_sequence_length() const override { return meta_.context_length - 2; }

  VectorX<S> encode(const MatrixX<S>& tokens) const override;
  MatrixX<S> encode_backward(const MatrixX<S>& tokens, const VectorX<S>& d_output) const override;

  const ClipMeta& meta() const { return meta_; }

 private:
  struct Cache;
  VectorX<S> forward(const MatrixX<S>& tokens, Cache* cache) const;

  ClipMeta meta_;
  TransformerWeights<S> w_;
};

/// Tokenize-and-look-up embedder; one row per BPE token, multi-token names
/// keep all tokens.
template <class S>
class ClipTextEmbedder final : public TextEmbedder<S> {
 public:
  ClipTextEmbedder(std::shared_ptr<const BpeTokenizer> tokenizer,
                   std::shared_ptr<const TransformerWeights<S>> weights, int width)
      : tokenizer_(std::move(tokenizer)), weights_(std::move(weights)), width_(width) {}

  int token_dim() const override { return width_; }

  MatrixX<S> embed(const std::string& text) const override {
    const std::vector<int> ids = tokenizer_->tokenize(text);
    if (ids.empty()) {
      throw ValidationError("text tokenizes to nothing: '" + text + "'");
    }
    MatrixX<S> tokens(static_cast<Eigen::Index>(ids.size()), width_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tokens.row(static_cast<Eigen::Index>(i)) = weights_->token_embedding.row(ids[i]);
    }
    return tokens;
  }

 private:
  std::shared_ptr<const BpeTokenizer> tokenizer_;
  std::shared_ptr<const TransformerWeights<S>> weights_;
  int width_;
};

/// Image features are consumed precomputed (cache or .f32 files); this
/// adapter checks the dimension and L2-normalizes, matching the similarity
/// convention of the published checkpoints.
template <class S>
class ClipImageFeatureEncoder final : public ImageEncoder<S> {
 public:
  explicit ClipImageFeatureEncoder(int feature_dim) : feature_dim_(feature_dim) {}

  int feature_dim() const override { return feature_dim_; }

  VectorX<S> encode(const VectorX<S>& raw) const override {
    if (raw.size() != feature_dim_) {
      throw ValidationError("image feature has dimension " + std::to_string(raw.size()) +
                            ", checkpoint expects " + std::to_string(feature_dim_) +
                            "; raw images must be encoded into a feature cache first");
    }
    return l2_normalized<S>(raw);
  }

 private:
  int feature_dim_;
};

template <class S>
Backend<S> load_clip_backend(const std::filesystem::path& dir) {
  const ClipMeta meta = load_meta(dir);
  auto weights = std::make_shared<TransformerWeights<S>>(load_transformer_weights<S>(dir, meta));
  auto tokenizer = std::make_shared<BpeTokenizer>(load_tokenizer(dir));
  Backend<S> backend;
  backend.image = std::make_shared<ClipImageFeatureEncoder<S>>(meta.feature_dim);
  backend.text = std::make_shared<ClipTextEncoder<S>>(meta, *weights);
  backend.embedder = std::make_shared<ClipTextEmbedder<S>>(tokenizer, weights, meta.width);
  return backend;
}

// ---------------------------------------------------------------------------
// Transformer implementation
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kLnEps = 1e-5;

template <class S>
struct LnCache {
  MatrixX<S> normalized;   // x-hat rows
  VectorX<S> inv_sigma;    // per row
};

/// Per-row layer norm; fills the cache when provided.
template <class S>
MatrixX<S> layer_norm(const MatrixX<S>& x, const VectorX<S>& gain, const VectorX<S>& bias,
                      LnCache<S>* cache) {
  MatrixX<S> out(x.rows(), x.cols());
  MatrixX<S> normalized(x.rows(), x.cols());
  VectorX<S> inv_sigma(x.rows());
  const S inv_n = S(1) / static_cast<S>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mu = x.row(r).mean();
    const S var = (x.row(r).array() - mu).square().sum() * inv_n;
    const S inv = S(1) / std::sqrt(var + S(kLnEps));
    normalized.row(r) = (x.row(r).array() - mu) * inv;
    out.row(r) = normalized.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
    inv_sigma[r] = inv;
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_sigma = std::move(inv_sigma);
  }
  return out;
}

template <class S>
MatrixX<S> layer_norm_backward(const MatrixX<S>& d_out, const VectorX<S>& gain,
                               const LnCache<S>& cache) {
  MatrixX<S> dx(d_out.rows(), d_out.cols());
  const S inv_n = S(1) / static_cast<S>(d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    const auto d_hat = d_out.row(r).cwiseProduct(gain.transpose());
    const S mean_d = d_hat.sum() * inv_n;
    const S mean_dx = d_hat.cwiseProduct(cache.normalized.row(r)).sum() * inv_n;
    dx.row(r) =
        cache.inv_sigma[r] *
        (d_hat.array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

template <class S>
S quick_gelu(S x) {
  return x / (S(1) + std::exp(S(-1.702) * x));
}

template <class S>
S quick_gelu_grad(S x) {
  const S sig = S(1) / (S(1) + std::exp(S(-1.702) * x));
  return sig + S(1.702) * x * sig * (S(1) - sig);
}

}  // namespace detail

template <class S>
struct ClipTextEncoder<S>::Cache {
  struct Layer {
    MatrixX<S> block_in;  // residual stream entering the block
    detail::LnCache<S> ln1;
    MatrixX<S> q, k, v;                // n x w, head-interleaved columns
    std::vector<MatrixX<S>> attn_probs;  // per head, n x n (causal rows)
    MatrixX<S> attn_concat;            // n x w
    MatrixX<S> mid;                    // after attention residual
    detail::LnCache<S> ln2;
    MatrixX<S> fc1_pre;  // n x 4w, pre-activation
  };
  MatrixX<S> input;  // embedded [sot; tokens; eot] + positional
  std::vector<Layer> layers;
  MatrixX<S> final_in;  // residual stream after the last block
  detail::LnCache<S> ln_final;
  VectorX<S> projected;  // before normalization
};

template <class S>
VectorX<S> ClipTextEncoder<S>::forward(const MatrixX<S>& tokens, Cache* cache) const {
  if (tokens.cols() != meta_.width) {
    throw ValidationError("token dimension " + std::to_string(tokens.cols()) +
                          " does not match checkpoint width " + std::to_string(meta_.width));
  }
  const Eigen::Index n = tokens.rows() + 2;
  if (n > meta_.context_length) {
    throw ValidationError("prompt of " + std::to_string(tokens.rows()) +
                          " tokens plus start/end markers exceeds the checkpoint context length " +
                          std::to_string(meta_.context_length));
  }
  const int heads = meta_.heads;
  const Eigen::Index w = meta_.width;
  const Eigen::Index head_dim = w / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));

  MatrixX<S> x(n, w);
  x.row(0) = w_.token_embedding.row(meta_.sot_token);
  x.middleRows(1, tokens.rows()) = tokens;
  x.row(n - 1) = w_.token_embedding.row(meta_.eot_token);
  x += w_.positional_embedding.topRows(n);
  if (cache != nullptr) {
    cache->input = x;
    cache->layers.resize(w_.layers.size());
  }

  for (std::size_t l = 0; l < w_.layers.size(); ++l) {
    const auto& lw = w_.layers[l];
    typename Cache::Layer* lc = cache != nullptr ? &cache->layers[l] : nullptr;
    if (lc != nullptr) {
      lc->block_in = x;
    }

    const MatrixX<S> a =
        detail::layer_norm<S>(x, lw.ln1_weight, lw.ln1_bias, lc != nullptr ? &lc->ln1 : nullptr);
    // Packed qkv projection; torch keeps weight as (out, in).
    MatrixX<S> q = a * lw.attn_in_weight.topRows(w).transpose();
    MatrixX<S> k = a * lw.attn_in_weight.middleRows(w, w).transpose();
    MatrixX<S> v = a * lw.attn_in_weight.bottomRows(w).transpose();
    q.rowwise() += lw.attn_in_bias.segment(0, w).transpose();
    k.rowwise() += lw.attn_in_bias.segment(w, w).transpose();
    v.rowwise() += lw.attn_in_bias.segment(2 * w, w).transpose();

    MatrixX<S> concat(n, w);
    std::vector<MatrixX<S>> probs(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * head_dim, head_dim);
      const auto kh = k.middleCols(h * head_dim, head_dim);
      const auto vh = v.middleCols(h * head_dim, head_dim);
      MatrixX<S> p = MatrixX<S>::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        // Causal mask: position i attends to positions <= i.
        VectorX<S> scores = (kh.topRows(i + 1) * qh.row(i).transpose()) * scale;
        const S max_score = scores.maxCoeff();
        VectorX<S> e = (scores.array() - max_score).exp();
        p.row(i).head(i + 1) = (e / e.sum()).transpose();
      }
      concat.middleCols(h * head_dim, head_dim) = p * vh;
      probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    MatrixX<S> attn_out = concat * lw.attn_out_weight.transpose();
    attn_out.rowwise() += lw.attn_out_bias.transpose();
    if (lc != nullptr) {
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->attn_probs = std::move(probs);
      lc->attn_concat = concat;
    }
    x += attn_out;
    if (lc != nullptr) {
      lc->mid = x;
    }

    const MatrixX<S> b =
        detail::layer_norm<S>(x, lw.ln2_weight, lw.ln2_bias, lc != nullptr ? &lc->ln2 : nullptr);
    MatrixX<S> h1 = b * lw.fc1_weight.transpose();
    h1.rowwise() += lw.fc1_bias.transpose();
    if (lc != nullptr) {
      lc->fc1_pre = h1;
    }
    MatrixX<S> g = h1.unaryExpr([](S t) { return detail::quick_gelu(t); });
    MatrixX<S> mlp_out = g * lw.fc2_weight.transpose();
    mlp_out.rowwise() += lw.fc2_bias.transpose();
    x += mlp_out;
  }

  if (cache != nullptr) {
    cache->final_in = x;
  }
  const MatrixX<S> last = detail::layer_norm<S>(
      MatrixX<S>(x.row(n - 1)), w_.ln_final_weight, w_.ln_final_bias,
      cache != nullptr ? &cache->ln_final : nullptr);
  VectorX<S> projected = w_.text_projection.transpose() * last.row(0).transpose();
  if (cache != nullptr) {
    cache->projected = projected;
  }
  return l2_normalized<S>(projected);
}

template <class S>
VectorX<S> ClipTextEncoder<S>::encode(const MatrixX<S>& tokens) const {
  return forward(tokens, nullptr);
}

template <class S>
MatrixX<S> ClipTextEncoder<S>::encode_backward(const MatrixX<S>& tokens,
                                               const VectorX<S>& d_output) const {
  Cache cache;
  forward(tokens, &cache);

  const Eigen::Index n = tokens.rows() + 2;
  const int heads = meta_.heads;
  const Eigen::Index w = meta_.width;
  const Eigen::Index head_dim = w / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));

  // Through normalization and projection into the final residual stream.
  const S norm = cache.projected.norm();
  const VectorX<S> unit = cache.projected / norm;
  const VectorX<S> d_projected = (d_output - unit * unit.dot(d_output)) / norm;
  const MatrixX<S> d_last_row = (w_.text_projection * d_projected).transpose();
  const MatrixX<S> d_last = detail::layer_norm_backward<S>(d_last_row, w_.ln_final_weight,
                                                           cache.ln_final);
  MatrixX<S> dx = MatrixX<S>::Zero(n, w);
  dx.row(n - 1) = d_last.row(0);

  for (std::size_t li = w_.layers.size(); li-- > 0;) {
    const auto& lw = w_.layers[li];
    const auto& lc = cache.layers[li];

    // MLP sub-block.
    const MatrixX<S> d_mlp_out = dx;
    const MatrixX<S> d_g = d_mlp_out * lw.fc2_weight;
    MatrixX<S> d_h1 =
        d_g.cwiseProduct(lc.fc1_pre.unaryExpr([](S t) { return detail::quick_gelu_grad(t); }));
    const MatrixX<S> d_b = d_h1 * lw.fc1_weight;
    dx += detail::layer_norm_backward<S>(d_b, lw.ln2_weight, lc.ln2);

    // Attention sub-block.
    const MatrixX<S> d_attn_out = dx;
    const MatrixX<S> d_concat = d_attn_out * lw.attn_out_weight;
    MatrixX<S> d_q = MatrixX<S>::Zero(n, w);
    MatrixX<S> d_k = MatrixX<S>::Zero(n, w);
    MatrixX<S> d_v = MatrixX<S>::Zero(n, w);
    for (int h = 0; h < heads; ++h) {
      const auto& p = lc.attn_probs[static_cast<std::size_t>(h)];
      const auto kh = lc.k.middleCols(h * head_dim, head_dim);
      const auto qh = lc.q.middleCols(h * head_dim, head_dim);
      const auto vh = lc.v.middleCols(h * head_dim, head_dim);
      const auto d_oh = d_concat.middleCols(h * head_dim, head_dim);

      d_v.middleCols(h * head_dim, head_dim) += p.transpose() * d_oh;
      const MatrixX<S> d_p = d_oh * vh.transpose();
      MatrixX<S> d_scores = MatrixX<S>::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto pi = p.row(i).head(i + 1);
        const auto dpi = d_p.row(i).head(i + 1);
        const S dot = pi.cwiseProduct(dpi).sum();
        d_scores.row(i).head(i + 1) = pi.cwiseProduct(dpi.array().operator-(dot).matrix());
      }
      d_q.middleCols(h * head_dim, head_dim) += (d_scores * kh) * scale;
      d_k.middleCols(h * head_dim, head_dim) += (d_scores.transpose() * qh) * scale;
    }
    const MatrixX<S> d_a = d_q * lw.attn_in_weight.topRows(w) +
                           d_k * lw.attn_in_weight.middleRows(w, w) +
                           d_v * lw.attn_in_weight.bottomRows(w);
    dx += detail::layer_norm_backward<S>(d_a, lw.ln1_weight, lc.ln1);
  }

  // SOT/EOT/positional rows are frozen constants; only the caller's token
  // rows flow gradients out.
  return dx.middleRows(1, tokens.rows());
}

}  // namespace cosmo::encoders::clip
