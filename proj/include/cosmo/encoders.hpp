#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cosmo/common.hpp"
#include "cosmo/core.hpp"

namespace cosmo::encoders {

/// Frozen image encoder: raw input feature -> L2-normalized feature vector.
/// Parameters never receive gradients; identical input gives identical output.
template <class S>
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual int feature_dim() const = 0;
  virtual VectorX<S> encode(const VectorX<S>& raw) const = 0;
};

/// Frozen text encoder: token-embedding sequence (rows are tokens) -> unit
/// feature vector. Frozen weights, but differentiable with respect to the
/// input embeddings; encode_backward returns d(loss)/d(tokens) given
/// d(loss)/d(output).
template <class S>
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int token_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual int max_sequence_length() const = 0;
  virtual VectorX<S> encode(const MatrixX<S>& tokens) const = 0;
  virtual MatrixX<S> encode_backward(const MatrixX<S>& tokens, const VectorX<S>& d_output) const = 0;
};

/// Frozen text-to-token-embedding lookup used to build class token banks and
/// fixed template prompts.
template <class S>
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual int token_dim() const = 0;
  virtual MatrixX<S> embed(const std::string& text) const = 0;
};

/// Frozen per-class token sequences plus the sequence for the word
/// "unknown.". Contents are constants for the lifetime of a run.
template <class S>
struct TokenBank {
  std::vector<std::string> class_names;             // LabelSpace order
  std::vector<MatrixX<S>> class_token_sequences;    // per class, k_c x d_t
  MatrixX<S> unk_token_sequence;

  std::uint64_t constants_checksum() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& seq : class_token_sequences) {
      h ^= checksum(seq);
      h *= kFnvPrime;
    }
    h ^= checksum(unk_token_sequence);
    return h;
  }
};

template <class S>
TokenBank<S> build_token_bank(const TextEmbedder<S>& embedder, const LabelSpace& labels) {
  TokenBank<S> bank;
  bank.class_names = labels.known_classes;
  bank.class_token_sequences.reserve(labels.known_classes.size());
  for (const auto& name : labels.known_classes) {
    bank.class_token_sequences.push_back(embedder.embed(name));
  }
  bank.unk_token_sequence = embedder.embed("unknown.");
  return bank;
}

template <class S>
struct Backend {
  std::shared_ptr<const ImageEncoder<S>> image;
  std::shared_ptr<const TextEncoder<S>> text;
  std::shared_ptr<const TextEmbedder<S>> embedder;
};

// ---------------------------------------------------------------------------
// Toy backend: a deterministic, differentiable stand-in used by the test
// suite and smoke runs. Images are already feature vectors; the text encoder
// is a fixed seeded linear map over the mean-pooled token sequence.
// ---------------------------------------------------------------------------

template <class S>
class ToyImageEncoder final : public ImageEncoder<S> {
 public:
  explicit ToyImageEncoder(int feature_dim) : feature_dim_(feature_dim) {}

  int feature_dim() const override { return feature_dim_; }

  VectorX<S> encode(const VectorX<S>& raw) const override {
    if (raw.size() != feature_dim_) {
      throw ValidationError("image feature has dimension " + std::to_string(raw.size()) +
                            ", encoder expects " + std::to_string(feature_dim_));
    }
    return l2_normalized<S>(raw);
  }

 private:
  int feature_dim_;
};

template <class S>
class ToyTextEncoder final : public TextEncoder<S> {
 public:
  ToyTextEncoder(int feature_dim, int token_dim, std::uint64_t seed, int max_sequence_length = 77)
      : map_(feature_dim, token_dim), max_len_(max_sequence_length) {
    Rng rng = Rng(seed).fork("toy-text-encoder");
    const double scale = 1.0 / std::sqrt(static_cast<double>(token_dim));
    for (Eigen::Index r = 0; r < map_.rows(); ++r) {
      for (Eigen::Index c = 0; c < map_.cols(); ++c) {
        map_(r, c) = static_cast<S>(scale * rng.gaussian());
      }
    }
  }

  int token_dim() const override { return static_cast<int>(map_.cols()); }
  int output_dim() const override { return static_cast<int>(map_.rows()); }
  int max_sequence_length() const override { return max_len_; }

  VectorX<S> encode(const MatrixX<S>& tokens) const override {
    check_tokens(tokens);
    const VectorX<S> pooled = tokens.colwise().mean().transpose();
    return l2_normalized<S>(VectorX<S>(map_ * pooled));
  }

  MatrixX<S> encode_backward(const MatrixX<S>& tokens, const VectorX<S>& d_output) const override {
    check_tokens(tokens);
    const VectorX<S> pooled = tokens.colwise().mean().transpose();
    const VectorX<S> z = map_ * pooled;
    const S norm = z.norm();
    const VectorX<S> unit = z / norm;
    // d(z/|z|) = (I - uu^T)/|z|
    const VectorX<S> dz = (d_output - unit * unit.dot(d_output)) / norm;
    const VectorX<S> d_pooled = map_.transpose() * dz;
    MatrixX<S> d_tokens(tokens.rows(), tokens.cols());
    const S inv_len = S(1) / static_cast<S>(tokens.rows());
    for (Eigen::Index r = 0; r < tokens.rows(); ++r) {
      d_tokens.row(r) = (d_pooled * inv_len).transpose();
    }
    return d_tokens;
  }

  const MatrixX<S>& projection() const { return map_; }
  std::uint64_t constants_checksum() const { return checksum(map_); }

 private:
  void check_tokens(const MatrixX<S>& tokens) const {
    if (tokens.rows() < 1) {
      throw ValidationError("text encoder needs at least one token");
    }
    if (tokens.rows() > max_len_) {
      throw ValidationError("token sequence length " + std::to_string(tokens.rows()) +
                            " exceeds the encoder maximum " + std::to_string(max_len_));
    }
    if (tokens.cols() != map_.cols()) {
      throw ValidationError("token dimension " + std::to_string(tokens.cols()) +
                            " does not match encoder token dimension " +
                            std::to_string(map_.cols()));
    }
  }

  MatrixX<S> map_;  // output_dim x token_dim
  int max_len_;
};

/// One token per whitespace-separated word; each word maps to a fixed unit
/// vector keyed by (seed, word), so a word's embedding is independent of the
/// order in which words are first seen.
template <class S>
class ToyTextEmbedder final : public TextEmbedder<S> {
 public:
  ToyTextEmbedder(int token_dim, std::uint64_t seed) : token_dim_(token_dim), seed_(seed) {}

  int token_dim() const override { return token_dim_; }

  MatrixX<S> embed(const std::string& text) const override {
    std::istringstream stream(text);
    std::vector<std::string> words;
    std::string word;
    while (stream >> word) {
      words.push_back(word);
    }
    if (words.empty()) {
      throw ValidationError("cannot embed empty text");
    }
    MatrixX<S> tokens(static_cast<Eigen::Index>(words.size()), token_dim_);
    for (std::size_t w = 0; w < words.size(); ++w) {
      Rng rng = Rng(seed_).fork("toy-token-" + words[w]);
      VectorX<S> v(token_dim_);
      for (int i = 0; i < token_dim_; ++i) {
        v[i] = static_cast<S>(rng.gaussian());
      }
      tokens.row(static_cast<Eigen::Index>(w)) = l2_normalized<S>(v).transpose();
    }
    return tokens;
  }

 private:
  int token_dim_;
  std::uint64_t seed_;
};

template <class S>
Backend<S> make_toy_backend(int feature_dim, int token_dim, std::uint64_t seed) {
  if (feature_dim < 2 || token_dim < 2) {
    throw ValidationError("toy backend dimensions must be >= 2");
  }
  Backend<S> backend;
  backend.image = std::make_shared<ToyImageEncoder<S>>(feature_dim);
  backend.text = std::make_shared<ToyTextEncoder<S>>(feature_dim, token_dim, seed);
  backend.embedder = std::make_shared<ToyTextEmbedder<S>>(token_dim, seed);
  return backend;
}

}  // namespace cosmo::encoders
