#include <doctest.h>

#include "cosmo/encoders.hpp"

using namespace cosmo;
using namespace cosmo::encoders;

namespace {

template <class S>
MatrixX<S> random_tokens(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatrixX<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = static_cast<S>(rng.gaussian());
    }
  }
  return m;
}

/// Central-difference check of encode_backward against the scalar probe
/// g(tokens) = w . encode(tokens). Returns the worst relative error.
double gradient_check_text_encoder(const TextEncoder<double>& encoder, const MatrixX<double>& tokens,
                                   Rng& rng) {
  VectorX<double> probe(encoder.output_dim());
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    probe[i] = rng.gaussian();
  }
  const MatrixX<double> analytic = encoder.encode_backward(tokens, probe);
  const double h = 1e-6;
  double worst = 0.0;
  MatrixX<double> x = tokens;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double orig = x(r, c);
      x(r, c) = orig + h;
      const double up = probe.dot(encoder.encode(x));
      x(r, c) = orig - h;
      const double down = probe.dot(encoder.encode(x));
      x(r, c) = orig;
      worst = std::max(worst, relative_error(analytic(r, c), (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("toy backend is deterministic per seed") {
  const auto a = make_toy_backend<double>(12, 8, 77);
  const auto b = make_toy_backend<double>(12, 8, 77);
  Rng rng(1);
  const MatrixX<double> tokens = random_tokens<double>(5, 8, rng);
  CHECK(a.text->encode(tokens) == b.text->encode(tokens));
  CHECK(a.embedder->embed("bike") == b.embedder->embed("bike"));

  const auto c = make_toy_backend<double>(12, 8, 78);
  CHECK(a.text->encode(tokens) != c.text->encode(tokens));
}

TEST_CASE("toy text encoder outputs unit vectors") {
  const auto backend = make_toy_backend<double>(16, 10, 3);
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const auto tokens = random_tokens<double>(1 + static_cast<Eigen::Index>(rng.uniform_below(7)),
                                              10, rng);
    const auto tau = backend.text->encode(tokens);
    CHECK(std::abs(tau.norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("toy image encoder normalizes and validates dimensions") {
  const auto backend = make_toy_backend<float>(6, 6, 0);
  VectorF raw(6);
  raw << 3, 0, 0, 4, 0, 0;
  const VectorF v = backend.image->encode(raw);
  CHECK(std::abs(v.norm() - 1.0f) < 1e-6f);
  CHECK(v[0] == doctest::Approx(0.6f));
  CHECK_THROWS_AS(backend.image->encode(VectorF::Ones(5)), ValidationError);
  CHECK_THROWS_AS(backend.image->encode(VectorF::Zero(6)), ValidationError);
}

TEST_CASE("toy text encoder gradient matches finite differences") {
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const auto backend = make_toy_backend<double>(9, 7, 100 + static_cast<std::uint64_t>(rep));
    const auto tokens = random_tokens<double>(4, 7, rng);
    CHECK(gradient_check_text_encoder(*backend.text, tokens, rng) < 1e-5);
  }
}

TEST_CASE("perturbing one context token changes the text feature") {
  const auto backend = make_toy_backend<double>(9, 7, 5);
  Rng rng(6);
  MatrixX<double> tokens = random_tokens<double>(4, 7, rng);
  const auto before = backend.text->encode(tokens);
  tokens(2, 3) += 0.1;
  const auto after = backend.text->encode(tokens);
  CHECK((before - after).norm() > 1e-6);
}

TEST_CASE("token bank entries depend on the word, not on construction order") {
  const auto backend = make_toy_backend<double>(8, 8, 42);
  const LabelSpace forward = build_label_space({"apple", "bottle", "chair"});
  const LabelSpace reversed = build_label_space({"chair", "bottle", "apple"});
  const auto bank_fwd = build_token_bank<double>(*backend.embedder, forward);
  const auto bank_rev = build_token_bank<double>(*backend.embedder, reversed);
  CHECK(bank_fwd.class_token_sequences[0] == bank_rev.class_token_sequences[2]);
  CHECK(bank_fwd.class_token_sequences[1] == bank_rev.class_token_sequences[1]);
  CHECK(bank_fwd.unk_token_sequence == bank_rev.unk_token_sequence);
  CHECK(bank_fwd.class_token_sequences[0] != bank_fwd.class_token_sequences[1]);
}

TEST_CASE("toy embedder splits words and rejects empty text") {
  const auto backend = make_toy_backend<double>(8, 8, 42);
  CHECK(backend.embedder->embed("desk lamp").rows() == 2);
  CHECK(backend.embedder->embed("bike").rows() == 1);
  CHECK(backend.embedder->embed("unknown.").rows() == 1);
  CHECK_THROWS_AS(backend.embedder->embed("   "), ValidationError);
  const auto tokens = backend.embedder->embed("desk lamp");
  CHECK(std::abs(tokens.row(0).norm() - 1.0) < 1e-9);
}

TEST_CASE("toy text encoder enforces the maximum sequence length") {
  const auto backend = make_toy_backend<double>(8, 8, 1);
  Rng rng(0);
  CHECK_NOTHROW(backend.text->encode(random_tokens<double>(77, 8, rng)));
  CHECK_THROWS_AS(backend.text->encode(random_tokens<double>(78, 8, rng)), ValidationError);
  CHECK_THROWS_AS(backend.text->encode(random_tokens<double>(3, 9, rng)), ValidationError);
}

TEST_CASE("toy backend rejects degenerate dimensions") {
  CHECK_THROWS_AS(make_toy_backend<float>(1, 8, 0), ValidationError);
  CHECK_THROWS_AS(make_toy_backend<float>(8, 1, 0), ValidationError);
}
