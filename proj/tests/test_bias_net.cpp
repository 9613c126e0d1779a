#include <doctest.h>

#include "cosmo/bias_net.hpp"

using namespace cosmo;
using namespace cosmo::biasnet;

namespace {

BiasNetParams<double> random_params(int d_v, int h, int d_t, std::uint64_t seed) {
  Rng rng(seed);
  BiasNetParams<double> p = init_bias_net<double>(d_v, h, d_t, rng);
  // init gives a zero output layer; make everything generic for the checks.
  for (Eigen::Index r = 0; r < p.output_weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.output_weight.cols(); ++c) {
      p.output_weight(r, c) = 0.3 * rng.gaussian();
    }
  }
  for (Eigen::Index i = 0; i < p.output_bias.size(); ++i) {
    p.output_bias[i] = 0.1 * rng.gaussian();
  }
  for (Eigen::Index i = 0; i < p.hidden_bias.size(); ++i) {
    p.hidden_bias[i] = 0.1 * rng.gaussian();
  }
  return p;
}

VectorX<double> random_unit(int n, Rng& rng) {
  VectorX<double> v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = rng.gaussian();
  }
  return v.normalized();
}

}  // namespace

TEST_CASE("zero-initialized output layer gives bias exactly zero") {
  Rng rng(3);
  const auto params = init_bias_net<double>(10, 4, 6, rng);
  Rng vr(4);
  for (int rep = 0; rep < 10; ++rep) {
    const VectorX<double> bias = compute_bias<double>(random_unit(10, vr), params);
    CHECK(bias == VectorX<double>::Zero(6));
  }
}

TEST_CASE("compute_bias is deterministic and validates dimensions") {
  const auto params = random_params(7, 4, 5, 11);
  Rng vr(0);
  const auto v = random_unit(7, vr);
  CHECK(compute_bias<double>(v, params) == compute_bias<double>(v, params));
  CHECK_THROWS_AS(compute_bias<double>(random_unit(6, vr), params), ValidationError);
}

TEST_CASE("bias gradients match central finite differences") {
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const auto params = random_params(6, 4, 5, 100 + static_cast<std::uint64_t>(rep));
    const auto v = random_unit(6, rng);
    VectorX<double> probe(5);
    for (int i = 0; i < 5; ++i) {
      probe[i] = rng.gaussian();
    }

    const auto fwd = compute_bias_cached<double>(v, params);
    auto grads = BiasNetGradients<double>::zeros_like(params);
    accumulate_bias_gradients<double>(v, params, fwd, probe, grads);

    const double h = 1e-6;
    auto probe_loss = [&](const BiasNetParams<double>& p) {
      return probe.dot(compute_bias<double>(v, p));
    };
    auto check_matrix = [&](MatrixX<double> BiasNetParams<double>::*member,
                            const MatrixX<double>& analytic) {
      const MatrixX<double>& base = params.*member;
      for (Eigen::Index r = 0; r < base.rows(); ++r) {
        for (Eigen::Index c = 0; c < base.cols(); ++c) {
          BiasNetParams<double> p = params;
          (p.*member)(r, c) = base(r, c) + h;
          const double up = probe_loss(p);
          (p.*member)(r, c) = base(r, c) - h;
          const double down = probe_loss(p);
          CHECK(relative_error(analytic(r, c), (up - down) / (2.0 * h)) < 1e-5);
        }
      }
    };
    check_matrix(&BiasNetParams<double>::hidden_weight, grads.hidden_weight);
    check_matrix(&BiasNetParams<double>::output_weight, grads.output_weight);
    for (Eigen::Index i = 0; i < params.hidden_bias.size(); ++i) {
      BiasNetParams<double> p = params;
      p.hidden_bias[i] += h;
      const double up = probe_loss(p);
      p.hidden_bias[i] = params.hidden_bias[i] - h;
      const double down = probe_loss(p);
      CHECK(relative_error(grads.hidden_bias[i], (up - down) / (2.0 * h)) < 1e-5);
    }
    for (Eigen::Index i = 0; i < params.output_bias.size(); ++i) {
      BiasNetParams<double> p = params;
      p.output_bias[i] += h;
      const double up = probe_loss(p);
      p.output_bias[i] = params.output_bias[i] - h;
      const double down = probe_loss(p);
      CHECK(relative_error(grads.output_bias[i], (up - down) / (2.0 * h)) < 1e-5);
    }
  }
}

TEST_CASE("gradients flow for generic parameters") {
  const auto params = random_params(6, 4, 5, 7);
  Rng rng(8);
  const auto v = random_unit(6, rng);
  const auto fwd = compute_bias_cached<double>(v, params);
  auto grads = BiasNetGradients<double>::zeros_like(params);
  accumulate_bias_gradients<double>(v, params, fwd, VectorX<double>::Ones(5), grads);
  CHECK(grads.hidden_weight.cwiseAbs().maxCoeff() > 0.0);
  CHECK(grads.output_weight.cwiseAbs().maxCoeff() > 0.0);
  CHECK(grads.output_bias == VectorX<double>::Ones(5));
}

TEST_CASE("bias stays bounded on unit inputs") {
  Rng rng(19);
  for (int rep = 0; rep < 50; ++rep) {
    const auto params = random_params(16, 8, 12, rng.next_u64());
    const auto bias = compute_bias<double>(random_unit(16, rng), params);
    CHECK(bias.allFinite());
    CHECK(bias.norm() < 1e3);
  }
}

TEST_CASE("trainable parameter count reproduces the published table") {
  CHECK(count_trainable_params(4, 512, 512, 32) == 37408);
  CHECK(count_trainable_params(8, 512, 512, 32) == 41504);
  CHECK(count_trainable_params(16, 512, 512, 32) == 49696);
  CHECK(params_in_k(37408) == doctest::Approx(37.4));
  CHECK(params_in_k(41504) == doctest::Approx(41.5));
  CHECK(params_in_k(49696) == doctest::Approx(49.7));
  CHECK_THROWS_AS(count_trainable_params(0, 512, 512, 32), ValidationError);
}
