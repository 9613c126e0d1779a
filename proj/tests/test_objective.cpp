#include <cmath>
#include <vector>

#include <doctest.h>

#include "cosmo/objective.hpp"

using namespace cosmo;
using namespace cosmo::objective;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles. These re-derive the expected values from scratch and
// never call into the implementation path they check.
// ---------------------------------------------------------------------------

VectorX<double> softmax_oracle(const VectorX<double>& similarities, double eta) {
  long double denom = 0.0L;
  std::vector<long double> exps(static_cast<std::size_t>(similarities.size()));
  for (Eigen::Index i = 0; i < similarities.size(); ++i) {
    exps[static_cast<std::size_t>(i)] = expl(static_cast<long double>(similarities[i]) / eta);
    denom += exps[static_cast<std::size_t>(i)];
  }
  VectorX<double> probs(similarities.size());
  for (Eigen::Index i = 0; i < similarities.size(); ++i) {
    probs[i] = static_cast<double>(exps[static_cast<std::size_t>(i)] / denom);
  }
  return probs;
}

double entropy_oracle(const VectorX<double>& probs) {
  long double h = 0.0L;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) {
      h -= static_cast<long double>(probs[i]) * logl(static_cast<long double>(probs[i]));
    }
  }
  return static_cast<double>(h);
}

/// Cross-entropy and entropy terms computed separately, then combined.
double two_term_loss_oracle(const std::vector<VectorX<double>>& probs,
                            const std::vector<int>& targets, double lambda) {
  long double ce = 0.0L;
  long double ent = 0.0L;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    ce -= logl(static_cast<long double>(probs[i][targets[i]]));
    ent += static_cast<long double>(entropy_oracle(probs[i]));
  }
  const auto n = static_cast<long double>(probs.size());
  return static_cast<double>(ce / n + lambda * ent / n);
}

enum class OracleOutcome { kKnown, kUnknown, kDiscard };

/// Straight-line restatement of the threshold rules.
OracleOutcome rule_oracle(const VectorX<double>& probs, double kl, double ku, double kk,
                          int* known_index = nullptr) {
  const int num_known = static_cast<int>(probs.size()) - 1;
  bool every_known_below = true;
  for (int c = 0; c < num_known; ++c) {
    if (probs[c] >= kl) {
      every_known_below = false;
    }
  }
  const bool unknown_confident = probs[num_known] >= ku;
  if (every_known_below || unknown_confident) {
    return OracleOutcome::kUnknown;
  }
  int best = 0;
  for (int c = 1; c < num_known; ++c) {
    if (probs[c] > probs[best]) {
      best = c;
    }
  }
  if (probs[best] >= kk) {
    if (known_index != nullptr) {
      *known_index = best;
    }
    return OracleOutcome::kKnown;
  }
  return OracleOutcome::kDiscard;
}

VectorX<double> random_unit(int n, Rng& rng) {
  VectorX<double> v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = rng.gaussian();
  }
  return v.normalized();
}

MatrixX<double> random_unit_rows(int rows, int cols, Rng& rng) {
  MatrixX<double> m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    m.row(r) = random_unit(cols, rng).transpose();
  }
  return m;
}

ProbVector<double> prob_vector(std::initializer_list<double> values) {
  ProbVector<double> p;
  p.probs.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) {
    p.probs[i++] = v;
  }
  p.temperature = 1.0;
  return p;
}

/// All probability vectors on the 4-slot simplex at resolution 0.05.
std::vector<ProbVector<double>> simplex_grid_4() {
  std::vector<ProbVector<double>> grid;
  const int steps = 20;
  for (int a = 0; a <= steps; ++a) {
    for (int b = 0; b + a <= steps; ++b) {
      for (int c = 0; c + b + a <= steps; ++c) {
        const int d = steps - a - b - c;
        grid.push_back(prob_vector({a * 0.05, b * 0.05, c * 0.05, d * 0.05}));
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Model fixture over the toy backend (double precision).
// ---------------------------------------------------------------------------

struct Fixture {
  encoders::Backend<double> backend;
  LabelSpace labels;
  encoders::TokenBank<double> bank;
  prompts::PromptState<double> prompt_state;
  biasnet::BiasNetParams<double> bias_params;

  explicit Fixture(std::uint64_t seed, int feature_dim = 9, int token_dim = 7, int context = 3,
                   int hidden = 4)
      : backend(encoders::make_toy_backend<double>(feature_dim, token_dim, seed)),
        labels(build_label_space({"ant", "bee", "cat"})),
        bank(encoders::build_token_bank<double>(*backend.embedder, labels)) {
    Rng rng(seed ^ 0xabcdef);
    prompt_state = prompts::init_prompt_state<double>(context, token_dim, rng);
    bias_params = biasnet::init_bias_net<double>(feature_dim, hidden, token_dim, rng);
    // Generic (non-zero) output layer so bias gradients are exercised.
    Rng wr = rng.fork("wout");
    for (Eigen::Index r = 0; r < bias_params.output_weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < bias_params.output_weight.cols(); ++c) {
        bias_params.output_weight(r, c) = 0.2 * wr.gaussian();
      }
    }
    for (Eigen::Index i = 0; i < bias_params.output_bias.size(); ++i) {
      bias_params.output_bias[i] = 0.05 * wr.gaussian();
    }
  }

  Model<double> model(double temperature = 0.05) const {
    Model<double> m;
    m.image_encoder = backend.image.get();
    m.text_encoder = backend.text.get();
    m.bank = &bank;
    m.prompt_state = &prompt_state;
    m.bias_params = &bias_params;
    m.temperature = temperature;
    return m;
  }
};

double source_loss_value(const Model<double>& model, const MatrixX<double>& features,
                         const std::vector<int>& labels, double lambda) {
  const auto probs = forward_batch_probabilities<double>(model, features);
  return source_loss<double>(probs, labels, lambda);
}

double target_loss_value(const Model<double>& model, const MatrixX<double>& features,
                         const std::vector<PseudoLabelDecision>& decisions, double lambda) {
  const auto probs = forward_batch_probabilities<double>(model, features);
  return target_loss<double>(probs, decisions, lambda).value;
}

/// rtol 1e-4 with a small absolute floor for entries at the finite-difference
/// noise level.
bool grad_close(double analytic, double fd) {
  return std::abs(analytic - fd) <= 1e-9 + 1e-4 * std::max(std::abs(analytic), std::abs(fd));
}

}  // namespace

TEST_CASE("class_probabilities: symmetry, normalization, and the softmax oracle") {
  Rng rng(31);

  // All similarities equal with |C_k|=10: every slot gets exactly 1/11.
  const VectorX<double> v = VectorX<double>::Unit(4, 0);
  MatrixX<double> same_rows(11, 4);
  for (int r = 0; r < 11; ++r) {
    same_rows.row(r) = VectorX<double>::Unit(4, 1).transpose();
  }
  const auto uniform = class_probabilities<double>(v, same_rows, 0.01);
  for (Eigen::Index i = 0; i < 11; ++i) {
    CHECK(uniform.probs[i] == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
  }
  CHECK(std::abs(uniform.probs.sum() - 1.0) < 1e-6);

  // Random unit inputs match the independent oracle to 1e-10 at eta=0.01.
  for (int rep = 0; rep < 50; ++rep) {
    const auto vi = random_unit(6, rng);
    const auto rows = random_unit_rows(5, 6, rng);
    const auto p = class_probabilities<double>(vi, rows, 0.01);
    const auto expected = softmax_oracle(rows * vi, 0.01);
    CHECK((p.probs - expected).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(p.probs.sum() - 1.0) < 1e-6);
    CHECK(p.probs.minCoeff() >= 0.0);
  }
}

TEST_CASE("class_probabilities: argmax is invariant under temperature rescaling") {
  Rng rng(32);
  for (int rep = 0; rep < 30; ++rep) {
    const auto v = random_unit(8, rng);
    const auto rows = random_unit_rows(7, 8, rng);
    Eigen::Index argmax_small, argmax_large;
    class_probabilities<double>(v, rows, 1e-3).probs.maxCoeff(&argmax_small);
    class_probabilities<double>(v, rows, 10.0).probs.maxCoeff(&argmax_large);
    CHECK(argmax_small == argmax_large);
    // Small temperature concentrates the mass on the argmax.
    CHECK(class_probabilities<double>(v, rows, 1e-3).probs[argmax_small] > 0.999);
  }
}

TEST_CASE("class_probabilities rejects non-normalized inputs") {
  Rng rng(1);
  const VectorX<double> v = VectorX<double>::Unit(4, 0);
  MatrixX<double> rows = random_unit_rows(3, 4, rng);
  CHECK_THROWS_AS(class_probabilities<double>(2.0 * v, rows, 0.01), ValidationError);
  CHECK_THROWS_AS(class_probabilities<double>(v, rows, 0.0), ValidationError);
  rows.row(1) *= 1.01;
  CHECK_THROWS_AS(class_probabilities<double>(v, rows, 0.01), ValidationError);
}

TEST_CASE("entropy closed-form cases") {
  ProbVector<double> uniform11;
  uniform11.probs = VectorX<double>::Constant(11, 1.0 / 11.0);
  CHECK(std::abs(entropy(uniform11) - std::log(11.0)) < 1e-9);

  CHECK(entropy(prob_vector({1.0, 0.0, 0.0})) == 0.0);
  CHECK(entropy(prob_vector({0.5, 0.5, 0.0, 0.0})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("source_loss: trivial cases and the two-term oracle") {
  // Perfect one-hot prediction on the true class: both terms vanish.
  std::vector<ProbVector<double>> perfect = {prob_vector({1.0, 0.0, 0.0, 0.0})};
  std::vector<int> label0 = {0};
  CHECK(source_loss<double>(perfect, label0, 7.3) == 0.0);

  // lambda = 0 reduces to plain cross-entropy.
  std::vector<ProbVector<double>> p = {prob_vector({0.7, 0.2, 0.05, 0.05}),
                                       prob_vector({0.1, 0.6, 0.1, 0.2})};
  std::vector<int> labels = {0, 1};
  CHECK(source_loss<double>(p, labels, 0.0) ==
        doctest::Approx(-(std::log(0.7) + std::log(0.6)) / 2.0).epsilon(1e-12));

  // Random batches match the independently computed two-term oracle.
  Rng rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<ProbVector<double>> batch;
    std::vector<VectorX<double>> raw;
    std::vector<int> y;
    for (int i = 0; i < 5; ++i) {
      VectorX<double> probs(4);
      double total = 0.0;
      for (int k = 0; k < 4; ++k) {
        probs[k] = 0.05 + rng.uniform();
        total += probs[k];
      }
      probs /= total;
      ProbVector<double> pv;
      pv.probs = probs;
      pv.temperature = 0.01;
      batch.push_back(pv);
      raw.push_back(probs);
      y.push_back(static_cast<int>(rng.uniform_below(3)));
    }
    const double lambda = rng.uniform();
    CHECK(std::abs(source_loss<double>(batch, y, lambda) - two_term_loss_oracle(raw, y, lambda)) <
          1e-10);
  }

  // Labels must be known-class indices.
  CHECK_THROWS_AS(source_loss<double>(p, std::vector<int>{0, 3}, 1.0), ValidationError);
}

TEST_CASE("assign_pseudo_labels: stated rule examples") {
  // Both unknown rules fire.
  auto d1 = assign_pseudo_labels<double>(
      std::vector<ProbVector<double>>{prob_vector({0.05, 0.10, 0.20, 0.65})}, 0.25, 0.6, 0.6);
  CHECK(d1[0].outcome == PseudoLabelOutcome::kUnknown);

  // Confident known class.
  auto d2 = assign_pseudo_labels<double>(
      std::vector<ProbVector<double>>{prob_vector({0.70, 0.10, 0.05, 0.15})}, 0.25, 0.6, 0.6);
  CHECK(d2[0].outcome == PseudoLabelOutcome::kKnown);
  CHECK(d2[0].class_index == 0);
  CHECK(d2[0].confidence == doctest::Approx(0.70));

  // Neither rule nor the confidence floor: discarded.
  auto d3 = assign_pseudo_labels<double>(
      std::vector<ProbVector<double>>{prob_vector({0.45, 0.25, 0.10, 0.20})}, 0.25, 0.6, 0.6);
  CHECK(d3[0].outcome == PseudoLabelOutcome::kDiscard);
}

TEST_CASE("assign_pseudo_labels matches the brute-force oracle on the full simplex grid") {
  const auto grid = simplex_grid_4();
  REQUIRE(grid.size() == 1771);  // C(23,3) compositions of 20 into 4 parts
  const double kl = 0.4, ku = 0.6, kk = 0.6;
  const auto decisions = assign_pseudo_labels<double>(grid, kl, ku, kk);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    int oracle_known = -1;
    const auto expected = rule_oracle(grid[i].probs, kl, ku, kk, &oracle_known);
    switch (expected) {
      case OracleOutcome::kUnknown:
        CHECK(decisions[i].outcome == PseudoLabelOutcome::kUnknown);
        break;
      case OracleOutcome::kKnown:
        CHECK(decisions[i].outcome == PseudoLabelOutcome::kKnown);
        CHECK(decisions[i].class_index == oracle_known);
        break;
      case OracleOutcome::kDiscard:
        CHECK(decisions[i].outcome == PseudoLabelOutcome::kDiscard);
        break;
    }
  }
}

TEST_CASE("pseudo-label monotonicity in the thresholds") {
  const auto grid = simplex_grid_4();
  auto count_unknown = [&grid](double kl) {
    const auto d = assign_pseudo_labels<double>(grid, kl, 0.6, 0.6);
    return std::count_if(d.begin(), d.end(), [](const auto& x) {
      return x.outcome == PseudoLabelOutcome::kUnknown;
    });
  };
  auto count_known = [&grid](double kk) {
    const auto d = assign_pseudo_labels<double>(grid, 0.3, 0.6, kk);
    return std::count_if(d.begin(), d.end(), [](const auto& x) {
      return x.outcome == PseudoLabelOutcome::kKnown;
    });
  };
  long prev_unknown = -1;
  for (double kl = 0.05; kl <= 0.6; kl += 0.05) {
    const long n = count_unknown(kl);
    CHECK(n >= prev_unknown);
    prev_unknown = n;
  }
  long prev_known = count_known(0.05);
  for (double kk = 0.1; kk <= 1.1; kk += 0.05) {
    const long n = count_known(kk);
    CHECK(n <= prev_known);
    prev_known = n;
  }
}

TEST_CASE("target_loss: conventions and the two-term oracle") {
  // Everything discarded: defined zero with the flag set.
  std::vector<ProbVector<double>> probs = {prob_vector({0.4, 0.3, 0.2, 0.1})};
  std::vector<PseudoLabelDecision> discard(1);
  discard[0].outcome = PseudoLabelOutcome::kDiscard;
  const auto empty = target_loss<double>(probs, discard, 1.0);
  CHECK(empty.value == 0.0);
  CHECK(empty.all_discarded);
  CHECK(empty.retained == 0);

  // Pseudo-label unknown with certain unknown probability: CE term is zero.
  std::vector<ProbVector<double>> certain = {prob_vector({0.0, 0.0, 0.0, 1.0})};
  std::vector<PseudoLabelDecision> unk(1);
  unk[0].outcome = PseudoLabelOutcome::kUnknown;
  const auto sure = target_loss<double>(certain, unk, 0.5);
  CHECK(sure.value == 0.0);  // entropy of a one-hot is 0 as well

  // Random retained batches match the oracle (discarded rows excluded).
  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<ProbVector<double>> batch;
    std::vector<PseudoLabelDecision> decisions;
    std::vector<VectorX<double>> retained_probs;
    std::vector<int> retained_targets;
    for (int i = 0; i < 6; ++i) {
      VectorX<double> p(4);
      double total = 0.0;
      for (int k = 0; k < 4; ++k) {
        p[k] = 0.05 + rng.uniform();
        total += p[k];
      }
      p /= total;
      ProbVector<double> pv;
      pv.probs = p;
      pv.temperature = 0.01;
      batch.push_back(pv);
      PseudoLabelDecision d;
      const auto kind = rng.uniform_below(3);
      if (kind == 0) {
        d.outcome = PseudoLabelOutcome::kKnown;
        d.class_index = static_cast<int>(rng.uniform_below(3));
        retained_probs.push_back(p);
        retained_targets.push_back(d.class_index);
      } else if (kind == 1) {
        d.outcome = PseudoLabelOutcome::kUnknown;
        retained_probs.push_back(p);
        retained_targets.push_back(3);
      } else {
        d.outcome = PseudoLabelOutcome::kDiscard;
      }
      decisions.push_back(d);
    }
    const double lambda = rng.uniform();
    const auto result = target_loss<double>(batch, decisions, lambda);
    if (retained_probs.empty()) {
      CHECK(result.all_discarded);
    } else {
      CHECK(std::abs(result.value -
                     two_term_loss_oracle(retained_probs, retained_targets, lambda)) < 1e-10);
      CHECK(result.retained == static_cast<int>(retained_probs.size()));
    }
  }
}

TEST_CASE("analytic loss gradients match central finite differences (toy, double)") {
  const double lambda = 0.7;
  const double h = 1e-6;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Fixture fx(seed);
    const auto model = fx.model();
    Rng rng(seed * 131);
    MatrixX<double> features(4, 9);
    for (int i = 0; i < 4; ++i) {
      features.row(i) = (2.0 * random_unit(9, rng)).transpose();  // raw, encoder normalizes
    }
    const std::vector<int> labels = {0, 2, 1, 0};

    const auto source = source_loss_with_gradients<double>(fx.model(), features, labels, lambda);
    CHECK(std::abs(source.loss - source_loss_value(model, features, labels, lambda)) < 1e-12);

    // Fixed pseudo-label decisions (mix of all outcomes).
    std::vector<PseudoLabelDecision> decisions(4);
    decisions[0].outcome = PseudoLabelOutcome::kUnknown;
    decisions[1].outcome = PseudoLabelOutcome::kKnown;
    decisions[1].class_index = 2;
    decisions[2].outcome = PseudoLabelOutcome::kDiscard;
    decisions[3].outcome = PseudoLabelOutcome::kKnown;
    decisions[3].class_index = 1;
    const auto target = target_loss_with_gradients<double>(fx.model(), features, decisions, lambda);

    struct TensorCheck {
      MatrixX<double>* tensor;
      const MatrixX<double>* analytic_src;
      const MatrixX<double>* analytic_tgt;
    };
    // Gather vector gradients as single-column matrices for uniform looping.
    auto as_col = [](const VectorX<double>& v) { return MatrixX<double>(v); };
    MatrixX<double> src_hb = as_col(source.grads.bias.hidden_bias);
    MatrixX<double> src_ob = as_col(source.grads.bias.output_bias);
    MatrixX<double> tgt_hb = as_col(target.grads.bias.hidden_bias);
    MatrixX<double> tgt_ob = as_col(target.grads.bias.output_bias);
    MatrixX<double> hidden_bias_mat = as_col(fx.bias_params.hidden_bias);
    MatrixX<double> output_bias_mat = as_col(fx.bias_params.output_bias);

    std::vector<TensorCheck> checks = {
        {&fx.prompt_state.known_context, &source.grads.known_context, &target.grads.known_context},
        {&fx.prompt_state.unknown_context, &source.grads.unknown_context,
         &target.grads.unknown_context},
        {&fx.bias_params.hidden_weight, &source.grads.bias.hidden_weight,
         &target.grads.bias.hidden_weight},
        {&fx.bias_params.output_weight, &source.grads.bias.output_weight,
         &target.grads.bias.output_weight},
        {&hidden_bias_mat, &src_hb, &tgt_hb},
        {&output_bias_mat, &src_ob, &tgt_ob},
    };

    for (auto& check : checks) {
      const bool is_hidden_bias = check.tensor == &hidden_bias_mat;
      const bool is_output_bias = check.tensor == &output_bias_mat;
      for (Eigen::Index r = 0; r < check.tensor->rows(); ++r) {
        for (Eigen::Index c = 0; c < check.tensor->cols(); ++c) {
          const double orig = (*check.tensor)(r, c);
          auto sync = [&](double value) {
            (*check.tensor)(r, c) = value;
            if (is_hidden_bias) {
              fx.bias_params.hidden_bias[r] = value;
            }
            if (is_output_bias) {
              fx.bias_params.output_bias[r] = value;
            }
          };
          sync(orig + h);
          const double src_up = source_loss_value(fx.model(), features, labels, lambda);
          const double tgt_up = target_loss_value(fx.model(), features, decisions, lambda);
          sync(orig - h);
          const double src_down = source_loss_value(fx.model(), features, labels, lambda);
          const double tgt_down = target_loss_value(fx.model(), features, decisions, lambda);
          sync(orig);

          const double fd_src = (src_up - src_down) / (2.0 * h);
          const double fd_tgt = (tgt_up - tgt_down) / (2.0 * h);
          CHECK(grad_close((*check.analytic_src)(r, c), fd_src));
          CHECK(grad_close((*check.analytic_tgt)(r, c), fd_tgt));
        }
      }
    }
  }
}

TEST_CASE("shared-prompt ablation routes unknown-row gradients into the known context") {
  Fixture fx(5);
  auto model = fx.model();
  model.separate_prompts = false;
  Rng rng(17);
  MatrixX<double> features(2, 9);
  features.row(0) = random_unit(9, rng).transpose();
  features.row(1) = random_unit(9, rng).transpose();
  std::vector<PseudoLabelDecision> decisions(2);
  decisions[0].outcome = PseudoLabelOutcome::kUnknown;
  decisions[1].outcome = PseudoLabelOutcome::kUnknown;
  const auto result = target_loss_with_gradients<double>(model, features, decisions, 0.0);
  CHECK(result.grads.unknown_context.cwiseAbs().maxCoeff() == 0.0);
  CHECK(result.grads.known_context.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("disabling the bias network zeroes its gradients and its effect") {
  Fixture fx(6);
  auto model = fx.model();
  model.use_dsbn = false;
  Rng rng(18);
  MatrixX<double> features(2, 9);
  features.row(0) = random_unit(9, rng).transpose();
  features.row(1) = random_unit(9, rng).transpose();
  const std::vector<int> labels = {0, 1};
  const auto result = source_loss_with_gradients<double>(model, features, labels, 1.0);
  CHECK(result.grads.bias.hidden_weight.cwiseAbs().maxCoeff() == 0.0);
  CHECK(result.grads.bias.output_weight.cwiseAbs().maxCoeff() == 0.0);

  // With a zero output layer the bias is zero, so DSBN-off must agree.
  Fixture fresh(6);
  Rng zr(0);
  fresh.bias_params.output_weight.setZero();
  fresh.bias_params.output_bias.setZero();
  const auto with_dsbn = forward_batch_probabilities<double>(fresh.model(), features);
  const auto without = forward_batch_probabilities<double>(model, features);
  for (std::size_t i = 0; i < with_dsbn.size(); ++i) {
    CHECK((with_dsbn[i].probs - without[i].probs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("permuting the label space permutes text features and logits identically") {
  const auto backend = encoders::make_toy_backend<double>(9, 7, 88);
  const LabelSpace order_a = build_label_space({"ant", "bee", "cat"});
  const LabelSpace order_b = build_label_space({"cat", "ant", "bee"});
  const auto bank_a = encoders::build_token_bank<double>(*backend.embedder, order_a);
  const auto bank_b = encoders::build_token_bank<double>(*backend.embedder, order_b);
  Rng rng(3);
  const auto state = prompts::init_prompt_state<double>(3, 7, rng);
  VectorX<double> bias(7);
  for (Eigen::Index i = 0; i < 7; ++i) {
    bias[i] = 0.1 * rng.gaussian();
  }
  const auto features_a = prompts::assemble_text_features<double>(state, bank_a, bias, *backend.text);
  const auto features_b = prompts::assemble_text_features<double>(state, bank_b, bias, *backend.text);
  // order_b = (cat, ant, bee) maps to rows (2, 0, 1) of order_a.
  CHECK(features_b.row(0) == features_a.row(2));
  CHECK(features_b.row(1) == features_a.row(0));
  CHECK(features_b.row(2) == features_a.row(1));
  CHECK(features_b.row(3) == features_a.row(3));  // unknown row last in both

  const auto v = random_unit(9, rng);
  const VectorX<double> logits_a = features_a * v;
  const VectorX<double> logits_b = features_b * v;
  CHECK(logits_b[0] == logits_a[2]);
  CHECK(logits_b[1] == logits_a[0]);
  CHECK(logits_b[2] == logits_a[1]);
  CHECK(logits_b[3] == logits_a[3]);
}
