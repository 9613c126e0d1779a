#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cosmo/core.hpp"
#include "cosmo/data.hpp"
#include "cosmo/objective.hpp"

namespace cosmo::eval {

/// Predictions and ground truth over one evaluated pool, both indexed in the
/// same label space (unknown classes mapped to unknown_index).
struct PredictionSet {
  std::vector<int> predicted;
  std::vector<int> ground_truth;
  std::vector<std::string> domains;  // may be empty when breakdowns are not needed
};

/// Argmax over all |C_k|+1 probability slots; ties break toward the lowest
/// index. The argmax is invariant under temperature rescaling.
template <class S>
int predict(const objective::ProbVector<S>& p) {
  int best = 0;
  for (Eigen::Index i = 1; i < p.probs.size(); ++i) {
    if (p.probs[i] > p.probs[best]) {
      best = static_cast<int>(i);
    }
  }
  return best;
}

template <class S>
int predict(const VectorX<S>& image_feature, const MatrixX<S>& text_features, S temperature) {
  return predict(objective::class_probabilities<S>(image_feature, text_features, temperature));
}

/// Runs the trained model over a labeled pool (raw features).
PredictionSet predict_pool(const objective::Model<float>& model, const data::FeaturePool& pool);

/// OS* (unweighted mean per-known-class accuracy), UNK (fraction of
/// ground-truth-unknown samples rejected), HOS (their harmonic mean) and OS,
/// all in percent. Known classes without ground-truth samples are excluded
/// from the OS* mean. UNK and HOS are absent when the pool has no
/// ground-truth-unknown samples; OS then equals OS*.
MetricsReport compute_metrics(const PredictionSet& preds, const LabelSpace& labels);

/// Metrics restricted to each domain tag present in the prediction set.
std::map<std::string, MetricsReport> per_domain_metrics(const PredictionSet& preds,
                                                        const LabelSpace& labels);

/// |C_k|-way text features from fixed "a <class>" template prompts, for the
/// zero-shot threshold baseline (no learnable context, no bias).
MatrixF template_text_features(const encoders::TextEncoder<float>& text_encoder,
                               const encoders::TextEmbedder<float>& embedder,
                               const LabelSpace& labels);

/// Zero-shot baseline: softmax over the |C_k| known template prompts only;
/// samples whose max probability falls below `threshold` become unknown.
PredictionSet zero_shot_baseline(const encoders::ImageEncoder<float>& image_encoder,
                                 const data::FeaturePool& pool, const MatrixF& known_text_features,
                                 float temperature, double threshold);

/// Writes the (|C_k|+1) bias-free text features plus every pool image feature
/// (with ground-truth tags) in the feature-cache binary format, for external
/// projection tools. Deterministic: re-export produces identical bytes.
void export_embeddings(const objective::Model<float>& model, const LabelSpace& labels,
                       const data::FeaturePool& pool, const std::filesystem::path& out_dir);

/// Two-decimal percentage formatting shared by reports and the CLI.
std::string format_percent(double value);

/// Plain-text table with one row per section, OS* / UNK / HOS / OS columns.
std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& sections);

}  // namespace cosmo::eval
