#include "cosmo/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "cosmo/io.hpp"

namespace cosmo::eval {

PredictionSet predict_pool(const objective::Model<float>& model, const data::FeaturePool& pool) {
  if (pool.labels.size() != static_cast<std::size_t>(pool.size())) {
    throw ValidationError("evaluation pool must carry ground-truth labels");
  }
  PredictionSet preds;
  preds.predicted.reserve(static_cast<std::size_t>(pool.size()));
  for (Eigen::Index i = 0; i < pool.size(); ++i) {
    const auto fwd = objective::forward_sample<float>(model, pool.features.row(i).transpose());
    preds.predicted.push_back(predict(fwd.probs));
  }
  preds.ground_truth = pool.labels;
  preds.domains = pool.domains;
  return preds;
}

MetricsReport compute_metrics(const PredictionSet& preds, const LabelSpace& labels) {
  if (preds.predicted.empty()) {
    throw ValidationError("cannot compute metrics over an empty prediction set");
  }
  if (preds.predicted.size() != preds.ground_truth.size()) {
    throw ValidationError("prediction set has mismatched prediction/ground-truth sizes");
  }
  const int num_known = labels.num_known();
  std::vector<std::int64_t> total(static_cast<std::size_t>(num_known) + 1, 0);
  std::vector<std::int64_t> correct(static_cast<std::size_t>(num_known) + 1, 0);
  for (std::size_t i = 0; i < preds.predicted.size(); ++i) {
    const int gt = preds.ground_truth[i];
    const int pr = preds.predicted[i];
    if (gt < 0 || gt > num_known || pr < 0 || pr > num_known) {
      throw ValidationError("prediction set contains an index outside the label space");
    }
    total[static_cast<std::size_t>(gt)] += 1;
    if (gt == pr) {
      correct[static_cast<std::size_t>(gt)] += 1;
    }
  }

  MetricsReport report;
  double acc_sum = 0.0;
  int classes_seen = 0;
  for (int c = 0; c < num_known; ++c) {
    const auto idx = static_cast<std::size_t>(c);
    report.counts[labels.known_classes[idx]] = total[idx];
    if (total[idx] == 0) {
      continue;  // absent classes do not enter the OS* mean
    }
    const double acc = static_cast<double>(correct[idx]) / static_cast<double>(total[idx]);
    report.per_known_class_accuracy[labels.known_classes[idx]] = acc;
    acc_sum += acc;
    ++classes_seen;
  }
  report.os_star = classes_seen > 0 ? 100.0 * acc_sum / classes_seen : 0.0;

  const auto unk_total = total[static_cast<std::size_t>(num_known)];
  report.counts["<unknown>"] = unk_total;
  if (unk_total > 0) {
    const double unk =
        100.0 * static_cast<double>(correct[static_cast<std::size_t>(num_known)]) /
        static_cast<double>(unk_total);
    report.unk = unk;
    report.hos = harmonic_mean(report.os_star, unk);
    report.os = (num_known * report.os_star + unk) / (num_known + 1);
  } else {
    report.os = report.os_star;
  }
  return report;
}

std::map<std::string, MetricsReport> per_domain_metrics(const PredictionSet& preds,
                                                        const LabelSpace& labels) {
  if (preds.domains.size() != preds.predicted.size()) {
    throw ValidationError("per-domain metrics need a domain tag per sample");
  }
  std::set<std::string> domains(preds.domains.begin(), preds.domains.end());
  std::map<std::string, MetricsReport> out;
  for (const auto& domain : domains) {
    PredictionSet subset;
    for (std::size_t i = 0; i < preds.predicted.size(); ++i) {
      if (preds.domains[i] == domain) {
        subset.predicted.push_back(preds.predicted[i]);
        subset.ground_truth.push_back(preds.ground_truth[i]);
      }
    }
    out.emplace(domain, compute_metrics(subset, labels));
  }
  return out;
}

MatrixF template_text_features(const encoders::TextEncoder<float>& text_encoder,
                               const encoders::TextEmbedder<float>& embedder,
                               const LabelSpace& labels) {
  MatrixF features(labels.num_known(), text_encoder.output_dim());
  for (int c = 0; c < labels.num_known(); ++c) {
    const MatrixF tokens = embedder.embed("a " + labels.known_classes[static_cast<std::size_t>(c)]);
    features.row(c) = text_encoder.encode(tokens).transpose();
  }
  return features;
}

PredictionSet zero_shot_baseline(const encoders::ImageEncoder<float>& image_encoder,
                                 const data::FeaturePool& pool, const MatrixF& known_text_features,
                                 float temperature, double threshold) {
  if (pool.labels.size() != static_cast<std::size_t>(pool.size())) {
    throw ValidationError("evaluation pool must carry ground-truth labels");
  }
  const int num_known = static_cast<int>(known_text_features.rows());
  PredictionSet preds;
  preds.predicted.reserve(static_cast<std::size_t>(pool.size()));
  for (Eigen::Index i = 0; i < pool.size(); ++i) {
    const VectorF v = image_encoder.encode(pool.features.row(i).transpose());
    const auto p = objective::class_probabilities<float>(v, known_text_features, temperature);
    int best = 0;
    for (int c = 1; c < num_known; ++c) {
      if (p.probs[c] > p.probs[best]) {
        best = c;
      }
    }
    preds.predicted.push_back(static_cast<double>(p.probs[best]) < threshold ? num_known : best);
  }
  preds.ground_truth = pool.labels;
  preds.domains = pool.domains;
  return preds;
}

void export_embeddings(const objective::Model<float>& model, const LabelSpace& labels,
                       const data::FeaturePool& pool, const std::filesystem::path& out_dir) {
  io::FeatureCacheWriter writer(out_dir);
  // Text rows are the bias-free prompt features: the domain-agnostic part of
  // the model (the bias depends on each image and is omitted here).
  const VectorF zero_bias = VectorF::Zero(model.prompt_state->token_dim());
  for (int c = 0; c < labels.num_known(); ++c) {
    const MatrixF seq = prompts::build_prompt_sequence<float>(
        model.prompt_state->known_context, zero_bias,
        model.bank->class_token_sequences[static_cast<std::size_t>(c)]);
    writer.append("text/" + labels.known_classes[static_cast<std::size_t>(c)],
                  model.text_encoder->encode(seq), labels.known_classes[static_cast<std::size_t>(c)]);
  }
  const MatrixF unk_seq = prompts::build_prompt_sequence<float>(
      model.unknown_context(), zero_bias, model.bank->unk_token_sequence);
  writer.append("text/<unknown>", model.text_encoder->encode(unk_seq), "<unknown>");

  const bool labeled = pool.labels.size() == static_cast<std::size_t>(pool.size());
  const bool tagged = pool.domains.size() == static_cast<std::size_t>(pool.size());
  for (Eigen::Index i = 0; i < pool.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "image/%06lld", static_cast<long long>(i));
    std::string class_tag;
    if (labeled) {
      const int gt = pool.labels[static_cast<std::size_t>(i)];
      class_tag = gt == labels.unknown_index ? "<unknown>"
                                             : labels.known_classes[static_cast<std::size_t>(gt)];
    }
    writer.append(id, model.image_encoder->encode(pool.features.row(i).transpose()), class_tag,
                  tagged ? pool.domains[static_cast<std::size_t>(i)] : "");
  }
  writer.finalize();
}

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& sections) {
  std::size_t width = 8;
  for (const auto& [name, _] : sections) {
    width = std::max(width, name.size() + 2);
  }
  std::ostringstream out;
  out << std::string(width, ' ') << "     OS*     UNK     HOS      OS\n";
  for (const auto& [name, report] : sections) {
    out << name << std::string(width - name.size(), ' ');
    auto cell = [&out](const std::string& text) {
      out << std::string(text.size() >= 8 ? 1 : 8 - text.size(), ' ') << text;
    };
    cell(format_percent(report.os_star));
    cell(report.unk ? format_percent(*report.unk) : "n/a");
    cell(report.hos ? format_percent(*report.hos) : "-");
    cell(format_percent(report.os));
    out << "\n";
  }
  return out.str();
}

}  // namespace cosmo::eval
