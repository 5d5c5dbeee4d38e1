#include "relief/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace relief {

namespace {

bool nonzero_row(std::span<const double> row) {
  return std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; });
}

void require_rows(const Matrix& p, const char* what) {
  if (p.rows() == 0) throw std::invalid_argument(std::string(what) + " of an empty prompt matrix");
}

}  // namespace

double pcr(const Matrix& prompts) {
  require_rows(prompts, "pcr");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < prompts.rows(); ++i) hit += nonzero_row(prompts.row(i)) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(prompts.rows());
}

double apm(const Matrix& prompts) {
  require_rows(prompts, "apm");
  if (prompts.cols() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < prompts.rows(); ++i) {
    const auto row = prompts.row(i);
    if (!nonzero_row(row)) continue;
    double l1 = 0.0;
    for (double v : row) l1 += std::abs(v);
    total += l1 / static_cast<double>(prompts.cols());
  }
  return total / static_cast<double>(prompts.rows());
}

ImpactReport impact_report(std::span<const Matrix> prompts) {
  ImpactReport r;
  for (const Matrix& p : prompts) {
    r.pcr.push_back(pcr(p));
    r.apm.push_back(apm(p));
    r.overall.push_back(r.pcr.back() * r.apm.back());
  }
  if (!prompts.empty()) {
    const double inv = 1.0 / static_cast<double>(prompts.size());
    r.mean_pcr = std::accumulate(r.pcr.begin(), r.pcr.end(), 0.0) * inv;
    r.mean_apm = std::accumulate(r.apm.begin(), r.apm.end(), 0.0) * inv;
    r.mean_overall = std::accumulate(r.overall.begin(), r.overall.end(), 0.0) * inv;
  }
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  // Rank-sum with midranks for ties: O(n log n).
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1 ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double mean_roc_auc(const Matrix& scores, const std::vector<std::vector<int>>& labels) {
  if (labels.size() != scores.rows()) throw std::invalid_argument("mean_roc_auc: row count mismatch");
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t t = 0; t < scores.cols(); ++t) {
    std::vector<double> s(scores.rows());
    std::vector<int> y(scores.rows());
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      s[i] = scores(i, t);
      y[i] = labels[i].at(t);
      has_pos |= y[i] == 1;
      has_neg |= y[i] == 0;
    }
    if (!has_pos || !has_neg) continue;
    total += roc_auc(s, y);
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("mean_roc_auc: no label has both classes");
  return total / static_cast<double>(valid);
}

ClassificationMetrics classification_metrics(std::span<const int> predictions,
                                             std::span<const int> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("classification_metrics: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("classification_metrics: empty input");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = static_cast<std::size_t>(predictions[i]);
    const auto y = static_cast<std::size_t>(labels[i]);
    if (p >= num_classes || y >= num_classes) throw std::invalid_argument("class id out of range");
    if (p == y) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return m;
}

}  // namespace relief
