#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "relief/tensor.hpp"

namespace relief {

/// Prompt coverage ratio: share of rows that are not exactly the zero vector.
double pcr(const Matrix& prompts);
/// Average prompt magnitude: (1/n) Σ_i (1/D)·1[p_i ≠ 0]·‖p_i‖₁.
double apm(const Matrix& prompts);

struct ImpactReport {
  std::vector<double> pcr;
  std::vector<double> apm;
  std::vector<double> overall;  // pcr·apm per graph
  double mean_pcr = 0.0;
  double mean_apm = 0.0;
  double mean_overall = 0.0;
};

ImpactReport impact_report(std::span<const Matrix> prompts);

/// Mann–Whitney AUC: P(score⁺ > score⁻) + 0.5·P(tie). Throws if a class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Mean AUC over label columns that contain both classes. scores and labels
/// are m × T (labels 0/1). Throws when no column is valid.
double mean_roc_auc(const Matrix& scores, const std::vector<std::vector<int>>& labels);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Macro-F1 averages over all `num_classes` classes; a class with no true and
/// no predicted members scores F1 = 0.
ClassificationMetrics classification_metrics(std::span<const int> predictions,
                                             std::span<const int> labels, std::size_t num_classes);

}  // namespace relief
