#include "relief/loss.hpp"

#include <algorithm>
#include <cmath>

namespace relief {

LossKind loss_kind_for(const Dataset& d) {
  return d.multi_label() ? LossKind::bce_mean : LossKind::cross_entropy;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_with_logit(double logit, double target) {
  // -[t log σ(x) + (1-t) log(1-σ(x))] = softplus(x) - t·x
  return softplus(logit) - target * logit;
}

LossValue task_loss(LossKind kind, const Matrix& logits, const Label& label) {
  if (logits.rows() != 1) throw ShapeError("task_loss expects a single row of logits");
  LossValue out{0.0, Matrix(1, logits.cols())};
  const auto row = logits.row(0);
  if (kind == LossKind::cross_entropy) {
    if (label.is_multi() || label.cls < 0 || static_cast<std::size_t>(label.cls) >= row.size()) {
      throw ShapeError("cross-entropy label out of range");
    }
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    out.loss = lse - row[static_cast<std::size_t>(label.cls)];
    for (std::size_t c = 0; c < row.size(); ++c) out.d_logits(0, c) = std::exp(row[c] - lse);
    out.d_logits(0, static_cast<std::size_t>(label.cls)) -= 1.0;
  } else {
    if (label.tasks.size() != row.size()) throw ShapeError("multi-label width mismatch");
    const double inv = 1.0 / static_cast<double>(row.size());
    for (std::size_t t = 0; t < row.size(); ++t) {
      const double y = static_cast<double>(label.tasks[t]);
      out.loss += inv * bce_with_logit(row[t], y);
      out.d_logits(0, t) = inv * (sigmoid(row[t]) - y);
    }
  }
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite task loss");
  return out;
}

double task_loss_value(LossKind kind, const Matrix& logits, const Label& label) {
  return task_loss(kind, logits, label).loss;
}

}  // namespace relief
