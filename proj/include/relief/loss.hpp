#pragma once

#include <span>
#include <string>

#include "relief/graph.hpp"
#include "relief/tensor.hpp"

namespace relief {

enum class LossKind {
  cross_entropy,  // single-label, softmax over classes
  bce_mean,       // multi-label, sigmoid per task, mean over tasks
};

LossKind loss_kind_for(const Dataset& d);

struct LossValue {
  double loss = 0.0;
  Matrix d_logits;  // same shape as the logits
};

/// Loss of one graph's logits (1 × C) against its label, with gradient.
LossValue task_loss(LossKind kind, const Matrix& logits, const Label& label);
double task_loss_value(LossKind kind, const Matrix& logits, const Label& label);

/// Numerically stable log(1 + exp(x)).
double softplus(double x);
double sigmoid(double x);

/// -log σ(y·x) style binary cross-entropy on a logit; target in {0,1}.
double bce_with_logit(double logit, double target);

}  // namespace relief
