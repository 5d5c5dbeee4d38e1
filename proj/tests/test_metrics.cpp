#include <doctest.h>

#include <cmath>

#include "relief/metrics.hpp"

using relief::Matrix;

namespace {

double pcr_oracle(const Matrix& p) {
  double hit = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    bool nz = false;
    for (std::size_t j = 0; j < p.cols(); ++j) nz = nz || p(i, j) != 0.0;
    hit += nz ? 1 : 0;
  }
  return hit / static_cast<double>(p.rows());
}

double apm_oracle(const Matrix& p) {
  double s = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double l1 = 0;
    bool nz = false;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      l1 += std::abs(p(i, j));
      nz = nz || p(i, j) != 0.0;
    }
    if (nz) s += l1 / static_cast<double>(p.cols());
  }
  return s / static_cast<double>(p.rows());
}

double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / pairs;
}

}  // namespace

TEST_CASE("pcr and apm examples") {
  CHECK(relief::pcr(Matrix(3, 2)) == 0.0);
  CHECK(relief::apm(Matrix(3, 2)) == 0.0);
  const Matrix half = Matrix::from_rows({{1, 0}, {0, 0}, {0, -2}, {0, 0}});
  CHECK(relief::pcr(half) == 0.5);
  CHECK(relief::pcr(Matrix(2, 2, 0.1)) == 1.0);
  CHECK(relief::apm(Matrix::from_rows({{1, -1}, {0, 0}})) == 0.5);
  CHECK(relief::apm(half * 3.0) == doctest::Approx(3.0 * relief::apm(half)));
  CHECK_THROWS(relief::pcr(Matrix(0, 2)));
  CHECK_THROWS(relief::apm(Matrix(0, 2)));
}

TEST_CASE("pcr and apm match brute-force loops on random prompts") {
  relief::Rng rng(21);
  std::vector<Matrix> all;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.index(12), d = 1 + rng.index(6);
    Matrix p(n, d);
    for (std::size_t i = 0; i < n; ++i)
      if (rng.bernoulli(0.6))
        for (std::size_t j = 0; j < d; ++j) p(i, j) = rng.bernoulli(0.8) ? rng.normal() : 0.0;
    CHECK(std::abs(relief::pcr(p) - pcr_oracle(p)) < 1e-12);
    CHECK(std::abs(relief::apm(p) - apm_oracle(p)) < 1e-12);
    all.push_back(p);
  }
  const auto rep = relief::impact_report(all);
  REQUIRE(rep.overall.size() == all.size());
  double mp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(std::abs(rep.overall[i] - rep.pcr[i] * rep.apm[i]) < 1e-12);
    mp += rep.pcr[i];
  }
  CHECK(rep.mean_pcr == doctest::Approx(mp / static_cast<double>(all.size())));
}

TEST_CASE("exact cancellation counts as unprompted") {
  Matrix p(2, 2);
  p(0, 0) = 0.5;
  p(0, 0) -= 0.5;
  p(1, 1) = 1e-300;
  CHECK(relief::pcr(p) == 0.5);
}

TEST_CASE("roc auc examples") {
  CHECK(relief::roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
  CHECK(relief::roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
  CHECK_THROWS(relief::roc_auc(std::vector<double>{0.5, 0.2}, std::vector<int>{1, 1}));
}

TEST_CASE("roc auc matches the pairwise oracle") {
  relief::Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      // coarse scores produce plenty of ties
      s[i] = std::round(rng.normal() * 4.0) / 4.0;
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(relief::roc_auc(s, y) - auc_oracle(s, y)) < 1e-12);
    std::vector<double> mono(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) mono[i] = std::exp(3.0 * s[i]) - 7.0;
    CHECK(std::abs(relief::roc_auc(mono, y) - relief::roc_auc(s, y)) < 1e-12);
  }
}

TEST_CASE("mean roc auc skips single-class columns") {
  const Matrix scores = Matrix::from_rows({{0.9, 0.3, 0.1}, {0.1, 0.2, 0.7}, {0.5, 0.9, 0.2}});
  const std::vector<std::vector<int>> labels{{1, 1, 0}, {0, 1, 1}, {1, 1, 0}};
  // column 0: pos {0.9, 0.5} vs neg {0.1} -> 1; column 1 all positive -> skipped;
  // column 2: pos {0.7} vs neg {0.1, 0.2} -> 1
  CHECK(relief::mean_roc_auc(scores, labels) == 1.0);
  const std::vector<std::vector<int>> none{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  CHECK_THROWS(relief::mean_roc_auc(scores, none));
}

TEST_CASE("classification metrics") {
  const std::vector<int> y{0, 1, 0, 1};
  auto m = relief::classification_metrics(y, y, 2);
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_f1 == 1.0);
  m = relief::classification_metrics(std::vector<int>{0, 0, 0, 0}, y, 2);
  CHECK(m.accuracy == 0.5);
  CHECK(m.macro_f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS(relief::classification_metrics(std::vector<int>{}, std::vector<int>{}, 2));
}

TEST_CASE("macro f1 matches a confusion-matrix oracle") {
  relief::Rng rng(10);
  const std::size_t k = 4;
  std::vector<int> pred(100), truth(100);
  for (std::size_t i = 0; i < 100; ++i) {
    truth[i] = static_cast<int>(rng.index(k));
    pred[i] = rng.bernoulli(0.5) ? truth[i] : static_cast<int>(rng.index(k));
  }
  std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < 100; ++i) cm[truth[i]][pred[i]] += 1;
  double f1 = 0, correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = cm[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o)
      if (o != c) {
        fp += cm[o][c];
        fn += cm[c][o];
      }
    f1 += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    correct += tp;
  }
  const auto m = relief::classification_metrics(pred, truth, k);
  CHECK(m.accuracy == doctest::Approx(correct / 100.0).epsilon(1e-15));
  CHECK(m.macro_f1 == doctest::Approx(f1 / k).epsilon(1e-12));
}
