#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "relief/gin.hpp"

using relief::GinModel;
using relief::Graph;
using relief::Matrix;
using relief::Mlp;

namespace {

Mlp identity_mlp(std::size_t d) {
  Mlp m({d, d, d});
  m.layer(0).weight = Matrix::identity(d);
  m.layer(1).weight = Matrix::identity(d);
  return m;
}

Graph random_graph(std::size_t n, std::size_t dim, double p, relief::Rng& rng) {
  Matrix x(n, dim);
  for (double& v : x.values()) v = rng.normal();
  std::vector<relief::Edge> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) e.emplace_back(i, j);
  return Graph(x, e, relief::Label::single(0));
}

double weighted(const Matrix& y, const Matrix& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * c.values()[i];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

}  // namespace

TEST_CASE("single identity layer sums the closed neighborhood") {
  GinModel m({GinModel::Layer{Matrix(1, 1, 0.0), identity_mlp(3)}});
  const Graph g(Matrix::identity(3), {{0, 1}, {1, 2}});
  const Matrix h = m.forward(g);
  CHECK(h == Matrix::from_rows({{1, 1, 0}, {1, 1, 1}, {0, 1, 1}}));
}

TEST_CASE("edgeless graph applies the MLP stack node by node") {
  relief::Rng rng(2);
  GinModel m(relief::GinConfig{.input_dim = 4, .hidden_dim = 5, .num_layers = 1}, rng);
  m.layer(0).eps(0, 0) = 0.25;
  const Graph g = random_graph(3, 4, 0.0, rng);
  const Matrix h = m.forward(g);
  for (std::size_t v = 0; v < 3; ++v) {
    Matrix xv(1, 4);
    for (std::size_t j = 0; j < 4; ++j) xv(0, j) = 1.25 * g.features()(v, j);
    const Matrix hv = m.layer(0).mlp.forward(xv);
    for (std::size_t j = 0; j < 5; ++j) CHECK(h(v, j) == doctest::Approx(hv(0, j)).epsilon(1e-14));
  }
}

TEST_CASE("permutation equivariance and pooled invariance") {
  relief::Rng rng(4);
  GinModel m(relief::GinConfig{.input_dim = 3, .hidden_dim = 6, .num_layers = 3}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Graph g = random_graph(7, 3, 0.35, rng);
    std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5, 6};
    rng.shuffle(perm);
    std::vector<std::size_t> inv(7);
    for (std::size_t i = 0; i < 7; ++i) inv[perm[i]] = i;
    // new node i is old node perm[i]
    Matrix x = relief::gather_rows(g.features(), perm);
    std::vector<relief::Edge> e;
    for (const auto& [a, b] : g.edges()) e.emplace_back(inv[a], inv[b]);
    const Graph pg(x, e);
    const Matrix h = m.forward(g);
    const Matrix ph = m.forward(pg);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(ph(i, j) - h(perm[i], j)) < 1e-10);
    const Matrix a = relief::mean_pool(h), b = relief::mean_pool(ph);
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(a(0, j) - b(0, j)) < 1e-10);
  }
}

TEST_CASE("gin gradients match central differences") {
  relief::Rng rng(8);
  GinModel m(relief::GinConfig{.input_dim = 3, .hidden_dim = 4, .num_layers = 2}, rng);
  m.layer(0).eps(0, 0) = 0.1;
  m.layer(1).eps(0, 0) = -0.2;
  const Graph g = random_graph(5, 3, 0.5, rng);
  Matrix c(5, 4);
  for (double& v : c.values()) v = rng.normal();

  GinModel::Cache cache;
  m.forward(g, g.features(), cache);
  std::vector<Matrix> grads;
  const Matrix dx = m.backward(g, cache, c, grads);

  const double h = 1e-6;
  auto params = m.parameters();
  REQUIRE(params.size() == grads.size());
  std::size_t checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->size(); ++i) {
      double& w = params[p]->values()[i];
      const double keep = w;
      w = keep + h;
      const double up = weighted(m.forward(g), c);
      w = keep - h;
      const double down = weighted(m.forward(g), c);
      w = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grads[p].values()[i];
      if (std::abs(fd) + std::abs(an) > 1e-7) {
        CHECK(rel_err(fd, an) < 1e-4);
        ++checked;
      }
    }
  }
  CHECK(checked > 20);
  for (std::size_t i = 0; i < dx.size(); ++i) {
    Matrix xp = g.features(), xm = g.features();
    xp.values()[i] += h;
    xm.values()[i] -= h;
    const double fd = (weighted(m.forward(g, xp), c) - weighted(m.forward(g, xm), c)) / (2 * h);
    if (std::abs(fd) > 1e-7) CHECK(rel_err(fd, dx.values()[i]) < 1e-4);
  }
  CHECK(m.backward_input(g, cache, c) == dx);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  relief::Rng rng(1);
  GinModel m(relief::GinConfig{.input_dim = 2, .hidden_dim = 3, .num_layers = 2}, rng);
  const Graph g = random_graph(4, 2, 0.5, rng);
  GinModel::Cache cache;
  m.forward(g, g.features(), cache);
  std::vector<Matrix> grads;
  const Matrix dx = m.backward(g, cache, Matrix(4, 3), grads);
  CHECK(relief::max_abs(dx) == 0.0);
  for (const auto& gr : grads) CHECK(relief::max_abs(gr) == 0.0);
}

TEST_CASE("edgeless eps gradient reduces to features times the input gradient") {
  relief::Rng rng(6);
  GinModel m(relief::GinConfig{.input_dim = 3, .hidden_dim = 4, .num_layers = 1}, rng);
  const double eps = 0.3;
  m.layer(0).eps(0, 0) = eps;
  const Graph g = random_graph(5, 3, 0.0, rng);
  Matrix c(5, 4);
  for (double& v : c.values()) v = rng.normal();
  GinModel::Cache cache;
  m.forward(g, g.features(), cache);
  std::vector<Matrix> grads;
  const Matrix dx = m.backward(g, cache, c, grads);
  // dL/dx_v = (1+eps)·g_v and dL/deps = Σ_v x_v·g_v
  double expect = 0.0;
  for (std::size_t i = 0; i < dx.size(); ++i) expect += g.features().values()[i] * dx.values()[i] / (1.0 + eps);
  const auto params = m.parameters();
  bool found = false;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p] != &m.layer(0).eps) continue;
    found = true;
    CHECK(grads[p](0, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(found);
}

TEST_CASE("frozen model refuses parameter gradients") {
  relief::Rng rng(3);
  GinModel m(relief::GinConfig{.input_dim = 2, .hidden_dim = 3, .num_layers = 2}, rng);
  m.freeze();
  const Graph g = random_graph(4, 2, 0.5, rng);
  GinModel::Cache cache;
  m.forward(g, g.features(), cache);
  std::vector<Matrix> grads;
  CHECK_THROWS_AS(m.backward(g, cache, Matrix(4, 3, 1.0), grads), relief::FrozenModelError);
  CHECK_THROWS_AS(m.trainable_parameters(), relief::FrozenModelError);
  CHECK_NOTHROW(m.backward_input(g, cache, Matrix(4, 3, 1.0)));
}

TEST_CASE("zero prompt leaves embeddings bit-identical") {
  relief::Rng rng(12);
  GinModel m(relief::GinConfig{.input_dim = 3, .hidden_dim = 5, .num_layers = 3}, rng);
  const Graph g = random_graph(6, 3, 0.4, rng);
  CHECK(m.forward(g, g.features() + Matrix(6, 3)) == m.forward(g));
  CHECK_THROWS_AS(m.forward(g, Matrix(6, 2)), relief::ShapeError);
}

TEST_CASE("checkpoint round-trip") {
  relief::Rng rng(5);
  GinModel m(relief::GinConfig{.input_dim = 3, .hidden_dim = 4, .num_layers = 2}, rng);
  m.layer(1).eps(0, 0) = 0.1234567890123;
  const auto ck = m.to_checkpoint();
  CHECK(ck.kind == "gin-v1");
  const GinModel back = GinModel::from_checkpoint(relief::Checkpoint::from_json(nlohmann::json::parse(ck.dump())));
  CHECK(back.same_parameters(m));
  relief::Checkpoint wrong = ck;
  wrong.kind = "other";
  CHECK_THROWS_AS(GinModel::from_checkpoint(wrong), relief::CheckpointError);
}

TEST_CASE("mean pool") {
  CHECK(relief::mean_pool(Matrix::from_rows({{1, 2}, {1, 2}})) == Matrix::from_rows({{1, 2}}));
  CHECK(relief::mean_pool(Matrix::from_rows({{1, -2}, {-1, 2}})) == Matrix::from_rows({{0, 0}}));
  relief::Rng rng(1);
  Matrix r(3, 4);
  for (double& v : r.values()) v = rng.normal();
  const Matrix p = relief::mean_pool(r);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(p(0, j) - (r(0, j) + r(1, j) + r(2, j)) / 3.0) < 1e-15);
  CHECK_THROWS(relief::mean_pool(Matrix(0, 4)));
  CHECK(relief::mean_pool_backward(Matrix::from_rows({{3, 6}}), 3) == Matrix(3, 2, 0.0) + Matrix::from_rows({{1, 2}, {1, 2}, {1, 2}}));
}
