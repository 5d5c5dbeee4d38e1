#include <doctest.h>

#include <cmath>
#include <numbers>

#include "relief/pretrain.hpp"

using relief::GinModel;
using relief::Matrix;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

relief::Dataset two_block(double noise = 1.0) {
  relief::SyntheticSpec spec;
  spec.structure = relief::Structure::two_block;
  spec.noise = noise;
  return relief::generate_synthetic(spec, 1);
}

GinModel small_gin(std::size_t in, double init_scale, std::uint64_t seed, std::size_t hidden = 16) {
  relief::Rng rng(seed);
  return GinModel(relief::GinConfig{.input_dim = in, .hidden_dim = hidden, .num_layers = 2, .init_scale = init_scale},
                  rng);
}

}  // namespace

TEST_CASE("config validation") {
  relief::PretrainConfig cfg;
  cfg.negative_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), relief::ConfigError);
  cfg = {};
  cfg.strategy = relief::PretrainStrategy::contra_edge;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), relief::ConfigError);
  cfg = {};
  cfg.strategy = relief::PretrainStrategy::attr_mask;
  cfg.mask_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), relief::ConfigError);
  CHECK(relief::parse_pretrain_strategy("contra_edge") == relief::PretrainStrategy::contra_edge);
  CHECK_THROWS_AS(relief::parse_pretrain_strategy("infomax"), relief::ConfigError);
}

TEST_CASE("edge pair sampling") {
  relief::Rng rng(3);
  const relief::Graph g(Matrix(6, 1), {{0, 1}, {1, 2}, {2, 3}, {4, 5}});
  const auto s = relief::sample_edge_pairs(g, 1.0, rng);
  REQUIRE(s.pairs.size() == 8);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    const auto [a, b] = s.pairs[i];
    CHECK(a != b);
    CHECK(g.has_edge(a, b) == (s.targets[i] == 1.0));
    pos += s.targets[i] == 1.0;
  }
  CHECK(pos == 4);
  CHECK(relief::sample_edge_pairs(g, 0.5, rng).pairs.size() == 6);
}

TEST_CASE("masked edge loss value and gradient") {
  relief::Rng rng(5);
  Matrix emb(4, 3);
  for (double& v : emb.values()) v = rng.normal();
  relief::EdgeSample s;
  s.pairs = {{0, 1}, {1, 2}, {0, 3}, {2, 3}};
  s.targets = {1, 1, 0, 0};
  double expect = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto [a, b] = s.pairs[k];
    const double l = relief::dot(emb.row(a), emb.row(b));
    const double p = 1.0 / (1.0 + std::exp(-l));
    expect += -(s.targets[k] * std::log(p) + (1 - s.targets[k]) * std::log(1 - p));
  }
  Matrix d;
  CHECK(relief::masked_edge_loss(emb, s, &d) == doctest::Approx(expect / 4).epsilon(1e-12));
  const double h = 1e-6;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    Matrix up = emb, dn = emb;
    up.values()[i] += h;
    dn.values()[i] -= h;
    const double fd =
        (relief::masked_edge_loss(up, s, nullptr) - relief::masked_edge_loss(dn, s, nullptr)) / (2 * h);
    if (std::abs(fd) > 1e-8) CHECK(rel_err(fd, d.values()[i]) < 1e-5);
  }
  // zero embeddings: every logit is 0
  CHECK(relief::masked_edge_loss(Matrix(4, 3), s, nullptr) == doctest::Approx(std::numbers::ln2));
}

TEST_CASE("contrastive loss examples") {
  const std::vector<double> v{0.3, -0.7};
  CHECK(relief::contrastive_loss(v, v, {v}, 1.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-14));

  // anchor [1,0], positive [0.5,0.5], negative [-1,1], tau 0.5:
  // logits 1 and -2, loss = log(1 + e^-3)
  const double manual = std::log(1.0 + std::exp(-3.0));
  CHECK(std::abs(relief::contrastive_loss(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5},
                                          {{-1, 1}}, 0.5) -
                 manual) < 1e-10);

  relief::Rng rng(2);
  std::vector<double> a(3), p(3);
  std::vector<std::vector<double>> negs(4, std::vector<double>(3));
  for (auto* vec : {&a, &p}) for (double& x : *vec) x = rng.normal();
  for (auto& n : negs) for (double& x : n) x = rng.normal();
  CHECK(relief::contrastive_loss(a, p, negs, 1e6) == doctest::Approx(std::log(5.0)).epsilon(1e-5));
  CHECK_THROWS_AS(relief::contrastive_loss(a, p, negs, 0.0), relief::ConfigError);
}

TEST_CASE("contrastive loss gradients") {
  relief::Rng rng(7);
  std::vector<double> a(3), p(3);
  std::vector<std::vector<double>> negs(3, std::vector<double>(3));
  for (auto* vec : {&a, &p}) for (double& x : *vec) x = rng.normal();
  for (auto& n : negs) for (double& x : n) x = rng.normal();
  std::vector<double> da, dp;
  std::vector<std::vector<double>> dn;
  relief::contrastive_loss(a, p, negs, 0.7, &da, &dp, &dn);
  const double h = 1e-6;
  auto fd = [&](double& x) {
    const double keep = x;
    x = keep + h;
    const double up = relief::contrastive_loss(a, p, negs, 0.7);
    x = keep - h;
    const double down = relief::contrastive_loss(a, p, negs, 0.7);
    x = keep;
    return (up - down) / (2 * h);
  };
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(rel_err(fd(a[c]), da[c]) < 1e-5);
    CHECK(rel_err(fd(p[c]), dp[c]) < 1e-5);
    for (std::size_t k = 0; k < 3; ++k) CHECK(rel_err(fd(negs[k][c]), dn[k][c]) < 1e-5);
  }
}

TEST_CASE("attribute masking covers exactly the chosen nodes") {
  relief::Rng rng(4);
  const auto masked = relief::choose_masked_nodes(5, 0.2, rng);
  REQUIRE(masked.size() == 1);
  CHECK(relief::choose_masked_nodes(5, 0.1, rng).empty());

  GinModel gnn = small_gin(3, 1.0, 9);
  const relief::Mlp head({16, 3}, rng);
  Matrix x(5, 3);
  for (double& v : x.values()) v = rng.normal();
  const relief::Graph g(x, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  Matrix zeroed = x;
  for (double& v : zeroed.row(masked[0])) v = 0.0;
  const Matrix emb = gnn.forward(g, zeroed);
  Matrix row(1, 16);
  std::copy(emb.row(masked[0]).begin(), emb.row(masked[0]).end(), row.row(0).begin());
  const Matrix rec = head.forward(row);
  double expect = 0.0;
  for (std::size_t j = 0; j < 3; ++j) expect += std::pow(rec(0, j) - x(masked[0], j), 2);
  CHECK(relief::attr_mask_loss(gnn, head, g, masked, nullptr, nullptr) == doctest::Approx(expect / 3).epsilon(1e-12));
}

TEST_CASE("attribute masking gradients") {
  relief::Rng rng(6);
  GinModel gnn = small_gin(3, 1.0, 2);
  relief::Mlp head({16, 3}, rng);
  Matrix x(5, 3);
  for (double& v : x.values()) v = rng.normal();
  const relief::Graph g(x, {{0, 1}, {1, 2}, {1, 3}, {3, 4}});
  const std::vector<std::size_t> masked{1, 4};
  std::vector<Matrix> gg, hg;
  relief::attr_mask_loss(gnn, head, g, masked, &gg, &hg);
  const double h = 1e-6;
  auto check_params = [&](std::vector<Matrix*> params, const std::vector<Matrix>& grads) {
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t i = 0; i < params[p]->size(); i += 3) {
        double& w = params[p]->values()[i];
        const double keep = w;
        w = keep + h;
        const double up = relief::attr_mask_loss(gnn, head, g, masked, nullptr, nullptr);
        w = keep - h;
        const double down = relief::attr_mask_loss(gnn, head, g, masked, nullptr, nullptr);
        w = keep;
        const double fd = (up - down) / (2 * h);
        if (std::abs(fd) + std::abs(grads[p].values()[i]) > 1e-7) CHECK(rel_err(fd, grads[p].values()[i]) < 1e-4);
      }
  };
  check_params(gnn.parameters(), gg);
  check_params(head.parameters(), hg);
}

TEST_CASE("masked edge pre-training starts at chance and learns the two-block structure") {
  const relief::Dataset data = two_block();
  const relief::Dataset before = data;
  GinModel gnn = small_gin(data.feature_dim(), 0.3, 1, 32);
  relief::PretrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 1;
  const auto r = relief::pretrain(gnn, data, cfg);
  CHECK(std::abs(r.initial_loss - std::numbers::ln2) < 0.15);
  REQUIRE(r.loss_curve.size() == 50);
  for (double l : r.loss_curve) CHECK(std::isfinite(l));
  CHECK(r.loss_curve.back() <= 0.7 * r.initial_loss);
  CHECK(relief::dataset_to_jsonl(data) == relief::dataset_to_jsonl(before));
}

TEST_CASE("pre-training is reproducible") {
  const relief::Dataset data = two_block();
  for (auto s : {relief::PretrainStrategy::masked_edge, relief::PretrainStrategy::contra_edge,
                 relief::PretrainStrategy::attr_mask}) {
    relief::PretrainConfig cfg;
    cfg.strategy = s;
    cfg.epochs = 3;
    cfg.seed = 4;
    GinModel a = small_gin(data.feature_dim(), 0.3, 1), b = small_gin(data.feature_dim(), 0.3, 1);
    relief::pretrain(a, data, cfg);
    relief::pretrain(b, data, cfg);
    CHECK(a.to_checkpoint().dump() == b.to_checkpoint().dump());
    CHECK_FALSE(a.same_parameters(small_gin(data.feature_dim(), 0.3, 1)));
  }
}

TEST_CASE("contrastive pre-training lowers its loss") {
  const relief::Dataset data = two_block();
  GinModel gnn = small_gin(data.feature_dim(), 0.3, 1);
  relief::PretrainConfig cfg;
  cfg.strategy = relief::PretrainStrategy::contra_edge;
  cfg.epochs = 30;
  const auto r = relief::pretrain(gnn, data, cfg);
  CHECK(r.loss_curve.back() < r.initial_loss);
}

TEST_CASE("attribute masking reconstruction improves on low-noise features") {
  const relief::Dataset data = two_block(0.2);
  GinModel gnn = small_gin(data.feature_dim(), 0.3, 1);
  relief::PretrainConfig cfg;
  cfg.strategy = relief::PretrainStrategy::attr_mask;
  cfg.epochs = 50;
  cfg.mask_fraction = 0.15;
  const auto r = relief::pretrain(gnn, data, cfg);
  CHECK(r.loss_curve.back() < 0.7 * r.initial_loss);
}

TEST_CASE("attribute masking can fit constant features") {
  relief::Dataset data;
  relief::Rng rng(1);
  for (int i = 0; i < 8; ++i) {
    data.graphs.emplace_back(Matrix(6, 2, 1.0), std::vector<relief::Edge>{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}},
                             relief::Label::single(i % 2));
  }
  data.validate();
  GinModel gnn = small_gin(2, 0.3, 1);
  relief::PretrainConfig cfg;
  cfg.strategy = relief::PretrainStrategy::attr_mask;
  cfg.epochs = 200;
  cfg.lr = 1e-2;
  cfg.mask_fraction = 0.2;
  const auto r = relief::pretrain(gnn, data, cfg);
  CHECK(r.loss_curve.back() < 1e-3);
}

TEST_CASE("frozen models and unusable data are rejected") {
  relief::Dataset data;
  data.graphs.emplace_back(Matrix(1, 2, 1.0), std::vector<relief::Edge>{}, relief::Label::single(0));
  data.graphs.emplace_back(Matrix(1, 2, 2.0), std::vector<relief::Edge>{}, relief::Label::single(1));
  data.validate();
  GinModel gnn = small_gin(2, 0.3, 1);
  relief::PretrainConfig cfg;
  CHECK_THROWS_AS(relief::pretrain(gnn, data, cfg), relief::DataError);
  GinModel frozen = small_gin(2, 0.3, 1);
  frozen.freeze();
  CHECK_THROWS_AS(relief::pretrain(frozen, two_block(), cfg), relief::FrozenModelError);
}
