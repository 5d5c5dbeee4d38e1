#include "relief/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include <nlohmann/json.hpp>

namespace relief {

using nlohmann::json;

Graph::Graph(Matrix features, std::vector<Edge> edges, Label label, std::vector<int> node_labels)
    : features_(std::move(features)), label_(std::move(label)), node_labels_(std::move(node_labels)) {
  const std::size_t n = features_.rows();
  if (n == 0) throw DataError("graph has no nodes");
  if (!node_labels_.empty() && node_labels_.size() != n) {
    throw DataError("node label count " + std::to_string(node_labels_.size()) +
                    " != node count " + std::to_string(n));
  }
  for (auto& [i, j] : edges) {
    if (i >= n || j >= n) {
      throw DataError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                      ") out of range for " + std::to_string(n) + " nodes");
    }
    if (i > j) std::swap(i, j);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);

  std::vector<std::size_t> degree(n, 0);
  for (const auto& [i, j] : edges_) {
    ++degree[i];
    if (i != j) ++degree[j];
  }
  adj_.offsets.assign(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) adj_.offsets[v + 1] = adj_.offsets[v] + degree[v];
  adj_.indices.assign(adj_.offsets[n], 0);
  std::vector<std::size_t> fill(adj_.offsets.begin(), adj_.offsets.end() - 1);
  for (const auto& [i, j] : edges_) {
    adj_.indices[fill[i]++] = j;
    if (i != j) adj_.indices[fill[j]++] = i;
  }
  for (std::size_t v = 0; v < n; ++v) {
    std::sort(adj_.indices.begin() + static_cast<std::ptrdiff_t>(adj_.offsets[v]),
              adj_.indices.begin() + static_cast<std::ptrdiff_t>(adj_.offsets[v + 1]));
  }
}

bool Graph::has_edge(std::size_t i, std::size_t j) const {
  if (i > j) std::swap(i, j);
  return std::binary_search(edges_.begin(), edges_.end(), Edge{i, j});
}

std::size_t Dataset::max_nodes() const {
  std::size_t n = 0;
  for (const auto& g : graphs) n = std::max(n, g.num_nodes());
  return n;
}

std::size_t Dataset::feature_dim() const { return graphs.empty() ? 0 : graphs.front().feature_dim(); }

void Dataset::validate() {
  if (graphs.empty()) throw DataError("empty dataset");
  const std::size_t dim = graphs.front().feature_dim();
  bool multi = graphs.front().label().is_multi();
  std::size_t tasks = multi ? graphs.front().label().tasks.size() : 0;
  int max_cls = -1;
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const Graph& gr = graphs[g];
    if (gr.feature_dim() != dim) {
      throw DataError("graph " + std::to_string(g) + " has feature dim " +
                      std::to_string(gr.feature_dim()) + ", expected " + std::to_string(dim));
    }
    if (gr.label().is_multi() != multi) throw DataError("graph " + std::to_string(g) + " mixes label kinds");
    if (multi) {
      if (gr.label().tasks.size() != tasks) {
        throw DataError("graph " + std::to_string(g) + " has " +
                        std::to_string(gr.label().tasks.size()) + " labels, expected " +
                        std::to_string(tasks));
      }
      for (int t : gr.label().tasks) {
        if (t != 0 && t != 1) throw DataError("graph " + std::to_string(g) + " has a non-binary label");
      }
    } else {
      if (gr.label().cls < 0) throw DataError("graph " + std::to_string(g) + " has no label");
      max_cls = std::max(max_cls, gr.label().cls);
    }
  }
  if (multi) {
    num_tasks = tasks;
    num_classes = 0;
  } else {
    const auto seen = static_cast<std::size_t>(max_cls + 1);
    if (num_classes == 0) num_classes = std::max<std::size_t>(seen, 2);
    if (seen > num_classes) throw DataError("label exceeds class count");
    num_tasks = 0;
  }
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out;
  out.task_kind = task_kind;
  out.num_classes = num_classes;
  out.num_tasks = num_tasks;
  for (std::size_t i : idx) {
    if (i >= graphs.size()) throw DataError("subset index out of range");
    out.graphs.push_back(graphs[i]);
  }
  return out;
}

namespace {

Matrix parse_features(const json& x, std::size_t line) {
  if (!x.is_array() || x.empty()) throw ParseError(line, "\"x\" must be a non-empty array of rows");
  const std::size_t n = x.size();
  const std::size_t dim = x[0].is_array() ? x[0].size() : 0;
  if (dim == 0) throw ParseError(line, "feature rows must be non-empty arrays");
  Matrix m(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (!x[i].is_array() || x[i].size() != dim) throw ParseError(line, "ragged feature matrix");
    for (std::size_t j = 0; j < dim; ++j) {
      if (!x[i][j].is_number()) throw ParseError(line, "non-numeric feature");
      m(i, j) = x[i][j].get<double>();
    }
  }
  if (!m.all_finite()) throw ParseError(line, "non-finite feature");
  return m;
}

std::vector<Edge> parse_edges(const json& e, std::size_t line) {
  std::vector<Edge> edges;
  if (e.is_null()) return edges;
  if (!e.is_array()) throw ParseError(line, "\"edges\" must be an array");
  for (const auto& p : e) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer() ||
        p[0].get<long long>() < 0 || p[1].get<long long>() < 0) {
      throw ParseError(line, "edge must be a pair of non-negative integers");
    }
    edges.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
  }
  return edges;
}

std::vector<int> parse_int_array(const json& y, std::size_t line) {
  std::vector<int> out;
  for (const auto& v : y) {
    if (!v.is_number_integer()) throw ParseError(line, "labels must be integers");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

Dataset parse_dataset(std::istream& in) {
  Dataset d;
  std::string text;
  std::size_t line = 0;
  std::size_t node_records = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object() || !rec.contains("x")) throw ParseError(line, "record must be an object with \"x\"");
    Matrix x = parse_features(rec["x"], line);
    std::vector<Edge> edges = parse_edges(rec.value("edges", json()), line);
    const bool node_task = rec.value("task", std::string("graph")) == "node";
    try {
      if (node_task) {
        if (!rec.contains("y") || !rec["y"].is_array()) throw ParseError(line, "node task needs per-node \"y\"");
        std::vector<int> node_labels = parse_int_array(rec["y"], line);
        const auto k = rec.value("k", std::size_t{2});
        Graph g(std::move(x), std::move(edges), {}, std::move(node_labels));
        Dataset sub = node_task_dataset(g, k);
        for (auto& sg : sub.graphs) d.graphs.push_back(std::move(sg));
        ++node_records;
      } else {
        Label label;
        if (!rec.contains("y")) throw ParseError(line, "missing label \"y\"");
        if (rec["y"].is_number_integer()) {
          label = Label::single(rec["y"].get<int>());
        } else if (rec["y"].is_array()) {
          label = Label::multi(parse_int_array(rec["y"], line));
        } else {
          throw ParseError(line, "\"y\" must be an integer or an array");
        }
        d.graphs.emplace_back(std::move(x), std::move(edges), std::move(label));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(line, "graph " + std::to_string(d.graphs.size()) + ": " + e.what());
    }
  }
  if (d.graphs.empty()) throw DataError("empty dataset");
  if (node_records > 0) d.task_kind = TaskKind::node_classification;
  d.validate();
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return parse_dataset(in);
}

std::string dataset_to_jsonl(const Dataset& d) {
  std::string out;
  for (const auto& g : d.graphs) {
    json rec;
    json x = json::array();
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      x.push_back(std::vector<double>(g.features().row(i).begin(), g.features().row(i).end()));
    }
    rec["x"] = std::move(x);
    json e = json::array();
    for (const auto& [i, j] : g.edges()) e.push_back({i, j});
    rec["edges"] = std::move(e);
    if (g.label().is_multi()) {
      rec["y"] = g.label().tasks;
    } else {
      rec["y"] = g.label().cls;
    }
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  out << dataset_to_jsonl(d);
}

Graph induce_khop_subgraph(const Graph& g, std::size_t center, std::size_t k) {
  if (center >= g.num_nodes()) throw DataError("center node out of range");
  const auto& adj = g.adjacency();
  constexpr std::size_t unseen = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dist(g.num_nodes(), unseen);
  std::vector<std::size_t> order{center};
  dist[center] = 0;
  for (std::size_t head = 0; head < order.size(); ++head) {
    const std::size_t v = order[head];
    if (dist[v] == k) continue;
    for (std::size_t u : adj.neighbors(v)) {
      if (dist[u] == unseen) {
        dist[u] = dist[v] + 1;
        order.push_back(u);
      }
    }
  }
  std::vector<std::size_t> remap(g.num_nodes(), unseen);
  for (std::size_t i = 0; i < order.size(); ++i) remap[order[i]] = i;

  Matrix x = gather_rows(g.features(), order);
  std::vector<Edge> edges;
  for (const auto& [i, j] : g.edges()) {
    if (remap[i] != unseen && remap[j] != unseen) edges.emplace_back(remap[i], remap[j]);
  }
  Label label = g.label();
  if (!g.node_labels().empty()) label = Label::single(g.node_labels()[center]);
  return Graph(std::move(x), std::move(edges), std::move(label));
}

Dataset node_task_dataset(const Graph& g, std::size_t k) {
  if (g.node_labels().empty()) throw DataError("graph has no node labels");
  Dataset d;
  d.task_kind = TaskKind::node_classification;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (g.node_labels()[v] < 0) continue;
    d.graphs.push_back(induce_khop_subgraph(g, v, k));
  }
  return d;
}

Dataset truncate_features(const Dataset& d, std::size_t dim) {
  if (dim == 0 || dim > d.feature_dim()) throw ConfigError("truncation width out of range");
  Dataset out = d;
  for (auto& g : out.graphs) {
    Matrix x(g.num_nodes(), dim);
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      std::copy_n(g.features().row(i).begin(), dim, x.row(i).begin());
    }
    g = Graph(std::move(x), g.edges(), g.label(), g.node_labels());
  }
  return out;
}

Split split_dataset(std::size_t m, const SplitSpec& spec) {
  std::size_t n_train, n_valid, n_test;
  if (spec.train_count || spec.valid_count || spec.test_count) {
    n_train = spec.train_count.value_or(0);
    n_valid = spec.valid_count.value_or(0);
    n_test = spec.test_count.value_or(0);
    if (n_train + n_valid + n_test > m) {
      throw ConfigError("requested split sizes " + std::to_string(n_train + n_valid + n_test) +
                        " exceed dataset size " + std::to_string(m));
    }
  } else {
    if (!(spec.train > 0 && spec.valid > 0 && spec.test > 0)) {
      throw ConfigError("split fractions must be positive");
    }
    if (std::abs(spec.train + spec.valid + spec.test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must sum to 1");
    }
    n_valid = static_cast<std::size_t>(std::llround(spec.valid * static_cast<double>(m)));
    n_test = static_cast<std::size_t>(std::llround(spec.test * static_cast<double>(m)));
    if (n_valid + n_test > m) throw ConfigError("dataset too small for requested split");
    n_train = m - n_valid - n_test;
  }
  if (spec.shot_count && *spec.shot_count > n_train) {
    throw ConfigError("shot count " + std::to_string(*spec.shot_count) + " exceeds train size " +
                      std::to_string(n_train));
  }
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(idx);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid),
                idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid + n_test));
  // Train is already in random order, so the cap is a uniform subset.
  if (spec.shot_count) s.train.resize(*spec.shot_count);
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.valid.begin(), s.valid.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void save_split(const std::filesystem::path& path, const Split& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split " + path.string());
  out << json{{"train", s.train}, {"valid", s.valid}, {"test", s.test}}.dump() << '\n';
}

Split load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split " + path.string());
  json j = json::parse(in);
  return Split{j.at("train").get<std::vector<std::size_t>>(),
               j.at("valid").get<std::vector<std::size_t>>(),
               j.at("test").get<std::vector<std::size_t>>()};
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (graphs_per_class == 0) throw ConfigError("graphs_per_class must be positive");
  if (feature_dim == 0) throw ConfigError("feature dimension must be positive");
  if (min_nodes == 0 || min_nodes > max_nodes) throw ConfigError("invalid node-count range");
  if (signal == SignalKind::motif && min_nodes < motif_size) {
    throw ConfigError("node-count lower bound " + std::to_string(min_nodes) +
                      " is smaller than motif size " + std::to_string(motif_size));
  }
  if (signal == SignalKind::motif && motif_size == 0) throw ConfigError("motif size must be positive");
  if (signal_strength < 0.0 || noise < 0.0) throw ConfigError("strength and noise must be non-negative");
  for (double p : {edge_prob, p_in, p_out}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("edge probabilities must lie in [0,1]");
  }
}

namespace {

std::vector<Edge> random_tree(std::size_t n, double extra_p, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t v = 1; v < n; ++v) edges.emplace_back(rng.index(v), v);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(extra_p)) edges.emplace_back(i, j);
    }
  }
  return edges;
}

std::vector<Edge> two_block(std::size_t n, double p_in, double p_out, Rng& rng) {
  std::vector<Edge> edges;
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same = (i < half) == (j < half);
      if (rng.bernoulli(same ? p_in : p_out)) edges.emplace_back(i, j);
    }
  }
  return edges;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Dataset d;
  const std::size_t total = spec.num_classes * spec.graphs_per_class;
  const std::size_t dim = spec.feature_dim;
  for (std::size_t gi = 0; gi < total; ++gi) {
    const std::size_t cls = gi % spec.num_classes;
    const std::size_t n = spec.min_nodes + rng.index(spec.max_nodes - spec.min_nodes + 1);
    std::vector<Edge> edges = spec.structure == Structure::tree
                                  ? random_tree(n, spec.edge_prob, rng)
                                  : two_block(n, spec.p_in, spec.p_out, rng);
    Matrix x(n, dim);
    for (double& v : x.values()) v = spec.noise * rng.normal();

    // Class direction: unit vector on feature (cls mod dim).
    const std::size_t axis = cls % dim;
    switch (spec.signal) {
      case SignalKind::feature_mean:
        for (std::size_t i = 0; i < n; ++i) x(i, axis) += spec.signal_strength;
        break;
      case SignalKind::motif: {
        std::vector<std::size_t> nodes(n);
        std::iota(nodes.begin(), nodes.end(), 0);
        rng.shuffle(nodes);
        nodes.resize(spec.motif_size);
        for (std::size_t a = 0; a < nodes.size(); ++a) {
          x(nodes[a], axis) += spec.signal_strength;
          for (std::size_t b = a + 1; b < nodes.size(); ++b) edges.emplace_back(nodes[a], nodes[b]);
        }
        break;
      }
      case SignalKind::marker: {
        const std::size_t v = rng.index(n);
        x(v, axis) += spec.signal_strength;
        break;
      }
    }
    d.graphs.emplace_back(std::move(x), std::move(edges), Label::single(static_cast<int>(cls)));
  }
  d.num_classes = spec.num_classes;
  d.validate();
  return d;
}

SignalKind parse_signal_kind(const std::string& s) {
  if (s == "feature_mean") return SignalKind::feature_mean;
  if (s == "motif") return SignalKind::motif;
  if (s == "marker") return SignalKind::marker;
  throw ConfigError("unknown signal '" + s + "' (valid: feature_mean, motif, marker)");
}

Structure parse_structure(const std::string& s) {
  if (s == "tree") return Structure::tree;
  if (s == "two_block") return Structure::two_block;
  throw ConfigError("unknown structure '" + s + "' (valid: tree, two_block)");
}

}  // namespace relief
