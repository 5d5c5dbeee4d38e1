#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relief/kernels.hpp"
#include "relief/tensor.hpp"

namespace relief {

/// Bad or inconsistent graph data (invariant violations, schema mismatches).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset file; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Invalid user configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A class id for single-label tasks, or a 0/1 vector for multi-label ones.
struct Label {
  int cls = -1;
  std::vector<int> tasks;

  static Label single(int c) { return Label{c, {}}; }
  static Label multi(std::vector<int> t) { return Label{-1, std::move(t)}; }
  bool is_multi() const { return !tasks.empty(); }
  bool operator==(const Label&) const = default;
};

using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected graph with node features. Edges are canonical (i ≤ j),
/// sorted and unique; adjacency is derived on demand.
class Graph {
 public:
  Graph() = default;
  /// Validates indices and canonicalises the edge list.
  Graph(Matrix features, std::vector<Edge> edges, Label label = {},
        std::vector<int> node_labels = {});

  std::size_t num_nodes() const { return features_.rows(); }
  std::size_t feature_dim() const { return features_.cols(); }
  const Matrix& features() const { return features_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Label& label() const { return label_; }
  void set_label(Label l) { label_ = std::move(l); }
  /// Per-node class ids for node-level tasks; empty otherwise.
  const std::vector<int>& node_labels() const { return node_labels_; }

  /// Sorted neighbor lists in compressed form, both directions per edge.
  struct Adjacency {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> indices;
    kernels::CsrView view() const { return {offsets, indices}; }
    std::span<const std::size_t> neighbors(std::size_t v) const {
      return {indices.data() + offsets[v], offsets[v + 1] - offsets[v]};
    }
  };
  const Adjacency& adjacency() const { return adj_; }
  bool has_edge(std::size_t i, std::size_t j) const;

  bool operator==(const Graph& o) const {
    return features_ == o.features_ && edges_ == o.edges_ && label_ == o.label_ &&
           node_labels_ == o.node_labels_;
  }

 private:
  Matrix features_;
  std::vector<Edge> edges_;
  Label label_;
  std::vector<int> node_labels_;
  Adjacency adj_;
};

enum class TaskKind { graph_classification, node_classification };

struct Dataset {
  std::vector<Graph> graphs;
  TaskKind task_kind = TaskKind::graph_classification;
  /// Classes for single-label tasks; 0 when multi-label.
  std::size_t num_classes = 0;
  /// Binary tasks for multi-label data; 0 when single-label.
  std::size_t num_tasks = 0;

  std::size_t size() const { return graphs.size(); }
  std::size_t max_nodes() const;
  std::size_t feature_dim() const;
  bool multi_label() const { return num_tasks > 0; }
  /// Width of the prediction head.
  std::size_t output_dim() const { return multi_label() ? num_tasks : num_classes; }

  /// Checks shared feature width and label consistency; fills in class/task
  /// counts when they are 0.
  void validate();
  Dataset subset(std::span<const std::size_t> idx) const;
};

/// Reads the JSON-lines graph format: one {"x","edges","y"} object per line.
/// Records with "task": "node" carry per-node labels in "y" and a hop count
/// "k"; each labelled node becomes one induced k-hop subgraph.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& d);
std::string dataset_to_jsonl(const Dataset& d);

/// Subgraph of nodes within k hops of `center`, center re-indexed to 0 and the
/// rest in BFS discovery order (neighbors visited ascending). The label is the
/// center's node label when the graph has node labels, else the graph label.
Graph induce_khop_subgraph(const Graph& g, std::size_t center, std::size_t k);

/// One induced subgraph per node with a non-negative node label.
Dataset node_task_dataset(const Graph& g, std::size_t k);

/// Keeps the first `dim` feature columns (deterministic feature reduction).
Dataset truncate_features(const Dataset& d, std::size_t dim);

struct SplitSpec {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
  /// Explicit sizes override the fractions when set.
  std::optional<std::size_t> train_count, valid_count, test_count;
  std::optional<std::size_t> shot_count;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train, valid, test;
};

Split split_dataset(std::size_t m, const SplitSpec& spec);
void save_split(const std::filesystem::path& path, const Split& s);
Split load_split(const std::filesystem::path& path);

enum class SignalKind { feature_mean, motif, marker };
enum class Structure { tree, two_block };

struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t graphs_per_class = 10;
  std::size_t min_nodes = 8;
  std::size_t max_nodes = 12;
  std::size_t feature_dim = 8;
  SignalKind signal = SignalKind::feature_mean;
  double signal_strength = 1.0;
  std::size_t motif_size = 3;
  Structure structure = Structure::tree;
  /// Extra random edges on top of the spanning tree (tree structure).
  double edge_prob = 0.1;
  double p_in = 0.6;
  double p_out = 0.05;
  double noise = 1.0;

  void validate() const;
};

/// Deterministic for a fixed seed. Class c shifts features along a class
/// direction scaled by signal_strength: on every node (feature_mean), on a
/// planted clique (motif), or on one node with a class-specific sign pattern
/// (marker).
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

SignalKind parse_signal_kind(const std::string& s);
Structure parse_structure(const std::string& s);

}  // namespace relief
