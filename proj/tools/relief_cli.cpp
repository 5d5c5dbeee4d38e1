#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relief/checkpoint.hpp"
#include "relief/config.hpp"
#include "relief/gin.hpp"
#include "relief/graph.hpp"
#include "relief/kernels.hpp"
#include "relief/pretrain.hpp"
#include "relief/relief.hpp"

namespace fs = std::filesystem;
using namespace relief;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    if (!force) throw ConfigError(dir.string() + " already exists; pass --force to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void guard_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw ConfigError(file.string() + " already exists; pass --force to replace it");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Dataset load_checked(const fs::path& path) {
  Dataset d = load_dataset(path);
  d.validate();
  return d;
}

GinModel load_frozen_gnn(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint " + path.string() + " does not exist");
  GinModel g = GinModel::from_checkpoint(Checkpoint::load(path));
  g.freeze();
  return g;
}

// ---------------------------------------------------------------------------
// Shared tuning options.

struct TuneArgs {
  std::string data;
  std::string gnn;
  std::string out;
  std::string config;
  std::vector<std::string> sets;
  std::string method = "relief";
  std::string split_file;
  double train_frac = 0.8;
  double valid_frac = 0.1;
  double test_frac = 0.1;
  std::optional<std::size_t> train_count, valid_count, test_count, shots;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_tune_options(CLI::App* cmd, TuneArgs& a) {
  cmd->add_option("--data", a.data, "JSON-lines dataset")->required();
  cmd->add_option("--gnn", a.gnn, "pre-trained GNN checkpoint (kept frozen)")->required();
  cmd->add_option("--out", a.out, "run directory")->required();
  cmd->add_option("--config", a.config, "key = value config file");
  cmd->add_option("--set", a.sets, "override one config key (key=value); repeatable, beats --config");
  cmd->add_option("--baseline", a.method, "relief, fine_tune, linear_probe, random_d or random_c");
  cmd->add_option("--split", a.split_file, "split JSON with train/valid/test index lists");
  cmd->add_option("--train-frac", a.train_frac, "training share when no split file is given");
  cmd->add_option("--valid-frac", a.valid_frac, "validation share");
  cmd->add_option("--test-frac", a.test_frac, "test share");
  cmd->add_option("--train-count", a.train_count, "explicit training size");
  cmd->add_option("--valid-count", a.valid_count, "explicit validation size");
  cmd->add_option("--test-count", a.test_count, "explicit test size");
  cmd->add_option("--shots", a.shots, "keep only this many training graphs");
  cmd->add_option("--seed", a.seed, "top-level seed; beats config files and --set");
  cmd->add_flag("--force", a.force, "replace an existing run directory");
}

RunConfig resolve_config(const TuneArgs& a, const Dataset& data) {
  RunConfig rc;
  if (!a.config.empty()) rc.merge_file(a.config);
  for (const std::string& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) rc.relief().seed = *a.seed;
  rc.relief().level = data.task_kind == TaskKind::node_classification ? TaskLevel::node : TaskLevel::graph;
  rc.validate();
  return rc;
}

Split resolve_split(const TuneArgs& a, const Dataset& data, std::uint64_t seed) {
  if (!a.split_file.empty()) return load_split(a.split_file);
  SplitSpec spec;
  spec.train = a.train_frac;
  spec.valid = a.valid_frac;
  spec.test = a.test_frac;
  spec.train_count = a.train_count;
  spec.valid_count = a.valid_count;
  spec.test_count = a.test_count;
  spec.shot_count = a.shots;
  spec.seed = seed;
  return split_dataset(data.size(), spec);
}

/// Trains one method into `dir` and returns its report.
RunReport run_into(const fs::path& dir, Method method, const Dataset& data, const Split& split, const GinModel& gnn,
                   const RunConfig& rc) {
  write_text(dir / "config.snapshot", rc.snapshot());
  save_split(dir / "split.json", split);
  TrainOptions opts;
  opts.checkpoint_dir = dir / "checkpoints";
  const RunResult res = run_method(method, data, split, gnn, rc.relief(), opts);
  write_text(dir / "report.json", res.report.to_json().dump(2) + "\n");
  std::ostringstream curves;
  write_curves_csv(res.report, curves);
  write_text(dir / "curves.csv", curves.str());
  if (res.agent) {
    std::ostringstream stats;
    write_policy_stats_csv(res.report, stats);
    write_text(dir / "policy_stats.csv", stats.str());
  }
  return res.report;
}

int cmd_tune(const TuneArgs& a) {
  const Method method = parse_method(a.method);
  const GinModel gnn = load_frozen_gnn(a.gnn);
  const Dataset data = load_checked(a.data);
  const RunConfig rc = resolve_config(a, data);
  const Split split = resolve_split(a, data, rc.relief().seed);
  prepare_output_dir(a.out, a.force);
  const RunReport r = run_into(a.out, method, data, split, gnn, rc);
  std::cout << "method=" << r.method << " best_epoch=" << r.best_epoch << " test_" << r.metric_name << "="
            << r.test_at_best.metric << " pcr=" << r.test_impact.mean_pcr << " apm=" << r.test_impact.mean_apm
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  TuneArgs tune;
  std::vector<double> fractions;
};

int cmd_sweep(const SweepArgs& s) {
  const TuneArgs& a = s.tune;
  if (s.fractions.empty()) throw ConfigError("--fractions needs at least one value");
  for (double f : s.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fraction " + std::to_string(f) + " is outside (0, 1]");
  }
  const Method method = parse_method(a.method);
  const GinModel gnn = load_frozen_gnn(a.gnn);
  const Dataset data = load_checked(a.data);
  const RunConfig rc = resolve_config(a, data);
  const Split full = resolve_split(a, data, rc.relief().seed);
  prepare_output_dir(a.out, a.force);

  std::vector<std::size_t> pool = full.train;
  Rng order(rc.relief().seed);
  order.shuffle(pool);
  std::vector<double> metrics;
  std::ostringstream csv;
  csv << "fraction,metric\n";
  for (std::size_t k = 0; k < s.fractions.size(); ++k) {
    const double f = s.fractions[k];
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(f * static_cast<double>(pool.size()))));
    Split sub = full;
    sub.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(count, pool.size())));
    std::sort(sub.train.begin(), sub.train.end());
    const fs::path dir = fs::path(a.out) / ("fraction_" + std::to_string(k));
    fs::create_directories(dir);
    const RunReport r = run_into(dir, method, data, sub, gnn, rc);
    metrics.push_back(r.test_at_best.metric);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", f);
    csv << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.test_at_best.metric);
    csv << buf << '\n';
  }
  bool monotone = true;
  for (std::size_t k = 1; k < metrics.size(); ++k) monotone = monotone && metrics[k] >= metrics[k - 1];
  write_text(fs::path(a.out) / "sweep.csv", csv.str());
  nlohmann::json j{{"fractions", s.fractions}, {"metrics", metrics}, {"monotone_nondecreasing", monotone}};
  write_text(fs::path(a.out) / "sweep.json", j.dump(2) + "\n");
  std::cout << csv.str() << "monotone_nondecreasing=" << (monotone ? "true" : "false") << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string gnn;
  std::string run;
  std::string split_name = "test";
  std::string out;
  bool force = false;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path run(a.run);
  const fs::path ckpt = run / "checkpoints";
  if (!fs::exists(ckpt / "head.json")) throw CheckpointError("no head checkpoint under " + ckpt.string());
  RunConfig rc;
  rc.merge_file(run / "config.snapshot");
  const Split split = load_split(run / "split.json");
  const Dataset data = load_checked(a.data);
  rc.relief().level = data.task_kind == TaskKind::node_classification ? TaskLevel::node : TaskLevel::graph;

  std::string method = "relief";
  if (fs::exists(run / "report.json")) {
    method = nlohmann::json::parse(read_text(run / "report.json")).value("method", method);
  }
  ActionOverrides ov;
  if (method == "random_d") ov.random_discrete = true;
  if (method == "random_c") ov.random_continuous = true;

  GinModel gnn = fs::exists(ckpt / "gnn.json") ? load_frozen_gnn(ckpt / "gnn.json") : load_frozen_gnn(a.gnn);
  const Mlp head = head_from_checkpoint(Checkpoint::load(ckpt / "head.json"));
  std::optional<HppoAgent> agent;
  if (fs::exists(ckpt / "policy.json")) {
    agent = HppoAgent::from_checkpoint(Checkpoint::load(ckpt / "policy.json"), rc.relief().ppo);
  }
  const std::vector<std::size_t>* idx = nullptr;
  if (a.split_name == "train") idx = &split.train;
  if (a.split_name == "valid") idx = &split.valid;
  if (a.split_name == "test") idx = &split.test;
  if (idx == nullptr) throw ConfigError("--split must be train, valid or test");

  EvalOptions eo;
  eo.z_max = rc.relief().z_max;
  eo.max_nodes = agent ? agent->dims().max_nodes : data.max_nodes();
  eo.overrides = ov;
  eo.seed = rc.relief().seed;
  const EvalResult r = evaluate(data, *idx, gnn, head, agent ? &*agent : nullptr, eo);
  nlohmann::json j{{"split", a.split_name},         {"method", method},
                   {"metric", r.scores.metric},     {"accuracy", r.scores.accuracy},
                   {"macro_f1", r.scores.macro_f1}, {"mean_reward", r.scores.mean_reward},
                   {"pcr", r.impact.mean_pcr},      {"apm", r.impact.mean_apm},
                   {"overall", r.impact.mean_overall}, {"max_abs_prompt", r.max_abs_prompt}};
  if (a.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    guard_file(a.out, a.force);
    write_text(a.out, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string data;
  std::string strategy;
  std::string out;
  GinConfig gin;
  PretrainConfig cfg;
  bool force = false;
};

int cmd_pretrain(PretrainArgs a) {
  a.cfg.strategy = parse_pretrain_strategy(a.strategy);
  a.cfg.validate();
  const Dataset data = load_checked(a.data);
  a.gin.input_dim = data.feature_dim();
  prepare_output_dir(a.out, a.force);
  Rng rng(a.cfg.seed);
  GinModel model(a.gin, rng);
  const PretrainResult r = pretrain(model, data, a.cfg);
  model.to_checkpoint().save(fs::path(a.out) / "gnn.json");
  std::ostringstream csv;
  csv << "epoch,loss\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.initial_loss);
  csv << "0," << buf << '\n';
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss_curve[e]);
    csv << e + 1 << ',' << buf << '\n';
  }
  write_text(fs::path(a.out) / "loss.csv", csv.str());
  std::cout << "strategy=" << to_string(a.cfg.strategy) << " initial_loss=" << r.initial_loss
            << " final_loss=" << (r.loss_curve.empty() ? r.initial_loss : r.loss_curve.back()) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SyntheticSpec spec;
  std::string signal = "feature_mean";
  std::string structure = "tree";
  std::string out;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_synth(SynthArgs a) {
  a.spec.signal = parse_signal_kind(a.signal);
  a.spec.structure = parse_structure(a.structure);
  a.spec.validate();
  guard_file(a.out, a.force);
  const Dataset d = generate_synthetic(a.spec, a.seed);
  save_dataset(a.out, d);
  std::cout << "wrote " << d.size() << " graphs to " << a.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learned feature prompting for frozen graph neural networks"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads; 1 gives the reference serial path")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic graph classification dataset");
  c_synth->add_option("--out", synth.out, "output JSON-lines file")->required();
  c_synth->add_option("--classes", synth.spec.num_classes, "number of classes");
  c_synth->add_option("--per-class", synth.spec.graphs_per_class, "graphs per class");
  c_synth->add_option("--min-nodes", synth.spec.min_nodes, "smallest graph");
  c_synth->add_option("--max-nodes", synth.spec.max_nodes, "largest graph");
  c_synth->add_option("--dim", synth.spec.feature_dim, "node feature width");
  c_synth->add_option("--signal", synth.signal, "feature_mean, motif or marker");
  c_synth->add_option("--strength", synth.spec.signal_strength, "class signal scale");
  c_synth->add_option("--motif-size", synth.spec.motif_size, "planted clique size");
  c_synth->add_option("--structure", synth.structure, "tree or two_block");
  c_synth->add_option("--edge-prob", synth.spec.edge_prob, "extra edge probability (tree)");
  c_synth->add_option("--p-in", synth.spec.p_in, "within-block edge probability (two_block)");
  c_synth->add_option("--p-out", synth.spec.p_out, "across-block edge probability (two_block)");
  c_synth->add_option("--noise", synth.spec.noise, "feature noise scale");
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_flag("--force", synth.force, "replace an existing file");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "self-supervised GIN pre-training");
  c_pre->add_option("--data", pre.data, "JSON-lines dataset")->required();
  c_pre->add_option("--strategy", pre.strategy, "masked_edge, contra_edge or attr_mask")->required();
  c_pre->add_option("--out", pre.out, "output directory (gnn.json, loss.csv)")->required();
  c_pre->add_option("--epochs", pre.cfg.epochs, "training epochs");
  c_pre->add_option("--lr", pre.cfg.lr, "Adam learning rate");
  c_pre->add_option("--batch-size", pre.cfg.batch_size, "graphs per step");
  c_pre->add_option("--negative-ratio", pre.cfg.negative_ratio, "masked_edge negatives per edge");
  c_pre->add_option("--temperature", pre.cfg.temperature, "contra_edge temperature");
  c_pre->add_option("--negatives", pre.cfg.negatives_per_node, "contra_edge negatives per anchor");
  c_pre->add_option("--mask-fraction", pre.cfg.mask_fraction, "attr_mask node share");
  c_pre->add_option("--hidden", pre.gin.hidden_dim, "embedding width");
  c_pre->add_option("--layers", pre.gin.num_layers, "GIN layers");
  c_pre->add_option("--dropout", pre.gin.dropout, "dropout during pre-training");
  c_pre->add_option("--init-scale", pre.gin.init_scale, "output-weight scale at init");
  c_pre->add_option("--seed", pre.cfg.seed, "seed");
  c_pre->add_flag("--force", pre.force, "replace an existing output directory");

  TuneArgs tune;
  auto* c_tune = app.add_subcommand("tune", "train prompting policies and a projection head on a frozen GNN");
  add_tune_options(c_tune, tune);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate the best checkpoints of a tune run");
  c_eval->add_option("--data", ev.data, "JSON-lines dataset")->required();
  c_eval->add_option("--gnn", ev.gnn, "pre-trained GNN checkpoint")->required();
  c_eval->add_option("--run", ev.run, "run directory written by tune")->required();
  c_eval->add_option("--split", ev.split_name, "train, valid or test");
  c_eval->add_option("--out", ev.out, "write the JSON result here instead of stdout");
  c_eval->add_flag("--force", ev.force, "replace an existing output file");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "metric against training-set fraction");
  add_tune_options(c_sweep, sweep.tune);
  c_sweep->add_option("--fractions", sweep.fractions, "training fractions in (0, 1]")
      ->required()
      ->delimiter(',');

  app.footer(
      "Config precedence: --seed > --set key=value > --config file > built-in defaults.\n"
      "Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical failure.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    kernels::set_threads(threads);
    if (*c_synth) return cmd_synth(synth);
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_tune) return cmd_tune(tune);
    if (*c_eval) return cmd_eval(ev);
    if (*c_sweep) return cmd_sweep(sweep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
