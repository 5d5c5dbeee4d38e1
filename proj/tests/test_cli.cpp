#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(RELIEF_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// One synthetic dataset and pre-trained encoder shared by every case.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "relief_cli_test";
  std::string data, gnn;

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    data = (root / "data.jsonl").string();
    gnn = (root / "pre" / "gnn.json").string();
    REQUIRE(cli("synth --out " + data + " --per-class 10 --min-nodes 4 --max-nodes 6 --dim 4 --seed 1").code == 0);
    REQUIRE(cli("pretrain --data " + data + " --strategy masked_edge --out " + (root / "pre").string() +
                " --epochs 3 --hidden 8")
                .code == 0);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string tune(const std::string& out, const std::string& extra = "") const {
    return "tune --data " + data + " --gnn " + gnn + " --out " + (root / out).string() +
           " --set epochs=3 --set policy_hidden=8 --set l=2 " + extra;
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(cli("--help").code == 0);
  CHECK(cli("").code == 2);
  CHECK(cli("tune --data x").code == 2);
  CHECK(cli("synth --out /tmp/x.jsonl --bogus 1").code == 2);
}

TEST_CASE("synth refuses to overwrite without --force") {
  const auto& w = ws();
  const auto again = cli("synth --out " + w.data + " --per-class 10 --seed 1");
  CHECK(again.code == 2);
  CHECK(again.out.find("--force") != std::string::npos);
}

TEST_CASE("tune runs and is byte-identical across reruns") {
  const auto& w = ws();
  const auto a = cli(w.tune("run_a", "--seed 5"));
  REQUIRE(a.code == 0);
  CHECK(a.out.find("method=relief") != std::string::npos);
  const auto b = cli(w.tune("run_b", "--seed 5"));
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  for (const char* f : {"report.json", "curves.csv", "policy_stats.csv", "config.snapshot", "split.json",
                        "checkpoints/policy.json", "checkpoints/head.json", "checkpoints/state.json"}) {
    INFO(f);
    REQUIRE(fs::exists(w.root / "run_a" / f));
    CHECK(slurp(w.root / "run_a" / f) == slurp(w.root / "run_b" / f));
  }
  const auto report = nlohmann::json::parse(slurp(w.root / "run_a" / "report.json"));
  CHECK(report["method"] == "relief");
  CHECK(report["epochs"].size() == 3);

  // the snapshot records the effective seed
  CHECK(slurp(w.root / "run_a" / "config.snapshot").find("seed = 5\n") != std::string::npos);

  CHECK(cli(w.tune("run_a", "--seed 5")).code == 2);
  CHECK(cli(w.tune("run_a", "--seed 6 --force")).code == 0);
  CHECK(slurp(w.root / "run_a" / "report.json") != slurp(w.root / "run_b" / "report.json"));
}

TEST_CASE("eval reproduces the reported test metric") {
  const auto& w = ws();
  REQUIRE(cli(w.tune("run_eval", "--seed 3")).code == 0);
  const auto report = nlohmann::json::parse(slurp(w.root / "run_eval" / "report.json"));
  const auto e = cli("eval --data " + w.data + " --gnn " + w.gnn + " --run " + (w.root / "run_eval").string());
  REQUIRE(e.code == 0);
  const auto j = nlohmann::json::parse(e.out);
  CHECK(j["metric"].get<double>() == report["test_metric"].get<double>());
  CHECK(j["pcr"].get<double>() == report["pcr"].get<double>());
  CHECK(cli("eval --data " + w.data + " --gnn " + w.gnn + " --run " + (w.root / "run_eval").string() +
            " --split bogus")
            .code == 2);
  CHECK(cli("eval --data " + w.data + " --gnn " + w.gnn + " --run " + (w.root / "missing").string()).code == 2);
}

TEST_CASE("baselines through the CLI") {
  const auto& w = ws();
  for (const char* m : {"linear_probe", "fine_tune", "random_d", "random_c"}) {
    INFO(m);
    const auto r = cli(w.tune(std::string("base_") + m, std::string("--baseline ") + m));
    CHECK(r.code == 0);
    CHECK(r.out.find(std::string("method=") + m) != std::string::npos);
  }
  CHECK(fs::exists(w.root / "base_fine_tune" / "checkpoints" / "gnn.json"));
  CHECK(cli(w.tune("base_bad", "--baseline prompt")).code == 2);
}

TEST_CASE("config precedence") {
  const auto& w = ws();
  const fs::path cfg = w.root / "run.cfg";
  std::ofstream(cfg) << "seed = 11\nz_max = 1.0\nq = 2\n";
  REQUIRE(cli(w.tune("prec", "--config " + cfg.string() + " --set q=3 --seed 12")).code == 0);
  const std::string snap = slurp(w.root / "prec" / "config.snapshot");
  CHECK(snap.find("seed = 12\n") != std::string::npos);
  CHECK(snap.find("q = 3\n") != std::string::npos);
  CHECK(snap.find("z_max = 1\n") != std::string::npos);
}

TEST_CASE("config errors exit with 2") {
  const auto& w = ws();
  CHECK(cli(w.tune("bad1", "--set gama=0.9")).code == 2);
  CHECK(cli(w.tune("bad2", "--set z_max=0.3")).code == 2);
  CHECK(cli(w.tune("bad3", "--set q")).code == 2);
  CHECK(cli(w.tune("bad4", "--config /nonexistent.cfg")).code == 2);
  CHECK(cli("tune --data " + w.data + " --gnn /nonexistent.json --out " + (w.root / "bad5").string()).code == 2);
  CHECK(cli(w.tune("bad7", "--train-count 15 --valid-count 5 --test-count 5")).code == 2);
  CHECK(cli("pretrain --data " + w.data + " --strategy jigsaw --out " + (w.root / "bad6").string()).code == 2);
}

TEST_CASE("data errors exit with 3") {
  const auto& w = ws();
  const fs::path bad = w.root / "bad.jsonl";
  std::ofstream(bad) << R"({"x": [[1.0]], "edges": [[0, 4]], "y": 0})" << "\n";
  CHECK(cli("tune --data " + bad.string() + " --gnn " + w.gnn + " --out " + (w.root / "d1").string()).code == 3);
  CHECK(cli("pretrain --data " + (w.root / "absent.jsonl").string() + " --strategy attr_mask --out " +
            (w.root / "d2").string())
            .code == 3);
}

TEST_CASE("numerical failures exit with 4") {
  const auto& w = ws();
  const auto r = cli("pretrain --data " + w.data + " --strategy masked_edge --out " + (w.root / "n1").string() +
                     " --epochs 50 --lr 1e300");
  CHECK(r.code == 4);
  CHECK(r.out.find("numerical error") != std::string::npos);
}

TEST_CASE("sweep writes one run per fraction") {
  const auto& w = ws();
  const auto r = cli("sweep --data " + w.data + " --gnn " + w.gnn + " --out " + (w.root / "sw").string() +
                     " --set epochs=2 --set policy_hidden=8 --fractions 0.5 1.0");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(w.root / "sw" / "fraction_0" / "report.json"));
  CHECK(fs::exists(w.root / "sw" / "fraction_1" / "report.json"));
  const auto j = nlohmann::json::parse(slurp(w.root / "sw" / "sweep.json"));
  CHECK(j["metrics"].size() == 2);
  CHECK(cli("sweep --data " + w.data + " --gnn " + w.gnn + " --out " + (w.root / "sw2").string() +
            " --fractions 1.5")
            .code == 2);
}
