#include "relief/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace relief {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(ReliefConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ReliefConfig&)> get;
};

template <typename T>
Field size_field(T ReliefConfig::*member) {
  return {[member](ReliefConfig& c, const std::string& k, const std::string& v) { c.*member = parse_size(k, v); },
          [member](const ReliefConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double ReliefConfig::*member) {
  return {[member](ReliefConfig& c, const std::string& k, const std::string& v) { c.*member = parse_double(k, v); },
          [member](const ReliefConfig& c) { return fmt_double(c.*member); }};
}

template <typename T>
Field ppo_size_field(T PpoConfig::*member) {
  return {[member](ReliefConfig& c, const std::string& k, const std::string& v) {
            c.ppo.*member = parse_size(k, v);
          },
          [member](const ReliefConfig& c) { return std::to_string(c.ppo.*member); }};
}

Field ppo_double_field(double PpoConfig::*member) {
  return {[member](ReliefConfig& c, const std::string& k, const std::string& v) {
            c.ppo.*member = parse_double(k, v);
          },
          [member](const ReliefConfig& c) { return fmt_double(c.ppo.*member); }};
}

Field ppo_bool_field(bool PpoConfig::*member) {
  return {[member](ReliefConfig& c, const std::string& k, const std::string& v) {
            c.ppo.*member = parse_bool(k, v);
          },
          [member](const ReliefConfig& c) { return std::string(c.ppo.*member ? "true" : "false"); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["gamma"] = ppo_double_field(&PpoConfig::gamma);
    t["gae_lambda"] = ppo_double_field(&PpoConfig::gae_lambda);
    t["clip"] = ppo_double_field(&PpoConfig::clip);
    t["entropy_coef"] = ppo_double_field(&PpoConfig::entropy_coef);
    t["critic_coef"] = ppo_double_field(&PpoConfig::critic_coef);
    t["ppo_epochs"] = ppo_size_field(&PpoConfig::ppo_epochs);
    t["minibatch_size"] = ppo_size_field(&PpoConfig::minibatch_size);
    t["normalize_returns"] = ppo_bool_field(&PpoConfig::normalize_returns);
    t["normalize_advantages"] = ppo_bool_field(&PpoConfig::normalize_advantages);
    t["actor_lr"] = ppo_double_field(&PpoConfig::actor_lr);
    t["critic_lr"] = ppo_double_field(&PpoConfig::critic_lr);
    t["weight_decay"] = ppo_double_field(&PpoConfig::weight_decay);
    t["critic_schedule"] = {
        [](ReliefConfig& c, const std::string& k, const std::string& v) {
          if (v == "per_pair") {
            c.ppo.critic_schedule = CriticSchedule::per_pair;
          } else if (v == "per_epoch") {
            c.ppo.critic_schedule = CriticSchedule::per_epoch;
          } else {
            throw ConfigError(k + ": expected per_pair or per_epoch, got '" + v + "'");
          }
        },
        [](const ReliefConfig& c) {
          return std::string(c.ppo.critic_schedule == CriticSchedule::per_pair ? "per_pair" : "per_epoch");
        }};
    t["epochs"] = size_field(&ReliefConfig::epochs);
    t["l"] = size_field(&ReliefConfig::num_policies);
    t["alpha_d"] = double_field(&ReliefConfig::alpha_d);
    t["alpha_c"] = double_field(&ReliefConfig::alpha_c);
    t["z_max"] = double_field(&ReliefConfig::z_max);
    t["q"] = size_field(&ReliefConfig::q);
    t["head_lr"] = double_field(&ReliefConfig::head_lr);
    t["head_layers"] = size_field(&ReliefConfig::head_layers);
    t["head_hidden"] = size_field(&ReliefConfig::head_hidden);
    t["patience"] = size_field(&ReliefConfig::patience);
    t["min_epoch_before_best"] = size_field(&ReliefConfig::min_epoch_before_best);
    t["overlap"] = double_field(&ReliefConfig::overlap);
    t["policy_hidden"] = size_field(&ReliefConfig::policy_hidden);
    t["episodes_per_graph"] = size_field(&ReliefConfig::episodes_per_graph);
    t["seed"] = {[](ReliefConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
                 [](const ReliefConfig& c) { return std::to_string(c.seed); }};
    return t;
  }();
  return table;
}

}  // namespace

double parse_double(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(trim(key));
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(relief_, it->first, trim(value));
}

void RunConfig::merge(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  merge(in, path.string());
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(relief_);
  return out;
}

std::string RunConfig::snapshot() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries()) os << k << " = " << v << '\n';
  return os.str();
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

}  // namespace relief
