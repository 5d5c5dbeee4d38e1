#include "relief/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace relief {

const Matrix& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw CheckpointError("checkpoint missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put_mlp(const std::string& prefix, const Mlp& mlp) {
  meta["mlp"][prefix] = mlp.sizes();
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    put(prefix + ".w" + std::to_string(l), mlp.layer(l).weight);
    put(prefix + ".b" + std::to_string(l), mlp.layer(l).bias);
  }
}

Mlp Checkpoint::get_mlp(const std::string& prefix) const {
  if (!meta.contains("mlp") || !meta["mlp"].contains(prefix)) {
    throw CheckpointError("checkpoint has no mlp '" + prefix + "'");
  }
  Mlp mlp(meta["mlp"][prefix].get<std::vector<std::size_t>>());
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const Matrix& w = get(prefix + ".w" + std::to_string(l));
    const Matrix& b = get(prefix + ".b" + std::to_string(l));
    if (w.rows() != mlp.layer(l).weight.rows() || w.cols() != mlp.layer(l).weight.cols() ||
        b.cols() != mlp.layer(l).bias.cols()) {
      throw CheckpointError("shape mismatch for mlp '" + prefix + "' layer " + std::to_string(l));
    }
    mlp.layer(l).weight = w;
    mlp.layer(l).bias = b;
  }
  return mlp;
}

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["kind"] = kind;
  j["meta"] = meta;
  auto& arr = j["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    arr.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}});
  }
  return j;
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  if (!j.contains("format") || j["format"] != kCheckpointFormat) {
    throw CheckpointError("unsupported checkpoint format");
  }
  Checkpoint c;
  c.kind = j.at("kind").get<std::string>();
  c.meta = j.value("meta", nlohmann::json::object());
  for (const auto& t : j.at("tensors")) {
    c.tensors[t.at("name").get<std::string>()] =
        Matrix(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>(),
               t.at("data").get<std::vector<double>>());
  }
  return c;
}

std::string Checkpoint::dump() const { return to_json().dump(); }

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << dump() << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace relief
