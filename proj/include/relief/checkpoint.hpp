#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relief/nn.hpp"
#include "relief/tensor.hpp"

namespace relief {

inline constexpr const char* kCheckpointFormat = "relief-ckpt-v1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensors plus a model-kind tag and free-form metadata, stored as a
/// single JSON document. Doubles round-trip exactly.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;

  void put(const std::string& name, const Matrix& m) { tensors[name] = m; }
  const Matrix& get(const std::string& name) const;

  void put_mlp(const std::string& prefix, const Mlp& mlp);
  /// Rebuilds an Mlp from tensors written by put_mlp.
  Mlp get_mlp(const std::string& prefix) const;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);

  std::string dump() const;
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace relief
