#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cirtf/model.hpp"

namespace cirtf {

// On-disk model snapshot: "CIRTF01" magic, one JSON blob (model config plus
// free-form training metadata), a length-prefixed tensor name table, then the
// tensor payloads as little-endian 32-bit floats. Round-trips bit-exactly.
struct Checkpoint {
  ModelConfig cfg;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<float>>> tensors;

  const std::vector<float>* find(const std::string& name) const {
    for (const auto& [n, v] : tensors) {
      if (n == name) return &v;
    }
    return nullptr;
  }
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies every model tensor (fixed order, fixed names) into a checkpoint.
Checkpoint checkpoint_from_params(ParamSet<float>& params, nlohmann::json meta);

// Rebuilds parameters from a checkpoint; every model tensor must be present
// with the size implied by the stored config. Extra (e.g. optimizer-state)
// tensors are ignored.
ParamSet<float> params_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cirtf
