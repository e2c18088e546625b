#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"

#include "cirtf/model.hpp"
#include "cirtf/sim.hpp"
#include "cirtf/train.hpp"

namespace cirtf {

// How many random-waypoint walks to simulate and how long each one runs.
struct TrajectorySet {
  int count = 12;
  double duration = 20.0;  // seconds per trajectory
  double speed = 1.4;
  double sample_rate = 10.0;  // fingerprints per second

  void validate() const;
};

// Learning-curve sweep for the eval subcommand.
struct EvalSweep {
  std::vector<std::string> arms{"tf-pt", "tf-c-pt", "tf-sc"};
  std::vector<int> n_values{50, 100, 200};
  std::vector<uint64_t> seeds{1, 2, 3};

  void validate() const;
};

struct Paths {
  std::string dataset;
  std::string checkpoints;
  std::string reports;
};

// One JSON file describes a whole experiment; subcommand flags add only
// paths, the arm, and the labeled-subset size. Unknown keys are rejected so
// typos cannot silently fall back to defaults.
struct RunConfig {
  uint64_t seed = 0;
  SimEnvironment env;
  TrajectorySet sim;
  ModelConfig model;
  TrainConfig train;  // pre-training stage; fine-tuning overrides below
  double ft_learning_rate = 3e-4;
  int ft_max_epochs = 150;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  EvalSweep eval;
  Paths paths;
};

RunConfig parse_config(const std::string& path);
RunConfig config_from_json(const nlohmann::json& j);

// The train config used by the fine-tuning stage (own learning rate and
// epoch budget, everything else shared).
TrainConfig finetune_train(const RunConfig& cfg);

// The fully-resolved configuration, defaults included, as written into
// run_meta.json.
nlohmann::json config_echo(const RunConfig& cfg);

}  // namespace cirtf
