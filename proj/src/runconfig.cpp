#include "cirtf/runconfig.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include "cirtf/common.hpp"

namespace cirtf {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw Error(Errc::config, msg); }

std::string sub_path(const char* path, const std::string& key) {
  return *path == '\0' ? key : std::string(path) + "." + key;
}

const json& require_object(const json& j, const char* path) {
  if (!j.is_object()) fail(std::string(*path ? path : "config") + ": expected a JSON object");
  return j;
}

void check_keys(const json& obj, const char* path, std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) fail("unknown key: " + sub_path(path, item.key()));
  }
}

// Overwrites `out` when the key is present; otherwise the default stands.
template <typename T>
void read_field(const json& obj, const char* path, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    fail(sub_path(path, key) + ": " + e.what());
  }
}

void read_env(const json& obj, SimEnvironment& env) {
  const char* path = "env";
  require_object(obj, path);
  check_keys(obj, path,
             {"width", "height", "anchors", "carrier_freq", "bandwidth", "l_s",
              "reflection_coeff", "snr_db", "pulse_halfwidth"});
  read_field(obj, path, "width", env.width);
  read_field(obj, path, "height", env.height);
  read_field(obj, path, "carrier_freq", env.carrier_freq);
  read_field(obj, path, "bandwidth", env.bandwidth);
  read_field(obj, path, "l_s", env.l_s);
  read_field(obj, path, "reflection_coeff", env.reflection_coeff);
  read_field(obj, path, "pulse_halfwidth", env.pulse_halfwidth);
  if (auto it = obj.find("snr_db"); it != obj.end()) {
    if (it->is_null()) {
      env.snr_db.reset();
    } else if (it->is_number()) {
      env.snr_db = it->get<double>();
    } else {
      fail("env.snr_db: expected a number or null");
    }
  }
  if (auto it = obj.find("anchors"); it != obj.end()) {
    if (!it->is_array()) fail("env.anchors: expected an array of [x, y] pairs");
    std::vector<Vec2> anchors;
    for (const auto& a : *it) {
      if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
        fail("env.anchors: each anchor must be an [x, y] pair");
      }
      anchors.push_back(Vec2{a[0].get<double>(), a[1].get<double>()});
    }
    env.anchors = std::move(anchors);
  }
}

void read_sim(const json& obj, TrajectorySet& sim) {
  const char* path = "sim";
  require_object(obj, path);
  check_keys(obj, path, {"trajectories", "duration", "speed", "sample_rate"});
  read_field(obj, path, "trajectories", sim.count);
  read_field(obj, path, "duration", sim.duration);
  read_field(obj, path, "speed", sim.speed);
  read_field(obj, path, "sample_rate", sim.sample_rate);
}

void read_model(const json& obj, ModelConfig& model) {
  const char* path = "model";
  require_object(obj, path);
  check_keys(obj, path,
             {"preset", "d_model", "n_blocks", "n_heads", "d_ff", "p_drop", "conv_kernel"});
  if (auto it = obj.find("preset"); it != obj.end()) {
    std::string preset;
    read_field(obj, path, "preset", preset);
    if (preset == "desk") {
      model = ModelConfig::desk_scale();
    } else if (preset == "paper") {
      model = ModelConfig::paper_scale();
    } else {
      fail("model.preset: expected \"desk\" or \"paper\", got \"" + preset + "\"");
    }
  }
  read_field(obj, path, "d_model", model.d_model);
  read_field(obj, path, "n_blocks", model.n_blocks);
  read_field(obj, path, "n_heads", model.n_heads);
  read_field(obj, path, "d_ff", model.d_ff);
  read_field(obj, path, "p_drop", model.p_drop);
  read_field(obj, path, "conv_kernel", model.conv_kernel);
}

void read_train(const json& obj, RunConfig& cfg) {
  const char* path = "train";
  require_object(obj, path);
  check_keys(obj, path,
             {"batch_size", "learning_rate", "max_epochs", "patience", "eval_every",
              "ft_learning_rate", "ft_max_epochs"});
  read_field(obj, path, "batch_size", cfg.train.batch_size);
  read_field(obj, path, "learning_rate", cfg.train.learning_rate);
  read_field(obj, path, "max_epochs", cfg.train.max_epochs);
  read_field(obj, path, "patience", cfg.train.patience);
  read_field(obj, path, "eval_every", cfg.train.eval_every);
  read_field(obj, path, "ft_learning_rate", cfg.ft_learning_rate);
  read_field(obj, path, "ft_max_epochs", cfg.ft_max_epochs);
}

void read_masking(const json& obj, TrainConfig& train) {
  const char* path = "masking";
  require_object(obj, path);
  check_keys(obj, path, {"p_min", "p_max", "n_p", "step", "l_m"});
  read_field(obj, path, "p_min", train.schedule.p_min);
  read_field(obj, path, "p_max", train.schedule.p_max);
  read_field(obj, path, "n_p", train.schedule.n_p);
  read_field(obj, path, "step", train.schedule.step);
  read_field(obj, path, "l_m", train.l_m);
}

void read_split(const json& obj, std::array<double, 3>& ratios) {
  const char* path = "split";
  require_object(obj, path);
  check_keys(obj, path, {"ratios"});
  if (auto it = obj.find("ratios"); it != obj.end()) {
    if (!it->is_array() || it->size() != 3) {
      fail("split.ratios: expected exactly three numbers (train, val, test)");
    }
    for (size_t i = 0; i < 3; ++i) {
      if (!(*it)[i].is_number()) fail("split.ratios: expected exactly three numbers");
      ratios[i] = (*it)[i].get<double>();
    }
  }
}

void read_eval(const json& obj, EvalSweep& eval) {
  const char* path = "eval";
  require_object(obj, path);
  check_keys(obj, path, {"arms", "n_values", "seeds"});
  read_field(obj, path, "arms", eval.arms);
  read_field(obj, path, "n_values", eval.n_values);
  read_field(obj, path, "seeds", eval.seeds);
}

void read_paths(const json& obj, Paths& paths) {
  const char* path = "paths";
  require_object(obj, path);
  check_keys(obj, path, {"dataset", "checkpoints", "reports"});
  read_field(obj, path, "dataset", paths.dataset);
  read_field(obj, path, "checkpoints", paths.checkpoints);
  read_field(obj, path, "reports", paths.reports);
}

}  // namespace

void TrajectorySet::validate() const {
  if (count < 1) throw Error(Errc::config, "sim.trajectories must be at least 1");
  if (!(duration > 0.0)) throw Error(Errc::config, "sim.duration must be positive");
  if (!(speed > 0.0)) throw Error(Errc::config, "sim.speed must be positive");
  if (!(sample_rate > 0.0)) throw Error(Errc::config, "sim.sample_rate must be positive");
  if (std::floor(duration * sample_rate) < 1.0) {
    throw Error(Errc::config, "sim: duration * sample_rate must yield at least one fingerprint");
  }
}

void EvalSweep::validate() const {
  if (arms.empty()) throw Error(Errc::config, "eval.arms must not be empty");
  for (const auto& a : arms) {
    if (a != "tf-pt" && a != "tf-c-pt" && a != "tf-sc") {
      throw Error(Errc::config, "eval.arms: unknown arm \"" + a + "\"");
    }
  }
  if (n_values.empty()) throw Error(Errc::config, "eval.n_values must not be empty");
  for (int n : n_values) {
    if (n < 1) throw Error(Errc::config, "eval.n_values entries must be at least 1");
  }
  if (seeds.empty()) throw Error(Errc::config, "eval.seeds must not be empty");
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  require_object(j, "");
  check_keys(j, "",
             {"seed", "env", "sim", "model", "train", "masking", "split", "eval", "paths"});
  read_field(j, "", "seed", cfg.seed);
  if (j.contains("env")) read_env(j.at("env"), cfg.env);
  if (j.contains("sim")) read_sim(j.at("sim"), cfg.sim);
  if (j.contains("model")) read_model(j.at("model"), cfg.model);
  if (j.contains("train")) read_train(j.at("train"), cfg);
  if (j.contains("masking")) read_masking(j.at("masking"), cfg.train);
  if (j.contains("split")) read_split(j.at("split"), cfg.split_ratios);
  if (j.contains("eval")) read_eval(j.at("eval"), cfg.eval);
  if (j.contains("paths")) read_paths(j.at("paths"), cfg.paths);

  cfg.env.validate();
  cfg.sim.validate();
  // Sequence length and anchor count are properties of the data, so the model
  // always mirrors the environment instead of taking its own copies.
  cfg.model.l_s = cfg.env.l_s;
  cfg.model.n_an = static_cast<int>(cfg.env.anchors.size());
  cfg.model.validate();
  cfg.train.seed = cfg.seed;
  cfg.train.validate();
  if (!(cfg.ft_learning_rate > 0.0) || !std::isfinite(cfg.ft_learning_rate)) {
    throw Error(Errc::config, "train.ft_learning_rate must be positive and finite");
  }
  if (cfg.ft_max_epochs < 1) throw Error(Errc::config, "train.ft_max_epochs must be at least 1");
  double sum = 0.0;
  for (double r : cfg.split_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(Errc::config, "split.ratios must lie in [0, 1]");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(Errc::config, "split.ratios must sum to 1");
  cfg.eval.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, "config file not found: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::config, "config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

TrainConfig finetune_train(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.learning_rate = cfg.ft_learning_rate;
  t.max_epochs = cfg.ft_max_epochs;
  return t;
}

nlohmann::json config_echo(const RunConfig& cfg) {
  json anchors = json::array();
  for (const auto& a : cfg.env.anchors) anchors.push_back(json::array({a.x, a.y}));
  json env{{"width", cfg.env.width},
           {"height", cfg.env.height},
           {"anchors", std::move(anchors)},
           {"carrier_freq", cfg.env.carrier_freq},
           {"bandwidth", cfg.env.bandwidth},
           {"l_s", cfg.env.l_s},
           {"reflection_coeff", cfg.env.reflection_coeff},
           {"snr_db", cfg.env.snr_db ? json(*cfg.env.snr_db) : json(nullptr)},
           {"pulse_halfwidth", cfg.env.pulse_halfwidth}};
  json sim{{"trajectories", cfg.sim.count},
           {"duration", cfg.sim.duration},
           {"speed", cfg.sim.speed},
           {"sample_rate", cfg.sim.sample_rate}};
  json model{{"d_model", cfg.model.d_model},
             {"n_blocks", cfg.model.n_blocks},
             {"n_heads", cfg.model.n_heads},
             {"d_ff", cfg.model.d_ff},
             {"p_drop", cfg.model.p_drop},
             {"conv_kernel", cfg.model.conv_kernel}};
  json train{{"batch_size", cfg.train.batch_size},
             {"learning_rate", cfg.train.learning_rate},
             {"max_epochs", cfg.train.max_epochs},
             {"patience", cfg.train.patience},
             {"eval_every", cfg.train.eval_every},
             {"ft_learning_rate", cfg.ft_learning_rate},
             {"ft_max_epochs", cfg.ft_max_epochs}};
  json masking{{"p_min", cfg.train.schedule.p_min},
               {"p_max", cfg.train.schedule.p_max},
               {"n_p", cfg.train.schedule.n_p},
               {"step", cfg.train.schedule.step},
               {"l_m", cfg.train.l_m}};
  json split{{"ratios", json::array({cfg.split_ratios[0], cfg.split_ratios[1],
                                     cfg.split_ratios[2]})}};
  json eval{{"arms", cfg.eval.arms}, {"n_values", cfg.eval.n_values}, {"seeds", cfg.eval.seeds}};
  json paths{{"dataset", cfg.paths.dataset},
             {"checkpoints", cfg.paths.checkpoints},
             {"reports", cfg.paths.reports}};
  return json{{"seed", cfg.seed},       {"env", std::move(env)},
              {"sim", std::move(sim)},  {"model", std::move(model)},
              {"train", std::move(train)}, {"masking", std::move(masking)},
              {"split", std::move(split)}, {"eval", std::move(eval)},
              {"paths", std::move(paths)}};
}

}  // namespace cirtf
