// Command-line front end: sim | pretrain | finetune | eval | reconstruct.
// All numerics live in the JSON config; flags carry only paths, the arm and
// the labeled-subset size. Exit codes: 0 ok, 1 usage, 2 config, 3 runtime.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cirtf/checkpoint.hpp"
#include "cirtf/common.hpp"
#include "cirtf/data.hpp"
#include "cirtf/evalstats.hpp"
#include "cirtf/masking.hpp"
#include "cirtf/model.hpp"
#include "cirtf/rng.hpp"
#include "cirtf/runconfig.hpp"
#include "cirtf/sim.hpp"
#include "cirtf/train.hpp"

using namespace cirtf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// Reproducibility record dropped next to every command's outputs.
void write_run_meta(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    json inputs, double wall_time) {
  json meta{{"command", command},
            {"config", config_echo(cfg)},
            {"seed", cfg.seed},
            {"inputs", std::move(inputs)},
            {"formats",
             {{"checkpoint_magic", "CIRTF01"},
              {"dataset_version", 1},
              {"report_csv_header", "arm,n_labeled,seed,mean_m,ce90_m"}}},
            {"wall_time", wall_time}};
  std::ofstream out(dir / "run_meta.json");
  if (!out) throw Error(Errc::runtime, "cannot write " + (dir / "run_meta.json").string());
  out << meta.dump(2) << "\n";
}

std::string resolve_path(const std::string& flag, const std::string& from_cfg, const char* what) {
  if (!flag.empty()) return flag;
  if (!from_cfg.empty()) return from_cfg;
  throw Error(Errc::usage,
              std::string("no ") + what + " path given: pass the flag or set it under paths");
}

Dataset load_matching_dataset(const std::string& dir, const RunConfig& cfg) {
  Dataset ds = load_dataset(dir);
  if (ds.manifest.l_s != cfg.env.l_s ||
      ds.manifest.n_an != static_cast<int>(cfg.env.anchors.size())) {
    throw Error(Errc::config, "dataset at " + dir + " has n_an=" +
                                  std::to_string(ds.manifest.n_an) + ", l_s=" +
                                  std::to_string(ds.manifest.l_s) +
                                  " which does not match the config environment");
  }
  return ds;
}

void run_sim(const RunConfig& cfg, const std::string& out_dir) {
  Timer timer;
  std::vector<TrajectoryConfig> trajs(static_cast<size_t>(cfg.sim.count));
  for (int i = 0; i < cfg.sim.count; ++i) {
    auto& t = trajs[static_cast<size_t>(i)];
    t.speed = cfg.sim.speed;
    t.sample_rate = cfg.sim.sample_rate;
    t.duration = cfg.sim.duration;
    t.waypoint_seed = mix_seed({cfg.seed, seed_tag::trajectory, static_cast<uint64_t>(i)});
  }
  Dataset ds = generate_dataset(cfg.env, trajs, cfg.seed);
  save_dataset(ds, out_dir);
  write_run_meta(out_dir, "sim", cfg,
                 json{{"fingerprints", ds.size()}, {"trajectories", cfg.sim.count}},
                 timer.seconds());
  std::cout << "wrote " << ds.size() << " fingerprints (" << cfg.sim.count << " trajectories) to "
            << out_dir << "\n";
}

void run_pretrain(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const std::string& resume_path) {
  Timer timer;
  Dataset ds = load_matching_dataset(data_dir, cfg);
  auto splits = split_dataset(ds, cfg.split_ratios, cfg.seed);
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log) throw Error(Errc::runtime, "cannot write training log in " + out_dir);

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
  }
  TrainResult res = pretrain(splits[0], splits[1], cfg.model, cfg.train, &log, resume_ptr);
  save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), res.best);
  save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), res.last);
  write_run_meta(out_dir, "pretrain", cfg,
                 json{{"data", data_dir},
                      {"resume", resume_path.empty() ? json(nullptr) : json(resume_path)},
                      {"train_fingerprints", splits[0].size()},
                      {"val_fingerprints", splits[1].size()},
                      {"epochs_run", res.epochs_run},
                      {"best_epoch", res.best_epoch},
                      {"best_val", res.best_val}},
                 timer.seconds());
  std::cout << "pretrained " << res.epochs_run << " epochs; best val " << res.best_val
            << " at epoch " << res.best_epoch << "; checkpoints in " << out_dir << "\n";
}

void run_finetune(const RunConfig& cfg, const std::string& data_dir, const std::string& arm,
                  int n_labeled, const std::string& ckpt_path, const std::string& out_dir) {
  Timer timer;
  if (arm != "tf-pt" && arm != "tf-c-pt" && arm != "tf-sc") {
    throw Error(Errc::usage, "unknown arm \"" + arm + "\" (expected tf-pt, tf-c-pt or tf-sc)");
  }
  if (arm != "tf-sc" && ckpt_path.empty()) {
    throw Error(Errc::usage, "arm " + arm + " requires --checkpoint");
  }
  Dataset ds = load_matching_dataset(data_dir, cfg);
  auto splits = split_dataset(ds, cfg.split_ratios, cfg.seed);
  Dataset pool = splits[0];
  if (n_labeled > 0) pool = subsample_labeled(pool, static_cast<size_t>(n_labeled), cfg.seed);

  ParamSet<float> init = ParamSet<float>::zeros(cfg.model);
  if (arm == "tf-sc") {
    if (!ckpt_path.empty()) std::cout << "arm tf-sc trains from scratch; ignoring --checkpoint\n";
    init = init_parameters<float>(cfg.model, cfg.seed);
  } else {
    Checkpoint c = load_checkpoint(ckpt_path);
    if (!(c.cfg == cfg.model)) {
      throw Error(Errc::config, "checkpoint " + ckpt_path + " was trained with a different model");
    }
    init = params_from_checkpoint(c);
  }

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log) throw Error(Errc::runtime, "cannot write training log in " + out_dir);
  TrainResult res = finetune(init, pool, splits[1], finetune_train(cfg), &log);
  save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), res.best);
  save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), res.last);

  json test_summary(nullptr);
  if (!splits[2].fingerprints.empty()) {
    ParamSet<float> best = params_from_checkpoint(res.best);
    EvalReport rep = make_report(arm, static_cast<int>(pool.size()), cfg.seed,
                                 localization_errors(best, splits[2]));
    export_report_json({rep}, (fs::path(out_dir) / "report.json").string());
    test_summary = json{{"mean_m", rep.mean_m}, {"ce90_m", rep.ce90_m}};
    std::cout << "arm " << arm << ", n=" << pool.size() << ": test mean " << rep.mean_m
              << " m, CE90 " << rep.ce90_m << " m\n";
  }
  write_run_meta(out_dir, "finetune", cfg,
                 json{{"data", data_dir},
                      {"arm", arm},
                      {"n_labeled", pool.size()},
                      {"checkpoint", arm == "tf-sc" || ckpt_path.empty() ? json(nullptr)
                                                                         : json(ckpt_path)},
                      {"best_epoch", res.best_epoch},
                      {"best_val", res.best_val},
                      {"test", std::move(test_summary)}},
                 timer.seconds());
  std::cout << "fine-tuned " << res.epochs_run << " epochs; best val " << res.best_val
            << " at epoch " << res.best_epoch << "; outputs in " << out_dir << "\n";
}

void run_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& same_path,
              const std::string& cross_path, const std::string& out_dir) {
  Timer timer;
  bool need_same = false, need_cross = false;
  for (const auto& a : cfg.eval.arms) {
    need_same |= a == "tf-pt";
    need_cross |= a == "tf-c-pt";
  }
  if (need_same && same_path.empty()) {
    throw Error(Errc::usage, "eval.arms includes tf-pt: --pretrained is required");
  }
  if (need_cross && cross_path.empty()) {
    throw Error(Errc::usage, "eval.arms includes tf-c-pt: --pretrained-cross is required");
  }
  Dataset ds = load_matching_dataset(data_dir, cfg);
  auto splits = split_dataset(ds, cfg.split_ratios, cfg.seed);

  Checkpoint same, cross;
  CurveInputs in;
  in.train_pool = &splits[0];
  in.val = &splits[1];
  in.test = &splits[2];
  if (!same_path.empty()) {
    same = load_checkpoint(same_path);
    in.pretrained_same = &same;
  }
  if (!cross_path.empty()) {
    cross = load_checkpoint(cross_path);
    in.pretrained_cross = &cross;
  }
  in.mcfg = cfg.model;
  in.ft_base = finetune_train(cfg);

  auto reports = learning_curve(in, cfg.eval.arms, cfg.eval.n_values, cfg.eval.seeds, nullptr);
  fs::create_directories(out_dir);
  export_report_csv(reports, (fs::path(out_dir) / "report.csv").string());
  export_report_json(reports, (fs::path(out_dir) / "report.json").string());
  write_run_meta(out_dir, "eval", cfg,
                 json{{"data", data_dir},
                      {"pretrained", same_path.empty() ? json(nullptr) : json(same_path)},
                      {"pretrained_cross", cross_path.empty() ? json(nullptr) : json(cross_path)},
                      {"runs", reports.size()}},
                 timer.seconds());
  for (const auto& r : reports) {
    std::cout << r.arm << " n=" << r.n_labeled << " seed=" << r.seed << ": mean " << r.mean_m
              << " m, CE90 " << r.ce90_m << " m\n";
  }
  std::cout << "wrote " << reports.size() << " rows to " << out_dir << "\n";
}

void run_reconstruct(const RunConfig& cfg, const std::string& data_dir,
                     const std::string& ckpt_path, int64_t index, const std::string& out_csv) {
  Timer timer;
  Dataset ds = load_dataset(data_dir);
  if (index < 0 || index >= static_cast<int64_t>(ds.size())) {
    throw Error(Errc::usage, "--index " + std::to_string(index) + " out of range (dataset has " +
                                 std::to_string(ds.size()) + " fingerprints)");
  }
  Checkpoint c = load_checkpoint(ckpt_path);
  if (c.cfg.l_s != ds.manifest.l_s || c.cfg.n_an != ds.manifest.n_an) {
    throw Error(Errc::config, "checkpoint " + ckpt_path + " does not match the dataset shape");
  }
  ParamSet<float> params = params_from_checkpoint(c);

  const Fingerprint& fp = ds.fingerprints[static_cast<size_t>(index)];
  Seq<float> input = flatten_fingerprint<float>(fp);
  // Same per-fingerprint mask stream the validation metric uses, so the dump
  // shows exactly what validation grades.
  Rng rng(mix_seed({cfg.seed, seed_tag::val_mask, static_cast<uint64_t>(fp.index)}));
  MaskSpec mask = sample_masks(c.cfg.n_r(), cfg.train.l_m, cfg.train.schedule.p_min, rng);
  auto tr = forward(params, input, mask, RunMode::eval, 0);
  const auto flags = mask.flags();

  fs::path out_path(out_csv);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::FILE* f = std::fopen(out_csv.c_str(), "w");
  if (f == nullptr) throw Error(Errc::runtime, "cannot write " + out_csv);
  std::fputs("anchor,tap,orig_re,orig_im,masked_flag,recon_re,recon_im\n", f);
  for (int a = 0; a < c.cfg.n_an; ++a) {
    for (int t = 0; t < c.cfg.l_s; ++t) {
      const int col = a * c.cfg.l_s + t;
      std::fprintf(f, "%d,%d,%.9g,%.9g,%d,%.9g,%.9g\n", a, t,
                   static_cast<double>(input(0, col)), static_cast<double>(input(1, col)),
                   static_cast<int>(flags[static_cast<size_t>(col)]),
                   static_cast<double>(tr.recon(0, col)), static_cast<double>(tr.recon(1, col)));
    }
  }
  std::fclose(f);
  write_run_meta(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."),
                 "reconstruct", cfg,
                 json{{"data", data_dir},
                      {"checkpoint", ckpt_path},
                      {"index", index},
                      {"masked_taps", mask.masked_count()},
                      {"out", out_csv}},
                 timer.seconds());
  std::cout << "wrote reconstruction of fingerprint " << index << " (" << mask.masked_count()
            << " of " << c.cfg.n_r() << " taps masked) to " << out_csv << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-reconstruction CIR transformer pipeline"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, ckpt_path, cross_path, resume_path, arm;
  int n_labeled = 0;
  int64_t index = 0;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config")->required();
  };

  CLI::App* sim = app.add_subcommand("sim", "generate a synthetic trajectory dataset");
  add_config(sim);
  sim->add_option("--out", out_path, "output dataset directory");

  CLI::App* pre = app.add_subcommand("pretrain", "masked-reconstruction pre-training");
  add_config(pre);
  pre->add_option("--data", data_dir, "dataset directory");
  pre->add_option("--out", out_path, "checkpoint output directory");
  pre->add_option("--resume", resume_path, "last.ckpt of a run to continue");

  CLI::App* fin = app.add_subcommand("finetune", "supervised localization fine-tuning");
  add_config(fin);
  fin->add_option("--data", data_dir, "dataset directory");
  fin->add_option("--out", out_path, "output directory");
  fin->add_option("--arm", arm, "tf-pt | tf-c-pt | tf-sc")->required();
  fin->add_option("--n-labeled", n_labeled, "labeled subset size (0 = all)");
  fin->add_option("--checkpoint", ckpt_path, "pre-trained checkpoint (ignored by tf-sc)");

  CLI::App* ev = app.add_subcommand("eval", "learning-curve sweep over arms x n x seeds");
  add_config(ev);
  ev->add_option("--data", data_dir, "dataset directory");
  ev->add_option("--out", out_path, "report output directory");
  ev->add_option("--pretrained", ckpt_path, "same-environment pre-trained checkpoint");
  ev->add_option("--pretrained-cross", cross_path, "cross-environment pre-trained checkpoint");

  CLI::App* rec = app.add_subcommand("reconstruct", "dump original/masked/reconstructed taps");
  add_config(rec);
  rec->add_option("--data", data_dir, "dataset directory");
  rec->add_option("--checkpoint", ckpt_path, "checkpoint to reconstruct with")->required();
  rec->add_option("--index", index, "fingerprint index in the dataset");
  rec->add_option("--out", out_path, "output CSV file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = parse_config(config_path);
    if (sim->parsed()) {
      run_sim(cfg, resolve_path(out_path, cfg.paths.dataset, "dataset output"));
    } else if (pre->parsed()) {
      run_pretrain(cfg, resolve_path(data_dir, cfg.paths.dataset, "dataset"),
                   resolve_path(out_path, cfg.paths.checkpoints, "checkpoint output"),
                   resume_path);
    } else if (fin->parsed()) {
      run_finetune(cfg, resolve_path(data_dir, cfg.paths.dataset, "dataset"), arm, n_labeled,
                   ckpt_path, resolve_path(out_path, cfg.paths.checkpoints, "output"));
    } else if (ev->parsed()) {
      run_eval(cfg, resolve_path(data_dir, cfg.paths.dataset, "dataset"), ckpt_path, cross_path,
               resolve_path(out_path, cfg.paths.reports, "report output"));
    } else if (rec->parsed()) {
      run_reconstruct(cfg, resolve_path(data_dir, cfg.paths.dataset, "dataset"), ckpt_path, index,
                      out_path.empty() ? "recon.csv" : out_path);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case Errc::usage:
        return 1;
      case Errc::config:
        return 2;
      default:
        return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
