#include "cirtf/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "cirtf/losses.hpp"
#include "cirtf/threading.hpp"

namespace cirtf {

using nlohmann::json;

std::vector<double> euclidean_errors(const std::vector<Vec2>& preds,
                                     const std::vector<Vec2>& refs) {
  if (preds.size() != refs.size()) {
    throw Error(Errc::shape_mismatch, "prediction/reference length mismatch");
  }
  std::vector<double> errors(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) errors[i] = distance(preds[i], refs[i]);
  return errors;
}

double ce90(std::vector<double> errors) {
  if (errors.empty()) throw Error(Errc::domain, "ce90 of an empty error list");
  std::sort(errors.begin(), errors.end());
  const size_t n = errors.size();
  const size_t rank = (9 * n + 9) / 10;  // ceil(0.9 n) without float rounding
  return errors[rank - 1];
}

double mean(const std::vector<double>& values) {
  if (values.empty()) throw Error(Errc::domain, "mean of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(Errc::domain, "median of an empty list");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

EvalReport make_report(std::string arm, int n_labeled, uint64_t seed, std::vector<double> errors) {
  EvalReport r;
  r.arm = std::move(arm);
  r.n_labeled = n_labeled;
  r.seed = seed;
  r.mean_m = mean(errors);
  r.ce90_m = ce90(errors);
  r.errors = std::move(errors);
  return r;
}

std::vector<double> localization_errors(ParamSet<float>& params, const Dataset& ds) {
  const size_t n = ds.fingerprints.size();
  if (ds.manifest.width <= 0.0 || ds.manifest.height <= 0.0) {
    throw Error(Errc::config, "dataset manifest lacks room dimensions");
  }
  std::vector<double> errors(n);
  const MaskSpec no_mask = MaskSpec::none(params.cfg.n_r());
  parallel_for(n, [&](size_t i) {
    const auto& fp = ds.fingerprints[i];
    if (!fp.labeled()) throw Error(Errc::config, "unlabeled fingerprint in evaluation set");
    const auto input = flatten_fingerprint<float>(fp);
    auto tr = forward(params, input, no_mask, RunMode::eval, 0);
    // The head predicts room-normalized coordinates; scale back to meters.
    errors[i] = distance({static_cast<double>(tr.loc_x) * ds.manifest.width,
                          static_cast<double>(tr.loc_y) * ds.manifest.height},
                         *fp.position);
  });
  return errors;
}

std::vector<EvalReport> learning_curve(const CurveInputs& in, const std::vector<std::string>& arms,
                                       const std::vector<int>& n_values,
                                       const std::vector<uint64_t>& seeds, std::ostream* log) {
  if (in.train_pool == nullptr || in.val == nullptr || in.test == nullptr) {
    throw Error(Errc::config, "learning curve needs train/val/test datasets");
  }
  std::vector<EvalReport> table;
  for (const auto& arm : arms) {
    const Checkpoint* source = nullptr;
    if (arm == "tf-pt") {
      source = in.pretrained_same;
    } else if (arm == "tf-c-pt") {
      source = in.pretrained_cross;
    } else if (arm != "tf-sc") {
      throw Error(Errc::config, "unknown arm: " + arm);
    }
    if (arm != "tf-sc" && source == nullptr) {
      throw Error(Errc::not_found, "arm " + arm + " needs a pre-trained checkpoint");
    }
    for (int n : n_values) {
      for (uint64_t seed : seeds) {
        Dataset subset = subsample_labeled(*in.train_pool, static_cast<size_t>(n), seed);
        TrainConfig tcfg = in.ft_base;
        tcfg.seed = seed;
        ParamSet<float> init = (source != nullptr) ? params_from_checkpoint(*source)
                                                   : init_parameters<float>(in.mcfg, seed);
        auto result = finetune(init, subset, *in.val, tcfg, log);
        auto best = params_from_checkpoint(result.best);
        table.push_back(make_report(arm, n, seed, localization_errors(best, *in.test)));
      }
    }
  }
  return table;
}

void export_report_csv(const std::vector<EvalReport>& reports, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(Errc::runtime, "cannot write " + path);
  f << "arm,n_labeled,seed,mean_m,ce90_m\n";
  char buf[128];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g", r.mean_m, r.ce90_m);
    f << r.arm << "," << r.n_labeled << "," << r.seed << "," << buf << "\n";
  }
  if (!f) throw Error(Errc::runtime, "write failed for " + path);
}

void export_report_json(const std::vector<EvalReport>& reports, const std::string& path) {
  json arr = json::array();
  for (const auto& r : reports) {
    arr.push_back({{"arm", r.arm},
                   {"n_labeled", r.n_labeled},
                   {"seed", r.seed},
                   {"mean_m", r.mean_m},
                   {"ce90_m", r.ce90_m},
                   {"errors", r.errors}});
  }
  std::ofstream f(path);
  if (!f) throw Error(Errc::runtime, "cannot write " + path);
  f << arr.dump(2) << "\n";
  if (!f) throw Error(Errc::runtime, "write failed for " + path);
}

std::vector<EvalReport> import_report_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::not_found, "cannot open " + path);
  json arr = json::parse(f, nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) {
    throw Error(Errc::config, "malformed report json: " + path);
  }
  std::vector<EvalReport> reports;
  for (const auto& item : arr) {
    EvalReport r;
    try {
      r.arm = item.at("arm").get<std::string>();
      r.n_labeled = item.at("n_labeled").get<int>();
      r.seed = item.at("seed").get<uint64_t>();
      r.mean_m = item.at("mean_m").get<double>();
      r.ce90_m = item.at("ce90_m").get<double>();
      if (item.contains("errors")) r.errors = item.at("errors").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(Errc::config, std::string("malformed report json: ") + e.what());
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace cirtf
