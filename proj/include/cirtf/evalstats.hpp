#pragma once

#include <string>
#include <vector>

#include "cirtf/checkpoint.hpp"
#include "cirtf/data.hpp"
#include "cirtf/train.hpp"

namespace cirtf {

struct EvalReport {
  std::string arm;  // tf-pt | tf-c-pt | tf-sc
  int n_labeled = 0;
  uint64_t seed = 0;
  std::vector<double> errors;  // per-sample meters, test-set order
  double mean_m = 0.0;
  double ce90_m = 0.0;
};

// Per-sample Euclidean distances in meters.
std::vector<double> euclidean_errors(const std::vector<Vec2>& preds, const std::vector<Vec2>& refs);

// Nearest-rank 90th percentile: sorted ascending, element at rank
// ceil(0.9 n), 1-based. The rank is computed in integer arithmetic.
double ce90(std::vector<double> errors);

double mean(const std::vector<double>& values);
double median(std::vector<double> values);

EvalReport make_report(std::string arm, int n_labeled, uint64_t seed, std::vector<double> errors);

// Runs the model over a labeled set in eval mode and returns per-sample
// localization errors in dataset order.
std::vector<double> localization_errors(ParamSet<float>& params, const Dataset& ds);

// Everything a learning-curve sweep needs. The two pretrained checkpoints are
// optional until an arm requires them.
struct CurveInputs {
  const Dataset* train_pool = nullptr;  // labeled pool to subsample from
  const Dataset* val = nullptr;         // early-stopping validation split
  const Dataset* test = nullptr;        // held-out trajectories
  const Checkpoint* pretrained_same = nullptr;   // tf-pt: pretrained, same environment
  const Checkpoint* pretrained_cross = nullptr;  // tf-c-pt: pretrained, other environment
  ModelConfig mcfg;
  TrainConfig ft_base;  // fine-tuning template; seed is overridden per run
};

// For every arm x n x seed: subsample n labeled points, fine-tune from the
// arm's initialization, evaluate the best checkpoint on the test split.
std::vector<EvalReport> learning_curve(const CurveInputs& in, const std::vector<std::string>& arms,
                                       const std::vector<int>& n_values,
                                       const std::vector<uint64_t>& seeds, std::ostream* log);

// CSV: header `arm,n_labeled,seed,mean_m,ce90_m`, numbers at 9 significant
// digits. JSON keeps full double precision and the per-sample errors.
void export_report_csv(const std::vector<EvalReport>& reports, const std::string& path);
void export_report_json(const std::vector<EvalReport>& reports, const std::string& path);
std::vector<EvalReport> import_report_json(const std::string& path);

}  // namespace cirtf
