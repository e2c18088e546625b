#include "cirtf/train.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "cirtf/losses.hpp"
#include "cirtf/optim.hpp"
#include "cirtf/rng.hpp"
#include "cirtf/threading.hpp"

namespace cirtf {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(Errc::config, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(Errc::config, "learning_rate must be positive");
  if (max_epochs < 1) throw Error(Errc::config, "max_epochs must be >= 1");
  if (l_m < 1) throw Error(Errc::config, "l_m must be >= 1");
  if (patience < 1) throw Error(Errc::config, "patience must be >= 1");
  if (eval_every < 1) throw Error(Errc::config, "eval_every must be >= 1");
  schedule.validate();
}

namespace {

// Gradients are accumulated into a fixed number of logical chunks that are
// reduced in chunk order, so results do not depend on the worker count.
constexpr size_t kGradChunks = 8;

void add_params(ParamSet<float>& dst, ParamSet<float>& src) {
  auto dv = dst.tensors();
  auto sv = src.tensors();
  for (size_t i = 0; i < dv.size(); ++i) {
    Eigen::Map<Eigen::VectorXf>(dv[i].data, dv[i].size) +=
        Eigen::Map<const Eigen::VectorXf>(sv[i].data, sv[i].size);
  }
}

void scale_params(ParamSet<float>& p, float s) {
  for (auto& t : p.tensors()) Eigen::Map<Eigen::VectorXf>(t.data, t.size) *= s;
}

std::vector<Seq<float>> flatten_all(const Dataset& ds) {
  std::vector<Seq<float>> out;
  out.reserve(ds.fingerprints.size());
  for (const auto& fp : ds.fingerprints) out.push_back(flatten_fingerprint<float>(fp));
  return out;
}

// Deterministic map-reduce over [0, n): per-chunk partial sums combined in
// chunk order.
template <typename Fn>
double chunked_sum(size_t n, const Fn& per_item) {
  std::array<double, kGradChunks> partial{};
  parallel_for(kGradChunks, [&](size_t c) {
    const size_t lo = c * n / kGradChunks;
    const size_t hi = (c + 1) * n / kGradChunks;
    double acc = 0.0;
    for (size_t i = lo; i < hi; ++i) acc += per_item(i);
    partial[c] = acc;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

MaskSpec val_mask_for(const Fingerprint& fp, int n_r, const TrainConfig& tcfg) {
  Rng rng(mix_seed({tcfg.seed, seed_tag::val_mask, static_cast<uint64_t>(fp.index)}));
  return sample_masks(n_r, tcfg.l_m, tcfg.schedule.p_min, rng);
}

void log_line(std::ostream* log, int epoch, const char* split, double loss, double p_m, double lr,
              double wall_time) {
  if (log == nullptr) return;
  (*log) << json{{"epoch", epoch},   {"split", split}, {"loss", loss},
                 {"p_m", p_m},       {"lr", lr},       {"wall_time", wall_time}}
                .dump()
         << "\n";
}

std::vector<size_t> shuffled_order(size_t n, uint64_t seed, uint64_t tag, int epoch) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed({seed, tag, static_cast<uint64_t>(epoch)}));
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

void check_finite(double loss, const char* what, int epoch) {
  if (!std::isfinite(loss)) {
    throw Error(Errc::divergence, std::string(what) + " loss is not finite at epoch " +
                                      std::to_string(epoch));
  }
}

struct BestState {
  ParamSet<float> params;
  double val = std::numeric_limits<double>::infinity();
  int epoch = -1;
};

void append_prefixed(Checkpoint& ckpt, const std::string& prefix, ParamSet<float>& ps) {
  for (const auto& t : ps.tensors()) {
    ckpt.tensors.emplace_back(prefix + t.name, std::vector<float>(t.data, t.data + t.size));
  }
}

ParamSet<float> extract_prefixed(const Checkpoint& ckpt, const std::string& prefix) {
  auto ps = ParamSet<float>::zeros(ckpt.cfg);
  for (auto& t : ps.tensors()) {
    const auto* src = ckpt.find(prefix + t.name);
    if (src == nullptr) throw Error(Errc::not_found, "checkpoint: missing tensor " + prefix + t.name);
    if (static_cast<Eigen::Index>(src->size()) != t.size) {
      throw Error(Errc::shape_mismatch, "checkpoint: wrong size for " + prefix + t.name);
    }
    std::memcpy(t.data, src->data(), src->size() * sizeof(float));
  }
  return ps;
}

double now_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// One optimization epoch over shuffled batches. `per_sample` runs forward +
// backward for one sample into a chunk-local gradient buffer and returns the
// sample's loss; gradients are averaged per batch before the step.
template <typename PerSample>
double run_epoch(ParamSet<float>& params, RAdam<float>& opt, const TrainConfig& tcfg, int epoch,
                 size_t n_samples, std::vector<ParamSet<float>>& chunk_grads,
                 const PerSample& per_sample) {
  const auto order = shuffled_order(n_samples, tcfg.seed, seed_tag::shuffle, epoch);
  double loss_sum = 0.0;
  for (size_t start = 0; start < n_samples; start += static_cast<size_t>(tcfg.batch_size)) {
    const size_t bs = std::min(static_cast<size_t>(tcfg.batch_size), n_samples - start);
    for (auto& g : chunk_grads) g.set_zero();
    std::array<double, kGradChunks> partial{};
    parallel_for(kGradChunks, [&](size_t c) {
      const size_t lo = c * bs / kGradChunks;
      const size_t hi = (c + 1) * bs / kGradChunks;
      double acc = 0.0;
      for (size_t i = lo; i < hi; ++i) {
        acc += per_sample(order[start + i], chunk_grads[c]);
      }
      partial[c] = acc;
    });
    for (size_t c = 1; c < kGradChunks; ++c) add_params(chunk_grads[0], chunk_grads[c]);
    scale_params(chunk_grads[0], 1.0f / static_cast<float>(bs));
    opt.step(params, chunk_grads[0], tcfg.learning_rate);
    for (double p : partial) loss_sum += p;
  }
  return loss_sum / static_cast<double>(n_samples);
}

}  // namespace

double masked_val_loss(ParamSet<float>& params, const Dataset& ds, const TrainConfig& tcfg) {
  if (ds.fingerprints.empty()) throw Error(Errc::config, "empty validation set");
  const int n_r = params.cfg.n_r();
  const auto inputs = flatten_all(ds);
  const double total = chunked_sum(ds.fingerprints.size(), [&](size_t i) {
    const MaskSpec mask = val_mask_for(ds.fingerprints[i], n_r, tcfg);
    auto tr = forward(params, inputs[i], mask, RunMode::eval, 0);
    return static_cast<double>(
        masked_spectral_loss<float>(tr.recon, inputs[i], mask, params.cfg.n_an, params.cfg.l_s));
  });
  return total / static_cast<double>(ds.fingerprints.size());
}

// The localization head regresses room-normalized coordinates so the output
// range stays near unit scale regardless of room size; meters are restored at
// evaluation time from the dataset manifest.
std::pair<float, float> normalized_target(const Manifest& m, const Vec2& pos) {
  if (m.width <= 0.0 || m.height <= 0.0) {
    throw Error(Errc::config, "dataset manifest lacks room dimensions");
  }
  return {static_cast<float>(pos.x / m.width), static_cast<float>(pos.y / m.height)};
}

double loc_val_loss(ParamSet<float>& params, const Dataset& ds) {
  if (ds.fingerprints.empty()) throw Error(Errc::config, "empty validation set");
  const auto inputs = flatten_all(ds);
  const double total = chunked_sum(ds.fingerprints.size(), [&](size_t i) {
    const auto& fp = ds.fingerprints[i];
    if (!fp.labeled()) throw Error(Errc::config, "unlabeled fingerprint in localization set");
    auto tr = forward(params, inputs[i], MaskSpec::none(params.cfg.n_r()), RunMode::eval, 0);
    const auto [px, py] = normalized_target(ds.manifest, *fp.position);
    return static_cast<double>(localization_loss<float>(tr.loc_x, tr.loc_y, px, py));
  });
  return total / static_cast<double>(ds.fingerprints.size());
}

TrainResult pretrain(const Dataset& train, const Dataset& val, const ModelConfig& mcfg,
                     const TrainConfig& tcfg, std::ostream* log, const Checkpoint* resume) {
  mcfg.validate();
  tcfg.validate();
  if (train.fingerprints.empty()) throw Error(Errc::config, "empty training set");
  if (train.manifest.n_r() != mcfg.n_r()) {
    throw Error(Errc::shape_mismatch, "dataset sequence length does not match model config");
  }

  ParamSet<float> params = ParamSet<float>::zeros(mcfg);
  RAdam<float> opt(mcfg);
  BestState best{ParamSet<float>::zeros(mcfg)};
  int start_epoch = 0;
  if (resume != nullptr) {
    if (!(resume->cfg == mcfg)) throw Error(Errc::config, "resume checkpoint has a different model config");
    params = params_from_checkpoint(*resume);
    opt.m = extract_prefixed(*resume, "opt.m.");
    opt.v = extract_prefixed(*resume, "opt.v.");
    opt.t = resume->meta.at("opt_step").get<int64_t>();
    start_epoch = resume->meta.at("epochs_done").get<int>();
    best.params = extract_prefixed(*resume, "best.");
    best.val = resume->meta.at("best_val").get<double>();
    best.epoch = resume->meta.at("best_epoch").get<int>();
  } else {
    params = init_parameters<float>(mcfg, tcfg.seed);
  }

  const int n_r = mcfg.n_r();
  const auto inputs = flatten_all(train);
  const size_t n = inputs.size();
  std::vector<ParamSet<float>> chunk_grads;
  for (size_t c = 0; c < kGradChunks; ++c) chunk_grads.push_back(ParamSet<float>::zeros(mcfg));
  const auto t0 = std::chrono::steady_clock::now();

  for (int e = start_epoch; e <= tcfg.max_epochs; ++e) {
    if (e % tcfg.eval_every == 0 || e == tcfg.max_epochs) {
      const double vloss = masked_val_loss(params, val, tcfg);
      check_finite(vloss, "validation", e);
      log_line(log, e, "val", vloss, tcfg.schedule.p_min, tcfg.learning_rate, now_seconds(t0));
      if (vloss < best.val) {
        best.val = vloss;
        best.epoch = e;
        best.params = params;
      }
    }
    if (e == tcfg.max_epochs) break;

    const double p_m = mask_fraction_at_epoch(tcfg.schedule, e);
    const double tloss =
        run_epoch(params, opt, tcfg, e, n, chunk_grads, [&](size_t i, ParamSet<float>& grads) {
          const auto& fp = train.fingerprints[i];
          Rng mask_rng(mix_seed({tcfg.seed, seed_tag::mask, static_cast<uint64_t>(e),
                                 static_cast<uint64_t>(fp.index)}));
          const MaskSpec mask = sample_masks(n_r, tcfg.l_m, p_m, mask_rng);
          const uint64_t drop_seed = mix_seed(
              {tcfg.seed, seed_tag::dropout, static_cast<uint64_t>(e), static_cast<uint64_t>(fp.index)});
          auto tr = forward(params, inputs[i], mask, RunMode::train, drop_seed);
          Seq<float> d_recon;
          const float loss =
              spectral_loss_backward<float>(tr.recon, inputs[i], mcfg.n_an, mcfg.l_s, d_recon);
          backward<float>(params, tr, d_recon, 0.0f, 0.0f, grads);
          return static_cast<double>(loss);
        });
    check_finite(tloss, "training", e);
    log_line(log, e, "train", tloss, p_m, tcfg.learning_rate, now_seconds(t0));
  }

  TrainResult res;
  res.best_val = best.val;
  res.best_epoch = best.epoch;
  res.epochs_run = tcfg.max_epochs;
  json meta{{"stage", "pretrain"},      {"seed", tcfg.seed},       {"lr", tcfg.learning_rate},
            {"epoch", best.epoch},      {"val_loss", best.val},    {"l_m", tcfg.l_m},
            {"batch_size", tcfg.batch_size}};
  res.best = checkpoint_from_params(best.params, meta);
  json last_meta = meta;
  last_meta["epoch"] = tcfg.max_epochs;
  last_meta["epochs_done"] = tcfg.max_epochs;
  last_meta["opt_step"] = opt.t;
  last_meta["best_val"] = best.val;
  last_meta["best_epoch"] = best.epoch;
  res.last = checkpoint_from_params(params, last_meta);
  append_prefixed(res.last, "opt.m.", opt.m);
  append_prefixed(res.last, "opt.v.", opt.v);
  append_prefixed(res.last, "best.", best.params);
  return res;
}

TrainResult finetune(const ParamSet<float>& init, const Dataset& train, const Dataset& val,
                     const TrainConfig& tcfg, std::ostream* log) {
  tcfg.validate();
  if (train.fingerprints.empty()) throw Error(Errc::config, "empty training set");
  const ModelConfig& mcfg = init.cfg;
  if (train.manifest.n_r() != mcfg.n_r()) {
    throw Error(Errc::shape_mismatch, "dataset sequence length does not match model config");
  }
  for (const auto& ds : {&train, &val}) {
    for (const auto& fp : ds->fingerprints) {
      if (!fp.labeled()) throw Error(Errc::config, "unlabeled fingerprint in fine-tuning set");
    }
  }

  ParamSet<float> params = init;
  RAdam<float> opt(mcfg);
  BestState best{ParamSet<float>::zeros(mcfg)};
  const auto inputs = flatten_all(train);
  const size_t n = inputs.size();
  const MaskSpec no_mask = MaskSpec::none(mcfg.n_r());
  std::vector<ParamSet<float>> chunk_grads;
  for (size_t c = 0; c < kGradChunks; ++c) chunk_grads.push_back(ParamSet<float>::zeros(mcfg));
  const auto t0 = std::chrono::steady_clock::now();

  int epochs_run = 0;
  for (int e = 0; e <= tcfg.max_epochs; ++e) {
    const double vloss = loc_val_loss(params, val);
    check_finite(vloss, "validation", e);
    log_line(log, e, "val", vloss, 0.0, tcfg.learning_rate, now_seconds(t0));
    if (vloss < best.val) {
      best.val = vloss;
      best.epoch = e;
      best.params = params;
    }
    if (e - best.epoch >= tcfg.patience) {
      epochs_run = e;
      break;
    }
    if (e == tcfg.max_epochs) {
      epochs_run = e;
      break;
    }

    const double tloss =
        run_epoch(params, opt, tcfg, e, n, chunk_grads, [&](size_t i, ParamSet<float>& grads) {
          const auto& fp = train.fingerprints[i];
          const uint64_t drop_seed = mix_seed(
              {tcfg.seed, seed_tag::dropout, static_cast<uint64_t>(e), static_cast<uint64_t>(fp.index)});
          auto tr = forward(params, inputs[i], no_mask, RunMode::train, drop_seed);
          const auto [px, py] = normalized_target(train.manifest, *fp.position);
          const float loss = localization_loss<float>(tr.loc_x, tr.loc_y, px, py);
          auto [gx, gy] = localization_loss_grad<float>(tr.loc_x, tr.loc_y, px, py);
          backward<float>(params, tr, Seq<float>(), gx, gy, grads);
          return static_cast<double>(loss);
        });
    check_finite(tloss, "training", e);
    log_line(log, e, "train", tloss, 0.0, tcfg.learning_rate, now_seconds(t0));
  }

  TrainResult res;
  res.best_val = best.val;
  res.best_epoch = best.epoch;
  res.epochs_run = epochs_run;
  json meta{{"stage", "finetune"},    {"seed", tcfg.seed},    {"lr", tcfg.learning_rate},
            {"epoch", best.epoch},    {"val_loss", best.val}, {"epochs_run", epochs_run},
            {"batch_size", tcfg.batch_size}};
  res.best = checkpoint_from_params(best.params, meta);
  json last_meta = meta;
  last_meta["epoch"] = epochs_run;
  res.last = checkpoint_from_params(params, last_meta);
  return res;
}

}  // namespace cirtf
