#include "cirtf/masking.hpp"

#include <algorithm>
#include <cmath>

namespace cirtf {

std::vector<uint8_t> MaskSpec::flags() const {
  std::vector<uint8_t> out(static_cast<size_t>(n_r), 0);
  for (int s : starts) {
    for (int i = s; i < s + l_m && i < n_r; ++i) out[static_cast<size_t>(i)] = 1;
  }
  return out;
}

std::vector<int> MaskSpec::masked_indices() const {
  auto f = flags();
  std::vector<int> out;
  for (int i = 0; i < n_r; ++i) {
    if (f[static_cast<size_t>(i)]) out.push_back(i);
  }
  return out;
}

size_t MaskSpec::masked_count() const {
  auto f = flags();
  return static_cast<size_t>(std::count(f.begin(), f.end(), uint8_t{1}));
}

void MaskSchedule::validate() const {
  if (!(p_min >= 0.0 && p_min <= p_max && p_max <= 1.0)) {
    throw Error(Errc::config, "mask schedule requires 0 <= p_min <= p_max <= 1");
  }
  if (n_p < 1) throw Error(Errc::config, "mask schedule n_p must be at least 1");
  if (!(step >= 0.0)) throw Error(Errc::config, "mask schedule step must be nonnegative");
}

double mask_fraction_at_epoch(const MaskSchedule& sched, int64_t epoch) {
  if (epoch < 0) throw Error(Errc::domain, "epoch must be nonnegative");
  const double increments = std::floor(static_cast<double>(epoch) / sched.n_p);
  return std::min(sched.p_max, sched.p_min + sched.step * increments);
}

MaskSpec sample_masks(int n_r, int l_m, double p_m, Rng& rng) {
  if (l_m <= 0 || l_m > n_r) {
    throw Error(Errc::config, "mask length must lie in [1, sequence length]");
  }
  if (!(p_m >= 0.0 && p_m <= 1.0)) throw Error(Errc::config, "mask fraction must lie in [0, 1]");

  const auto n_m = std::max<int64_t>(
      1, static_cast<int64_t>(std::floor(p_m * static_cast<double>(n_r) / l_m)));
  const uint64_t bound = static_cast<uint64_t>(n_r - l_m);

  MaskSpec spec;
  spec.l_m = l_m;
  spec.n_r = n_r;
  spec.starts.reserve(static_cast<size_t>(n_m));
  for (int64_t i = 0; i < n_m; ++i) {
    spec.starts.push_back(bound == 0 ? 0 : static_cast<int>(rng.uniform_int(bound)));
  }
  return spec;
}

}  // namespace cirtf
