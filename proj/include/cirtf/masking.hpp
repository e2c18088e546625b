#pragma once

#include <cstdint>
#include <vector>

#include "cirtf/common.hpp"
#include "cirtf/rng.hpp"

namespace cirtf {

// A set of fixed-length masks over a flattened tap sequence. Masks may
// overlap; the masked index set is the union of [start, start + l_m).
struct MaskSpec {
  std::vector<int> starts;
  int l_m = 0;
  int n_r = 0;

  bool empty() const { return starts.empty(); }
  std::vector<uint8_t> flags() const;       // n_r entries, 1 = masked
  std::vector<int> masked_indices() const;  // sorted, unique
  size_t masked_count() const;

  // No-op mask for supervised passes.
  static MaskSpec none(int n_r) { return MaskSpec{{}, 0, n_r}; }
};

// Masked-fraction curriculum: P_m starts at p_min and gains `step` every
// n_p epochs until it saturates at p_max.
struct MaskSchedule {
  double p_min = 0.3;
  double p_max = 0.5;
  int n_p = 50;
  double step = 0.01;

  void validate() const;
};

double mask_fraction_at_epoch(const MaskSchedule& sched, int64_t epoch);

// Draws N_m = max(1, floor(p_m * n_r / l_m)) mask starts, each uniform on
// [0, n_r - l_m); if l_m == n_r the single possible start is 0.
MaskSpec sample_masks(int n_r, int l_m, double p_m, Rng& rng);

}  // namespace cirtf
