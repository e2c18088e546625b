#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cirtf/common.hpp"

namespace cirtf {

// Dataset-wide metadata. Anchor order here fixes the anchor order of every
// fingerprint's CIR list and of the flattened model input.
struct Manifest {
  int format_version = 1;
  int n_an = 0;
  int l_s = 0;
  double width = 0.0;
  double height = 0.0;
  std::vector<Vec2> anchors;
  double carrier_freq = 0.0;
  double bandwidth = 0.0;
  double reflection_coeff = 0.0;
  std::optional<double> snr_db;
  int pulse_halfwidth = 0;
  uint64_t master_seed = 0;
  std::vector<uint64_t> waypoint_seeds;

  double tap_spacing() const { return 1.0 / bandwidth; }
  int n_r() const { return n_an * l_s; }
};

// One synchronized set of CIRs. Taps are anchor-major: taps[a * l_s + n] is
// tap n of anchor a. Position is present iff the sample is labeled.
struct Fingerprint {
  Eigen::VectorXcf taps;
  std::optional<Vec2> position;
  int32_t trajectory_id = 0;
  int64_t index = 0;

  bool labeled() const { return position.has_value(); }
};

struct Dataset {
  Manifest manifest;
  std::vector<Fingerprint> fingerprints;

  size_t size() const { return fingerprints.size(); }
  size_t labeled_count() const;
  std::vector<int32_t> trajectory_ids() const;  // unique, in first-appearance order
};

// A flattened tap sequence: row 0 = Re, row 1 = Im, one column per time step.
template <typename S>
using Seq = Eigen::Matrix<S, 2, Eigen::Dynamic>;

// Flattens a fingerprint into the model input: a 2 x (N_an*l_s) matrix whose
// column t holds (Re, Im) of the underlying tap, anchors concatenated in
// manifest order.
template <typename S>
Eigen::Matrix<S, 2, Eigen::Dynamic> flatten_fingerprint(const Fingerprint& fp) {
  const Eigen::Index n = fp.taps.size();
  Eigen::Matrix<S, 2, Eigen::Dynamic> out(2, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    out(0, t) = static_cast<S>(fp.taps[t].real());
    out(1, t) = static_cast<S>(fp.taps[t].imag());
  }
  return out;
}

// Inverse of flatten_fingerprint (taps only; position/ids are not part of the
// flattened sequence).
template <typename S>
Fingerprint unflatten_fingerprint(const Eigen::Matrix<S, 2, Eigen::Dynamic>& seq) {
  Fingerprint fp;
  fp.taps.resize(seq.cols());
  for (Eigen::Index t = 0; t < seq.cols(); ++t) {
    fp.taps[t] = std::complex<float>(static_cast<float>(seq(0, t)), static_cast<float>(seq(1, t)));
  }
  return fp;
}

// Splits at trajectory granularity; no trajectory spans two splits.
// Proportions are matched as closely as whole trajectories allow, and every
// split with a nonzero ratio receives at least one trajectory.
std::array<Dataset, 3> split_dataset(const Dataset& ds, const std::array<double, 3>& ratios,
                                     uint64_t seed);

// Uniform sample of n labeled fingerprints, without replacement. Original
// order is preserved.
Dataset subsample_labeled(const Dataset& ds, size_t n, uint64_t seed);

// On-disk format: a directory with manifest.json, cirs.bin, positions.bin,
// traj.bin. Binary payloads are little-endian 32-bit, cirs laid out
// [num_fp][n_an][l_s][2: re, im], positions [num_fp][2] with a NaN pair
// marking unlabeled samples, traj [num_fp] int32 ids.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

bool datasets_equal(const Dataset& a, const Dataset& b);

}  // namespace cirtf
