#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include "cirtf/common.hpp"
#include "cirtf/data.hpp"
#include "cirtf/rng.hpp"

namespace cirtf {

// Room geometry, anchor layout and radio parameters driving CIR synthesis.
struct SimEnvironment {
  double width = 0.0;
  double height = 0.0;
  std::vector<Vec2> anchors;
  double carrier_freq = 3.75e9;
  double bandwidth = 100e6;
  int l_s = 32;
  double reflection_coeff = 0.6;
  std::optional<double> snr_db = 20.0;  // nullopt = noiseless
  int pulse_halfwidth = 8;

  double tap_spacing() const { return 1.0 / bandwidth; }
  bool inside(const Vec2& p) const {
    return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
  }
  bool strictly_inside(const Vec2& p) const {
    return p.x > 0.0 && p.x < width && p.y > 0.0 && p.y < height;
  }
  void validate() const;
};

struct TrajectoryConfig {
  double speed = 1.4;         // m/s, human gait
  double sample_rate = 100.0; // Hz
  double duration = 0.0;      // seconds
  uint64_t waypoint_seed = 0;

  void validate() const;
};

struct ImageSource {
  Vec2 pos;
  int order = 0;  // number of wall reflections
};

// True source plus the four first-order mirror images across the walls
// x=0, x=width, y=0, y=height (in that order, LOS first).
std::vector<ImageSource> image_sources(const SimEnvironment& env, const Vec2& tx);

using Cir = std::vector<std::complex<double>>;

// Multipath CIR without noise. Paths shorter than 0.1 m are clamped to 0.1 m
// to bound the 1/d amplitude.
Cir synthesize_cir_noiseless(const SimEnvironment& env, const Vec2& tx, const Vec2& anchor);

// Adds circularly-symmetric complex Gaussian noise in place; noise_power is
// the per-tap variance (split evenly between real and imaginary parts).
void add_noise(Cir& cir, double noise_power, Rng& rng);

// Random-waypoint path sampled at cfg.sample_rate: uniformly drawn waypoints
// connected at constant speed. Exactly floor(duration*sample_rate) points.
std::vector<Vec2> generate_trajectory(const SimEnvironment& env, const TrajectoryConfig& cfg);

// One fingerprint per trajectory point. Noise power is set per fingerprint
// from the strongest tap across that fingerprint's anchors; per-fingerprint
// noise seeds are derived from master_seed by index, so generation order
// never affects the result.
Dataset generate_dataset(const SimEnvironment& env, const std::vector<TrajectoryConfig>& trajectories,
                         uint64_t master_seed);

// Raised-cosine (roll-off beta) windowed sinc, unit peak, zero outside
// |t_over_ts| > halfwidth.
double pulse_shape(double t_over_ts, int halfwidth, double beta = 0.25);

// Tap index where the LOS peak of a noiseless CIR lands.
int los_tap_index(const Manifest& m, const Vec2& position, int anchor);

}  // namespace cirtf
