#include "cirtf/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cirtf {

namespace {
constexpr double kMinPathLength = 0.1;  // metres; bounds the 1/d amplitude

double sinc(double u) {
  if (u == 0.0) return 1.0;
  const double pu = std::numbers::pi * u;
  return std::sin(pu) / pu;
}
}  // namespace

void SimEnvironment::validate() const {
  if (!(width > 0.0) || !(height > 0.0))
    throw Error(Errc::config, "room dimensions must be positive");
  if (anchors.empty()) throw Error(Errc::config, "at least one anchor is required");
  for (const auto& a : anchors)
    if (!strictly_inside(a))
      throw Error(Errc::config, "anchor (" + std::to_string(a.x) + ", " + std::to_string(a.y) +
                                    ") is not strictly inside the room");
  if (!(carrier_freq > 0.0)) throw Error(Errc::config, "carrier_freq must be positive");
  if (!(bandwidth > 0.0)) throw Error(Errc::config, "bandwidth must be positive");
  if (l_s <= 0) throw Error(Errc::config, "l_s must be positive");
  if (!(reflection_coeff >= 0.0 && reflection_coeff <= 1.0))
    throw Error(Errc::config, "reflection_coeff must lie in [0, 1]");
  if (pulse_halfwidth < 1) throw Error(Errc::config, "pulse_halfwidth must be at least 1");
  if (l_s < 2 * pulse_halfwidth)
    throw Error(Errc::config, "l_s must be at least twice pulse_halfwidth");
}

void TrajectoryConfig::validate() const {
  if (!(speed > 0.0)) throw Error(Errc::config, "trajectory speed must be positive");
  if (!(sample_rate > 0.0)) throw Error(Errc::config, "trajectory sample_rate must be positive");
  if (!(duration > 0.0) || std::floor(duration * sample_rate) < 1.0)
    throw Error(Errc::config, "trajectory duration must cover at least one sample");
}

std::vector<ImageSource> image_sources(const SimEnvironment& env, const Vec2& tx) {
  return {
      {tx, 0},
      {{-tx.x, tx.y}, 1},
      {{2.0 * env.width - tx.x, tx.y}, 1},
      {{tx.x, -tx.y}, 1},
      {{tx.x, 2.0 * env.height - tx.y}, 1},
  };
}

double pulse_shape(double t_over_ts, int halfwidth, double beta) {
  const double u = t_over_ts;
  if (std::abs(u) > static_cast<double>(halfwidth)) return 0.0;
  const double denom = 1.0 - (2.0 * beta * u) * (2.0 * beta * u);
  if (std::abs(denom) < 1e-9) {
    // L'Hopital at u = +-1/(2*beta): cos window and denominator vanish together.
    return std::numbers::pi / 4.0 * sinc(u);
  }
  return sinc(u) * std::cos(std::numbers::pi * beta * u) / denom;
}

Cir synthesize_cir_noiseless(const SimEnvironment& env, const Vec2& tx, const Vec2& anchor) {
  const double ts = env.tap_spacing();
  const double d_los = std::max(kMinPathLength, distance(tx, anchor));
  const double t0_los = d_los / kSpeedOfLight / ts;
  if (t0_los > static_cast<double>(env.l_s - env.pulse_halfwidth))
    throw Error(Errc::domain, "sample window too short: LOS delay of " + std::to_string(t0_los) +
                                  " taps does not fit in l_s = " + std::to_string(env.l_s));

  Cir h(static_cast<size_t>(env.l_s), {0.0, 0.0});
  for (const auto& src : image_sources(env, tx)) {
    const double d = std::max(kMinPathLength, distance(src.pos, anchor));
    const double amp = std::pow(env.reflection_coeff, src.order) / d;
    const double tau = d / kSpeedOfLight;
    // Carrier phase exp(-j 2 pi f_c tau); reduce f_c*tau mod 1 first so the
    // argument stays small (fmod is exact in binary floating point).
    const double phase = -2.0 * std::numbers::pi * std::fmod(env.carrier_freq * tau, 1.0);
    const std::complex<double> gain = std::polar(amp, phase);
    const double t0 = tau / ts;
    const int lo = std::max(0, static_cast<int>(std::ceil(t0 - env.pulse_halfwidth)));
    const int hi = std::min(env.l_s - 1, static_cast<int>(std::floor(t0 + env.pulse_halfwidth)));
    for (int n = lo; n <= hi; ++n)
      h[static_cast<size_t>(n)] += gain * pulse_shape(static_cast<double>(n) - t0, env.pulse_halfwidth);
  }
  return h;
}

void add_noise(Cir& cir, double noise_power, Rng& rng) {
  const double sigma = std::sqrt(noise_power / 2.0);
  for (auto& tap : cir) {
    const auto [re, im] = rng.normal_pair();
    tap += std::complex<double>(sigma * re, sigma * im);
  }
}

std::vector<Vec2> generate_trajectory(const SimEnvironment& env, const TrajectoryConfig& cfg) {
  env.validate();
  cfg.validate();
  Rng rng(mix_seed({cfg.waypoint_seed, seed_tag::trajectory}));
  auto draw_point = [&] {
    return Vec2{rng.uniform(0.0, env.width), rng.uniform(0.0, env.height)};
  };

  const auto n_points = static_cast<size_t>(std::floor(cfg.duration * cfg.sample_rate));
  const double step = cfg.speed / cfg.sample_rate;
  std::vector<Vec2> points;
  points.reserve(n_points);

  Vec2 cur = draw_point();
  Vec2 waypoint = draw_point();
  for (size_t i = 0; i < n_points; ++i) {
    points.push_back(cur);
    double remaining = step;
    while (remaining > 0.0) {
      const double leg = distance(cur, waypoint);
      if (leg <= remaining) {
        cur = waypoint;
        remaining -= leg;
        waypoint = draw_point();
      } else {
        const double f = remaining / leg;
        cur = {cur.x + (waypoint.x - cur.x) * f, cur.y + (waypoint.y - cur.y) * f};
        remaining = 0.0;
      }
    }
  }
  return points;
}

Dataset generate_dataset(const SimEnvironment& env,
                         const std::vector<TrajectoryConfig>& trajectories, uint64_t master_seed) {
  env.validate();
  if (trajectories.empty()) throw Error(Errc::config, "at least one trajectory is required");
  for (const auto& t : trajectories) t.validate();

  Dataset ds;
  ds.manifest.n_an = static_cast<int>(env.anchors.size());
  ds.manifest.l_s = env.l_s;
  ds.manifest.width = env.width;
  ds.manifest.height = env.height;
  ds.manifest.anchors = env.anchors;
  ds.manifest.carrier_freq = env.carrier_freq;
  ds.manifest.bandwidth = env.bandwidth;
  ds.manifest.reflection_coeff = env.reflection_coeff;
  ds.manifest.snr_db = env.snr_db;
  ds.manifest.pulse_halfwidth = env.pulse_halfwidth;
  ds.manifest.master_seed = master_seed;
  for (const auto& t : trajectories) ds.manifest.waypoint_seeds.push_back(t.waypoint_seed);

  const int n_an = ds.manifest.n_an;
  int64_t global_idx = 0;
  for (size_t t = 0; t < trajectories.size(); ++t) {
    for (const auto& raw_pos : generate_trajectory(env, trajectories[t])) {
      // Quantize to f32 up front: position labels are stored as f32, and
      // synthesizing from the quantized point keeps taps, labels and files
      // exactly consistent.
      const Vec2 pos{quantize_f32(raw_pos.x), quantize_f32(raw_pos.y)};
      std::vector<Cir> cirs;
      cirs.reserve(static_cast<size_t>(n_an));
      double peak = 0.0;
      for (int a = 0; a < n_an; ++a) {
        cirs.push_back(synthesize_cir_noiseless(env, pos, env.anchors[a]));
        for (const auto& tap : cirs.back()) peak = std::max(peak, std::norm(tap));
      }
      if (env.snr_db) {
        // Noise floor is set per fingerprint from its strongest tap, so every
        // anchor of one measurement shares the same noise power.
        const double noise_power = peak * std::pow(10.0, -*env.snr_db / 10.0);
        Rng rng(mix_seed({master_seed, seed_tag::noise, static_cast<uint64_t>(global_idx)}));
        for (auto& cir : cirs) add_noise(cir, noise_power, rng);
      }

      Fingerprint fp;
      fp.taps.resize(static_cast<Eigen::Index>(n_an) * env.l_s);
      for (int a = 0; a < n_an; ++a)
        for (int n = 0; n < env.l_s; ++n)
          fp.taps[static_cast<Eigen::Index>(a) * env.l_s + n] =
              std::complex<float>(cirs[static_cast<size_t>(a)][static_cast<size_t>(n)]);
      fp.position = pos;
      fp.trajectory_id = static_cast<int32_t>(t);
      fp.index = global_idx++;
      ds.fingerprints.push_back(std::move(fp));
    }
  }
  return ds;
}

int los_tap_index(const Manifest& m, const Vec2& position, int anchor) {
  if (anchor < 0 || anchor >= m.n_an) throw Error(Errc::domain, "anchor index out of range");
  const double d = std::max(kMinPathLength, distance(position, m.anchors[static_cast<size_t>(anchor)]));
  const double t0 = d / kSpeedOfLight / (1.0 / m.bandwidth);
  const int tap = static_cast<int>(std::lround(t0));
  return std::clamp(tap, 0, m.l_s - 1);
}

}  // namespace cirtf
