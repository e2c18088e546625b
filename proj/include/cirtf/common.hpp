#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace cirtf {

// Error categories. File-format problems get their own codes so callers
// (and tests) can tell a bad magic from a truncation without parsing text.
enum class Errc {
  usage,
  config,
  domain,
  runtime,
  bad_magic,
  version_mismatch,
  truncated_file,
  shape_mismatch,
  divergence,
  not_found,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::usage: return "usage";
    case Errc::config: return "config";
    case Errc::domain: return "domain";
    case Errc::runtime: return "runtime";
    case Errc::bad_magic: return "bad magic";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::truncated_file: return "truncated file";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::divergence: return "divergence";
    case Errc::not_found: return "not found";
  }
  return "unknown";
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

  double norm() const { return std::hypot(x, y); }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// Rounds a double through f32 precision. The value passes through a volatile
// slot because GCC 11 at -O3 can fold a bare double->float->double round-trip
// into the identity, which breaks bit-exact agreement with f32 storage.
inline double quantize_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

// Speed of light in vacuum, m/s.
inline constexpr double kSpeedOfLight = 299792458.0;

}  // namespace cirtf
