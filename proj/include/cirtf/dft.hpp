#pragma once

#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace cirtf {

template <typename S>
using CVec = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, 1>;

// Unnormalized forward DFT: X_k = sum_n x_n exp(-j 2 pi k n / N). Direct
// O(N^2) with a shared twiddle table; N here is a CIR window (<= 64), so
// an FFT would buy nothing.
template <typename S>
CVec<S> dft(const CVec<S>& x) {
  const Eigen::Index n = x.size();
  CVec<S> tw(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const S ang = static_cast<S>(-2.0 * std::numbers::pi * static_cast<double>(m) /
                                 static_cast<double>(n));
    tw[m] = {std::cos(ang), std::sin(ang)};
  }
  CVec<S> out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    std::complex<S> acc{0, 0};
    for (Eigen::Index t = 0; t < n; ++t) acc += x[t] * tw[(k * t) % n];
    out[k] = acc;
  }
  return out;
}

// Adjoint of dft (conjugate transpose): y_n = sum_k X_k exp(+j 2 pi k n / N).
// Propagates loss gradients from frequency back to time.
template <typename S>
CVec<S> dft_adjoint(const CVec<S>& x) {
  const Eigen::Index n = x.size();
  CVec<S> tw(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const S ang = static_cast<S>(2.0 * std::numbers::pi * static_cast<double>(m) /
                                 static_cast<double>(n));
    tw[m] = {std::cos(ang), std::sin(ang)};
  }
  CVec<S> out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    std::complex<S> acc{0, 0};
    for (Eigen::Index t = 0; t < n; ++t) acc += x[t] * tw[(k * t) % n];
    out[k] = acc;
  }
  return out;
}

}  // namespace cirtf
