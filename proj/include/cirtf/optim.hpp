#pragma once

#include <cmath>
#include <cstdint>

#include "cirtf/model.hpp"

namespace cirtf {

// Rectified Adam. Rectification needs no warm-up schedule: while the
// variance estimate is still unreliable (rho_t <= 4) the update falls back to
// plain bias-corrected momentum.
template <typename S>
struct RAdam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  ParamSet<S> m, v;
  int64_t t = 0;

  explicit RAdam(const ModelConfig& cfg) : m(ParamSet<S>::zeros(cfg)), v(ParamSet<S>::zeros(cfg)) {}

  // rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t); rho_inf = 2/(1-beta2) - 1.
  double rho(int64_t step) const {
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double b2t = std::pow(beta2, static_cast<double>(step));
    return rho_inf - 2.0 * static_cast<double>(step) * b2t / (1.0 - b2t);
  }

  void step(ParamSet<S>& params, ParamSet<S>& grads, double lr) {
    auto pv = params.tensors();
    auto gv = grads.tensors();
    auto mv = m.tensors();
    auto vv = v.tensors();
    for (size_t i = 0; i < gv.size(); ++i) {
      for (Eigen::Index j = 0; j < gv[i].size; ++j) {
        if (!std::isfinite(static_cast<double>(gv[i].data[j]))) {
          throw Error(Errc::divergence, "non-finite gradient in " + gv[i].name);
        }
      }
    }

    ++t;
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double rho_t = rho(t);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const bool rectified = rho_t > 4.0;
    const double r_t = rectified ? std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                             ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                                 : 0.0;

    for (size_t i = 0; i < pv.size(); ++i) {
      S* p = pv[i].data;
      const S* g = gv[i].data;
      S* mi = mv[i].data;
      S* vi = vv[i].data;
      for (Eigen::Index j = 0; j < pv[i].size; ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1 * static_cast<double>(mi[j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * static_cast<double>(vi[j]) + (1.0 - beta2) * gj * gj;
        mi[j] = static_cast<S>(mj);
        vi[j] = static_cast<S>(vj);
        const double m_hat = mj / bc1;
        double update;
        if (rectified) {
          const double v_hat = std::sqrt(vj / bc2);
          update = lr * r_t * m_hat / (v_hat + eps);
        } else {
          update = lr * m_hat;
        }
        p[j] = static_cast<S>(static_cast<double>(p[j]) - update);
      }
    }
  }
};

}  // namespace cirtf
