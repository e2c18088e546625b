#pragma once

#include "cirtf/common.hpp"
#include "cirtf/data.hpp"
#include "cirtf/dft.hpp"
#include "cirtf/masking.hpp"

namespace cirtf {

namespace detail {
template <typename S>
CVec<S> segment_to_complex(const Seq<S>& seq, int anchor, int l_s) {
  CVec<S> out(l_s);
  for (int t = 0; t < l_s; ++t) {
    out[t] = {seq(0, anchor * l_s + t), seq(1, anchor * l_s + t)};
  }
  return out;
}

template <typename S>
void check_seq_shapes(const Seq<S>& recon, const Seq<S>& target, int n_an, int l_s) {
  const Eigen::Index n_r = static_cast<Eigen::Index>(n_an) * l_s;
  if (n_an <= 0 || l_s <= 0 || recon.cols() != n_r || target.cols() != n_r) {
    throw Error(Errc::shape_mismatch, "sequence length does not match n_an * l_s");
  }
}
}  // namespace detail

// Frequency-domain reconstruction loss: each anchor's l_s-segment is DFT'd
// as a complex CIR and the loss is the mean over all anchors and frequency
// bins of |DFT(recon)_k - DFT(target)_k|^2. Covers the full sequence, masked
// and unmasked alike.
template <typename S>
S spectral_loss(const Seq<S>& recon, const Seq<S>& target, int n_an, int l_s) {
  detail::check_seq_shapes(recon, target, n_an, l_s);
  S acc = 0;
  for (int a = 0; a < n_an; ++a) {
    CVec<S> xr = dft<S>(detail::segment_to_complex(recon, a, l_s));
    CVec<S> xt = dft<S>(detail::segment_to_complex(target, a, l_s));
    acc += (xr - xt).squaredNorm();
  }
  return acc / static_cast<S>(n_an * l_s);
}

// Loss plus gradient w.r.t. recon. d loss / d recon(re, im) at time n is
// 2/(n_an*l_s) * (Re, Im) of the adjoint DFT of the spectral residual.
template <typename S>
S spectral_loss_backward(const Seq<S>& recon, const Seq<S>& target, int n_an, int l_s,
                         Seq<S>& grad) {
  detail::check_seq_shapes(recon, target, n_an, l_s);
  grad.resize(2, static_cast<Eigen::Index>(n_an) * l_s);
  const S c = static_cast<S>(2.0) / static_cast<S>(n_an * l_s);
  S acc = 0;
  for (int a = 0; a < n_an; ++a) {
    CVec<S> res = dft<S>(detail::segment_to_complex(recon, a, l_s)) -
                  dft<S>(detail::segment_to_complex(target, a, l_s));
    acc += res.squaredNorm();
    CVec<S> adj = dft_adjoint<S>(res);
    for (int t = 0; t < l_s; ++t) {
      grad(0, a * l_s + t) = c * adj[t].real();
      grad(1, a * l_s + t) = c * adj[t].imag();
    }
  }
  return acc / static_cast<S>(n_an * l_s);
}

// Spectral loss of the original sequence against itself with only the masked
// positions replaced by the reconstruction. Isolates reconstruction quality
// on masked regions while staying in the same units as the training loss.
template <typename S>
S masked_spectral_loss(const Seq<S>& recon, const Seq<S>& target, const MaskSpec& mask, int n_an,
                       int l_s) {
  detail::check_seq_shapes(recon, target, n_an, l_s);
  if (mask.n_r != n_an * l_s) throw Error(Errc::shape_mismatch, "mask length mismatch");
  Seq<S> spliced = target;
  for (int i : mask.masked_indices()) spliced.col(i) = recon.col(i);
  return spectral_loss<S>(spliced, target, n_an, l_s);
}

// Masked spectral loss plus its gradient w.r.t. recon: the full-sequence
// gradient of the spliced loss, restricted to masked columns (unmasked
// columns of recon never enter the loss).
template <typename S>
S masked_spectral_loss_backward(const Seq<S>& recon, const Seq<S>& target, const MaskSpec& mask,
                                int n_an, int l_s, Seq<S>& grad) {
  detail::check_seq_shapes(recon, target, n_an, l_s);
  if (mask.n_r != n_an * l_s) throw Error(Errc::shape_mismatch, "mask length mismatch");
  Seq<S> spliced = target;
  const auto masked = mask.masked_indices();
  for (int i : masked) spliced.col(i) = recon.col(i);
  Seq<S> full_grad;
  const S loss = spectral_loss_backward<S>(spliced, target, n_an, l_s, full_grad);
  grad = Seq<S>::Zero(2, full_grad.cols());
  for (int i : masked) grad.col(i) = full_grad.col(i);
  return loss;
}

// Squared Euclidean distance in metres^2.
template <typename S>
S localization_loss(S pred_x, S pred_y, S ref_x, S ref_y) {
  const S dx = pred_x - ref_x;
  const S dy = pred_y - ref_y;
  return dx * dx + dy * dy;
}

// Gradient of localization_loss w.r.t. the prediction: (2 dx, 2 dy).
template <typename S>
std::pair<S, S> localization_loss_grad(S pred_x, S pred_y, S ref_x, S ref_y) {
  return {static_cast<S>(2) * (pred_x - ref_x), static_cast<S>(2) * (pred_y - ref_y)};
}

}  // namespace cirtf
