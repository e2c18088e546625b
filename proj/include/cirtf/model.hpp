#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cirtf/common.hpp"
#include "cirtf/data.hpp"
#include "cirtf/masking.hpp"
#include "cirtf/rng.hpp"

namespace cirtf {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ModelConfig {
  int d_model = 64;
  int n_blocks = 2;
  int n_heads = 4;
  int d_ff = 128;
  double p_drop = 0.2;
  int l_s = 32;
  int n_an = 4;
  int conv_kernel = 9;

  int n_r() const { return n_an * l_s; }
  int d_head() const { return d_model / n_heads; }

  static ModelConfig desk_scale() { return ModelConfig{}; }
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.d_model = 512;
    c.n_blocks = 4;
    c.n_heads = 16;
    c.d_ff = 1024;
    c.conv_kernel = 25;
    return c;
  }

  void validate() const {
    if (d_model <= 0 || n_blocks <= 0 || n_heads <= 0 || d_ff <= 0 || l_s <= 0 || n_an <= 0) {
      throw Error(Errc::config, "model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw Error(Errc::config, "d_model must be divisible by the head count");
    }
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw Error(Errc::config, "p_drop must lie in [0, 1)");
    if (conv_kernel <= 0 || conv_kernel % 2 == 0) {
      throw Error(Errc::config, "conv_kernel must be odd and positive");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Exact GELU and its derivative; used by the positional conv and the FFN.
template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865476)));
}
template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename S>
struct TensorView {
  std::string name;
  S* data;
  Eigen::Index size;
};

template <typename S>
struct BlockParams {
  Vec<S> ln1_g, ln1_b;
  Mat<S> wq, wk, wv, wo;
  Vec<S> bq, bk, bv, bo;
  Vec<S> ln2_g, ln2_b;
  Mat<S> w1;  // d_ff x d_model
  Vec<S> b1;
  Mat<S> w2;  // d_model x d_ff
  Vec<S> b2;
};

// All learnable tensors. tensors() exposes them in a fixed order shared by
// the checkpoint format and the optimizer state.
template <typename S>
struct ParamSet {
  ModelConfig cfg;
  Mat<S> in_proj_w;  // d_model x 2
  Vec<S> in_proj_b;
  Vec<S> mask_emb, cls_emb;
  Mat<S> conv_w;  // d_model x (d_model * conv_kernel), tap-major blocks
  Vec<S> conv_b;
  std::vector<BlockParams<S>> blocks;
  Vec<S> final_ln_g, final_ln_b;
  Mat<S> recon_w;  // 2 x d_model
  Vec<S> recon_b;
  Mat<S> loc_w;  // 2 x d_model
  Vec<S> loc_b;

  static ParamSet<S> zeros(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.d_model;
    ParamSet<S> p;
    p.cfg = cfg;
    p.in_proj_w = Mat<S>::Zero(d, 2);
    p.in_proj_b = Vec<S>::Zero(d);
    p.mask_emb = Vec<S>::Zero(d);
    p.cls_emb = Vec<S>::Zero(d);
    p.conv_w = Mat<S>::Zero(d, static_cast<Eigen::Index>(d) * cfg.conv_kernel);
    p.conv_b = Vec<S>::Zero(d);
    p.blocks.resize(static_cast<size_t>(cfg.n_blocks));
    for (auto& b : p.blocks) {
      b.ln1_g = Vec<S>::Zero(d);
      b.ln1_b = Vec<S>::Zero(d);
      b.wq = Mat<S>::Zero(d, d);
      b.wk = Mat<S>::Zero(d, d);
      b.wv = Mat<S>::Zero(d, d);
      b.wo = Mat<S>::Zero(d, d);
      b.bq = Vec<S>::Zero(d);
      b.bk = Vec<S>::Zero(d);
      b.bv = Vec<S>::Zero(d);
      b.bo = Vec<S>::Zero(d);
      b.ln2_g = Vec<S>::Zero(d);
      b.ln2_b = Vec<S>::Zero(d);
      b.w1 = Mat<S>::Zero(cfg.d_ff, d);
      b.b1 = Vec<S>::Zero(cfg.d_ff);
      b.w2 = Mat<S>::Zero(d, cfg.d_ff);
      b.b2 = Vec<S>::Zero(d);
    }
    p.final_ln_g = Vec<S>::Zero(d);
    p.final_ln_b = Vec<S>::Zero(d);
    p.recon_w = Mat<S>::Zero(2, d);
    p.recon_b = Vec<S>::Zero(2);
    p.loc_w = Mat<S>::Zero(2, d);
    p.loc_b = Vec<S>::Zero(2);
    return p;
  }

  std::vector<TensorView<S>> tensors() {
    std::vector<TensorView<S>> v;
    auto add = [&v](const std::string& name, auto& m) {
      v.push_back({name, m.data(), m.size()});
    };
    add("in_proj.w", in_proj_w);
    add("in_proj.b", in_proj_b);
    add("mask_emb", mask_emb);
    add("cls_emb", cls_emb);
    add("pos_conv.w", conv_w);
    add("pos_conv.b", conv_b);
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string pre = "block" + std::to_string(i) + ".";
      auto& b = blocks[i];
      add(pre + "ln1.g", b.ln1_g);
      add(pre + "ln1.b", b.ln1_b);
      add(pre + "attn.wq", b.wq);
      add(pre + "attn.bq", b.bq);
      add(pre + "attn.wk", b.wk);
      add(pre + "attn.bk", b.bk);
      add(pre + "attn.wv", b.wv);
      add(pre + "attn.bv", b.bv);
      add(pre + "attn.wo", b.wo);
      add(pre + "attn.bo", b.bo);
      add(pre + "ln2.g", b.ln2_g);
      add(pre + "ln2.b", b.ln2_b);
      add(pre + "ffn.w1", b.w1);
      add(pre + "ffn.b1", b.b1);
      add(pre + "ffn.w2", b.w2);
      add(pre + "ffn.b2", b.b2);
    }
    add("final_ln.g", final_ln_g);
    add("final_ln.b", final_ln_b);
    add("recon_head.w", recon_w);
    add("recon_head.b", recon_b);
    add("loc_head.w", loc_w);
    add("loc_head.b", loc_b);
    return v;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (const auto& t : tensors()) n += t.size;
    return n;
  }

  void set_zero() {
    for (auto& t : tensors()) {
      for (Eigen::Index i = 0; i < t.size; ++i) t.data[i] = S(0);
    }
  }
};

// Fan-based uniform init for weights, zeros for biases, ones for norm gains,
// N(0, 0.02) for the mask/CLS embeddings. Draws happen in double and are
// narrowed, so every scalar type sees the same underlying values. Each tensor
// gets its own derived stream: the layout of one tensor never shifts the
// draws of another.
template <typename S>
ParamSet<S> init_parameters(const ModelConfig& cfg, uint64_t seed) {
  ParamSet<S> p = ParamSet<S>::zeros(cfg);
  auto views = p.tensors();
  for (size_t i = 0; i < views.size(); ++i) {
    auto& t = views[i];
    Rng rng(mix_seed({seed, seed_tag::init, static_cast<uint64_t>(i)}));
    const bool is_bias = t.name.ends_with(".b") || t.name.ends_with(".bq") ||
                         t.name.ends_with(".bk") || t.name.ends_with(".bv") ||
                         t.name.ends_with(".bo") || t.name.ends_with(".b1") ||
                         t.name.ends_with(".b2");
    if (t.name.ends_with("ln1.g") || t.name.ends_with("ln2.g") || t.name.ends_with("final_ln.g")) {
      for (Eigen::Index j = 0; j < t.size; ++j) t.data[j] = S(1);
    } else if (t.name == "mask_emb" || t.name == "cls_emb") {
      for (Eigen::Index j = 0; j < t.size; ++j) t.data[j] = S(rng.normal() * 0.02);
    } else if (is_bias || t.name.ends_with("ln1.b") || t.name.ends_with("ln2.b") ||
               t.name.ends_with("final_ln.b")) {
      // already zero
    } else {
      // Weight matrix: uniform(-lim, lim), lim = sqrt(6 / (rows + cols)) of
      // the stored shape.
      Eigen::Index rows = 0, cols = 0;
      if (t.name == "in_proj.w") rows = cfg.d_model, cols = 2;
      else if (t.name == "pos_conv.w") rows = cfg.d_model, cols = static_cast<Eigen::Index>(cfg.d_model) * cfg.conv_kernel;
      else if (t.name.ends_with("ffn.w1")) rows = cfg.d_ff, cols = cfg.d_model;
      else if (t.name.ends_with("ffn.w2")) rows = cfg.d_model, cols = cfg.d_ff;
      else if (t.name.ends_with("head.w")) rows = 2, cols = cfg.d_model;
      else rows = cfg.d_model, cols = cfg.d_model;  // attention projections
      const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Eigen::Index j = 0; j < t.size; ++j) t.data[j] = S(rng.uniform(-lim, lim));
    }
  }
  return p;
}

enum class RunMode { train, eval };

template <typename S>
struct LnCache {
  Mat<S> xhat;     // normalized input (pre gain/offset)
  Mat<S> out;      // g .* xhat + b
  Vec<S> inv_std;  // per column
};

template <typename S>
struct BlockTrace {
  Mat<S> x_in;
  LnCache<S> ln1;
  Mat<S> q, k, v;            // d_model x T, heads stacked row-wise
  std::vector<Mat<S>> attn;  // per head: T x T, row = query, rows sum to 1
  Mat<S> attn_concat;        // d_model x T
  Mat<S> drop1;              // dropout factors, empty in eval mode
  Mat<S> y;                  // after attention residual
  LnCache<S> ln2;
  Mat<S> ff_pre;  // d_ff x T
  Mat<S> drop2;
};

template <typename S>
struct ForwardTrace {
  MaskSpec mask;
  Seq<S> input;      // 2 x N_r
  Mat<S> x_proj;     // d x N_r, before mask replacement
  Mat<S> x_masked;   // d x N_r, after replacement
  Mat<S> conv_raw;   // d x N_r, pre-GELU conv output
  Mat<S> latents;    // d x (N_r + 1), CLS at column 0
  std::vector<BlockTrace<S>> blocks;
  LnCache<S> final_ln;
  Mat<S> encoded;  // d x (N_r + 1)
  Seq<S> recon;    // 2 x N_r
  S loc_x = 0, loc_y = 0;
};

namespace detail {

inline constexpr double kLnEps = 1e-5;

template <typename S>
LnCache<S> layer_norm(const Mat<S>& x, const Vec<S>& g, const Vec<S>& b) {
  const Eigen::Index d = x.rows(), t = x.cols();
  LnCache<S> c;
  c.xhat.resize(d, t);
  c.inv_std.resize(t);
  for (Eigen::Index j = 0; j < t; ++j) {
    const S mu = x.col(j).mean();
    const S var = (x.col(j).array() - mu).square().sum() / static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + S(kLnEps));
    c.inv_std[j] = inv;
    c.xhat.col(j) = (x.col(j).array() - mu) * inv;
  }
  c.out = ((c.xhat.array().colwise() * g.array()).colwise() + b.array()).matrix();
  return c;
}

// Backward through layer_norm; adds parameter grads, returns dL/dx.
template <typename S>
Mat<S> layer_norm_backward(const LnCache<S>& c, const Vec<S>& g, const Mat<S>& dy, Vec<S>& dg,
                           Vec<S>& db) {
  const Eigen::Index d = c.xhat.rows(), t = c.xhat.cols();
  dg += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
  db += dy.rowwise().sum();
  Mat<S> dxhat = (dy.array().colwise() * g.array()).matrix();
  Mat<S> dx(d, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    const S m1 = dxhat.col(j).mean();
    const S m2 = (dxhat.col(j).array() * c.xhat.col(j).array()).mean();
    dx.col(j) =
        (((dxhat.col(j).array() - m1) - c.xhat.col(j).array() * m2) * c.inv_std[j]).matrix();
  }
  return dx;
}

// Same-padded 1D conv over the sequence axis. conv_w holds conv_kernel
// d x d blocks, tap j at columns [j*d, (j+1)*d).
template <typename S>
Mat<S> pos_conv(const ParamSet<S>& p, const Mat<S>& x) {
  const Eigen::Index d = x.rows(), t = x.cols();
  const int k = p.cfg.conv_kernel, c = k / 2;
  Mat<S> out = p.conv_b.replicate(1, t);
  for (int j = 0; j < k; ++j) {
    const auto wj = p.conv_w.middleCols(static_cast<Eigen::Index>(j) * d, d);
    const Eigen::Index lo = std::max<Eigen::Index>(0, c - j);
    const Eigen::Index hi = std::min<Eigen::Index>(t, t + c - j);
    if (lo >= hi) continue;
    out.middleCols(lo, hi - lo).noalias() += wj * x.middleCols(lo + j - c, hi - lo);
  }
  return out;
}

template <typename S>
void pos_conv_backward(const ParamSet<S>& p, const Mat<S>& x, const Mat<S>& dout, Mat<S>& dx,
                       ParamSet<S>& grads) {
  const Eigen::Index d = x.rows(), t = x.cols();
  const int k = p.cfg.conv_kernel, c = k / 2;
  grads.conv_b += dout.rowwise().sum();
  for (int j = 0; j < k; ++j) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, c - j);
    const Eigen::Index hi = std::min<Eigen::Index>(t, t + c - j);
    if (lo >= hi) continue;
    auto dwj = grads.conv_w.middleCols(static_cast<Eigen::Index>(j) * d, d);
    dwj.noalias() += dout.middleCols(lo, hi - lo) * x.middleCols(lo + j - c, hi - lo).transpose();
    dx.middleCols(lo + j - c, hi - lo).noalias() +=
        p.conv_w.middleCols(static_cast<Eigen::Index>(j) * d, d).transpose() *
        dout.middleCols(lo, hi - lo);
  }
}

template <typename S>
Mat<S> dropout_factors(Eigen::Index rows, Eigen::Index cols, double p_drop, Rng& rng) {
  Mat<S> f(rows, cols);
  const S keep = S(1.0 / (1.0 - p_drop));
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      f(i, j) = rng.uniform() < p_drop ? S(0) : keep;
    }
  }
  return f;
}

}  // namespace detail

// Projects the 2D taps into latent space, replaces masked positions with the
// mask embedding, adds the positional conv output, and prepends the CLS
// embedding (untouched by masking and positional encoding).
template <typename S>
void embed_and_mask(const ParamSet<S>& p, const Seq<S>& seq, const MaskSpec& mask,
                    ForwardTrace<S>& tr) {
  const Eigen::Index n_r = seq.cols();
  if (!mask.empty() && mask.n_r != n_r) {
    throw Error(Errc::shape_mismatch, "mask defined over a different sequence length");
  }
  for (int s : mask.starts) {
    if (s < 0 || s + mask.l_m > n_r) throw Error(Errc::domain, "mask index out of range");
  }
  tr.mask = mask;
  tr.input = seq;
  tr.x_proj.noalias() = p.in_proj_w * seq;
  tr.x_proj.colwise() += p.in_proj_b;
  tr.x_masked = tr.x_proj;
  for (int i : mask.masked_indices()) tr.x_masked.col(i) = p.mask_emb;
  tr.conv_raw = detail::pos_conv(p, tr.x_masked);
  tr.latents.resize(p.cfg.d_model, n_r + 1);
  tr.latents.col(0) = p.cls_emb;
  tr.latents.rightCols(n_r) =
      tr.x_masked + tr.conv_raw.unaryExpr([](S v) { return gelu(v); });
}

// Encoder stack on an arbitrary-length latent sequence: n_blocks
// pre-normalization blocks (x += MHA(LN(x)); x += FFN(LN(x))) and a final
// layer norm. Dropout only in train mode, derived from dropout_seed.
template <typename S>
void encode(const ParamSet<S>& p, const Mat<S>& latents, RunMode mode, uint64_t dropout_seed,
            ForwardTrace<S>& tr) {
  const Eigen::Index d = p.cfg.d_model, t = latents.cols();
  if (latents.rows() != d || t < 1) throw Error(Errc::shape_mismatch, "bad latent shape");
  const int h = p.cfg.n_heads, dk = p.cfg.d_head();
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  const bool train = mode == RunMode::train && p.cfg.p_drop > 0.0;

  tr.blocks.clear();
  tr.blocks.resize(static_cast<size_t>(p.cfg.n_blocks));
  Mat<S> x = latents;
  for (int bi = 0; bi < p.cfg.n_blocks; ++bi) {
    auto& bp = p.blocks[static_cast<size_t>(bi)];
    auto& bt = tr.blocks[static_cast<size_t>(bi)];
    bt.x_in = x;
    bt.ln1 = detail::layer_norm<S>(x, bp.ln1_g, bp.ln1_b);

    bt.q.noalias() = bp.wq * bt.ln1.out;
    bt.q.colwise() += bp.bq;
    bt.k.noalias() = bp.wk * bt.ln1.out;
    bt.k.colwise() += bp.bk;
    bt.v.noalias() = bp.wv * bt.ln1.out;
    bt.v.colwise() += bp.bv;

    bt.attn.resize(static_cast<size_t>(h));
    bt.attn_concat.resize(d, t);
    for (int hi = 0; hi < h; ++hi) {
      const auto qi = bt.q.middleRows(hi * dk, dk);
      const auto ki = bt.k.middleRows(hi * dk, dk);
      const auto vi = bt.v.middleRows(hi * dk, dk);
      Mat<S> scores = (qi.transpose() * ki) * scale;  // rows = queries
      Mat<S>& prob = bt.attn[static_cast<size_t>(hi)];
      prob.resize(t, t);
      for (Eigen::Index r = 0; r < t; ++r) {
        const S mx = scores.row(r).maxCoeff();
        prob.row(r) = (scores.row(r).array() - mx).exp().matrix();
        prob.row(r) /= prob.row(r).sum();
      }
      bt.attn_concat.middleRows(hi * dk, dk).noalias() = vi * prob.transpose();
    }

    Mat<S> attn_out = bp.wo * bt.attn_concat;
    attn_out.colwise() += bp.bo;
    if (train) {
      Rng rng(mix_seed({dropout_seed, seed_tag::dropout, static_cast<uint64_t>(bi), 0}));
      bt.drop1 = detail::dropout_factors<S>(d, t, p.cfg.p_drop, rng);
      attn_out.array() *= bt.drop1.array();
    }
    bt.y = x + attn_out;

    bt.ln2 = detail::layer_norm<S>(bt.y, bp.ln2_g, bp.ln2_b);
    bt.ff_pre.noalias() = bp.w1 * bt.ln2.out;
    bt.ff_pre.colwise() += bp.b1;
    Mat<S> ff_out = bp.w2 * bt.ff_pre.unaryExpr([](S v) { return gelu(v); });
    ff_out.colwise() += bp.b2;
    if (train) {
      Rng rng(mix_seed({dropout_seed, seed_tag::dropout, static_cast<uint64_t>(bi), 1}));
      bt.drop2 = detail::dropout_factors<S>(d, t, p.cfg.p_drop, rng);
      ff_out.array() *= bt.drop2.array();
    }
    x = bt.y + ff_out;
  }
  tr.final_ln = detail::layer_norm<S>(x, p.final_ln_g, p.final_ln_b);
  tr.encoded = tr.final_ln.out;
}

// Per-position reconstruction: d_model -> (Re, Im) on positions 1..N_r.
template <typename S>
Seq<S> reconstruction_head(const ParamSet<S>& p, const Mat<S>& encoded) {
  Seq<S> out = p.recon_w * encoded.rightCols(encoded.cols() - 1);
  out.colwise() += p.recon_b;
  return out;
}

// Localization: d_model -> (x, y) on the CLS representation.
template <typename S>
std::pair<S, S> localization_head(const ParamSet<S>& p, const Mat<S>& encoded) {
  Vec<S> out = p.loc_w * encoded.col(0) + p.loc_b;
  return {out[0], out[1]};
}

// Full forward pass with trace. dropout_seed only matters in train mode.
template <typename S>
ForwardTrace<S> forward(const ParamSet<S>& p, const Seq<S>& seq, const MaskSpec& mask,
                        RunMode mode, uint64_t dropout_seed) {
  ForwardTrace<S> tr;
  embed_and_mask(p, seq, mask, tr);
  encode(p, tr.latents, mode, dropout_seed, tr);
  tr.recon = reconstruction_head(p, tr.encoded);
  auto [lx, ly] = localization_head(p, tr.encoded);
  tr.loc_x = lx;
  tr.loc_y = ly;
  return tr;
}

namespace detail {

// Softmax backward, applied row-wise: dS = P .* (dP - rowsum(dP .* P)).
template <typename S>
Mat<S> softmax_rows_backward(const Mat<S>& prob, const Mat<S>& dprob) {
  Mat<S> ds(prob.rows(), prob.cols());
  for (Eigen::Index r = 0; r < prob.rows(); ++r) {
    const S dot = (dprob.row(r).array() * prob.row(r).array()).sum();
    ds.row(r) = (prob.row(r).array() * (dprob.row(r).array() - dot)).matrix();
  }
  return ds;
}

// Backward through the encoder stack; returns dL/dlatents.
template <typename S>
Mat<S> encode_backward(const ParamSet<S>& p, const ForwardTrace<S>& tr, const Mat<S>& d_encoded,
                       ParamSet<S>& grads) {
  const Eigen::Index d = p.cfg.d_model;
  const int h = p.cfg.n_heads, dk = p.cfg.d_head();
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));

  Mat<S> dx =
      layer_norm_backward<S>(tr.final_ln, p.final_ln_g, d_encoded, grads.final_ln_g, grads.final_ln_b);

  for (int bi = p.cfg.n_blocks - 1; bi >= 0; --bi) {
    auto& bp = p.blocks[static_cast<size_t>(bi)];
    auto& bt = tr.blocks[static_cast<size_t>(bi)];
    auto& bg = grads.blocks[static_cast<size_t>(bi)];
    const Eigen::Index t = bt.x_in.cols();

    // x_out = y + drop2 .* (w2 * gelu(ff_pre) + b2)
    Mat<S> d_ff_out = dx;
    if (bt.drop2.size() > 0) d_ff_out.array() *= bt.drop2.array();
    Mat<S> act = bt.ff_pre.unaryExpr([](S v) { return gelu(v); });
    bg.w2.noalias() += d_ff_out * act.transpose();
    bg.b2 += d_ff_out.rowwise().sum();
    Mat<S> d_pre = ((bp.w2.transpose() * d_ff_out).array() *
                    bt.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }).array())
                       .matrix();
    bg.w1.noalias() += d_pre * bt.ln2.out.transpose();
    bg.b1 += d_pre.rowwise().sum();
    Mat<S> d_ln2_out = bp.w1.transpose() * d_pre;
    Mat<S> dy = dx + layer_norm_backward<S>(bt.ln2, bp.ln2_g, d_ln2_out, bg.ln2_g, bg.ln2_b);

    // y = x_in + drop1 .* (wo * concat + bo)
    Mat<S> d_attn_out = dy;
    if (bt.drop1.size() > 0) d_attn_out.array() *= bt.drop1.array();
    bg.wo.noalias() += d_attn_out * bt.attn_concat.transpose();
    bg.bo += d_attn_out.rowwise().sum();
    Mat<S> d_concat = bp.wo.transpose() * d_attn_out;

    Mat<S> dq(d, t), dkm(d, t), dv(d, t);
    for (int hi = 0; hi < h; ++hi) {
      const auto qi = bt.q.middleRows(hi * dk, dk);
      const auto ki = bt.k.middleRows(hi * dk, dk);
      const auto vi = bt.v.middleRows(hi * dk, dk);
      const Mat<S>& prob = bt.attn[static_cast<size_t>(hi)];
      const auto d_oi = d_concat.middleRows(hi * dk, dk);

      dv.middleRows(hi * dk, dk).noalias() = d_oi * prob;
      Mat<S> d_prob = d_oi.transpose() * vi;  // T x dk * ... -> T x T
      Mat<S> d_scores = softmax_rows_backward<S>(prob, d_prob) * scale;
      dq.middleRows(hi * dk, dk).noalias() = ki * d_scores.transpose();
      dkm.middleRows(hi * dk, dk).noalias() = qi * d_scores;
    }

    bg.wq.noalias() += dq * bt.ln1.out.transpose();
    bg.bq += dq.rowwise().sum();
    bg.wk.noalias() += dkm * bt.ln1.out.transpose();
    bg.bk += dkm.rowwise().sum();
    bg.wv.noalias() += dv * bt.ln1.out.transpose();
    bg.bv += dv.rowwise().sum();
    Mat<S> d_ln1_out = bp.wq.transpose() * dq + bp.wk.transpose() * dkm + bp.wv.transpose() * dv;
    dx = dy + layer_norm_backward<S>(bt.ln1, bp.ln1_g, d_ln1_out, bg.ln1_g, bg.ln1_b);
  }
  return dx;
}

}  // namespace detail

// Accumulates parameter gradients for d_recon (2 x N_r, may be zero) and the
// localization gradient (d_loc_x, d_loc_y) into `grads`.
template <typename S>
void backward(const ParamSet<S>& p, const ForwardTrace<S>& tr, const Seq<S>& d_recon, S d_loc_x,
              S d_loc_y, ParamSet<S>& grads) {
  const Eigen::Index n_r = tr.input.cols();
  Mat<S> d_encoded = Mat<S>::Zero(p.cfg.d_model, n_r + 1);

  if (d_recon.size() > 0) {
    if (d_recon.cols() != n_r) throw Error(Errc::shape_mismatch, "bad reconstruction grad shape");
    grads.recon_w.noalias() += d_recon * tr.encoded.rightCols(n_r).transpose();
    grads.recon_b += d_recon.rowwise().sum();
    d_encoded.rightCols(n_r).noalias() += p.recon_w.transpose() * d_recon;
  }
  if (d_loc_x != S(0) || d_loc_y != S(0)) {
    Vec<S> dl(2);
    dl << d_loc_x, d_loc_y;
    grads.loc_w.noalias() += dl * tr.encoded.col(0).transpose();
    grads.loc_b += dl;
    d_encoded.col(0).noalias() += p.loc_w.transpose() * dl;
  }

  Mat<S> d_latents = detail::encode_backward<S>(p, tr, d_encoded, grads);

  grads.cls_emb += d_latents.col(0);
  Mat<S> d_rest = d_latents.rightCols(n_r);

  // latents = x_masked + gelu(conv(x_masked))
  Mat<S> d_conv_raw =
      (d_rest.array() * tr.conv_raw.unaryExpr([](S v) { return gelu_grad(v); }).array()).matrix();
  Mat<S> d_x_masked = d_rest;
  detail::pos_conv_backward<S>(p, tr.x_masked, d_conv_raw, d_x_masked, grads);

  // Replacement: masked columns route to the mask embedding, the projection
  // below them got overwritten and receives nothing.
  Mat<S> d_x_proj = d_x_masked;
  for (int i : tr.mask.masked_indices()) {
    grads.mask_emb += d_x_masked.col(i);
    d_x_proj.col(i).setZero();
  }
  grads.in_proj_w.noalias() += d_x_proj * tr.input.transpose();
  grads.in_proj_b += d_x_proj.rowwise().sum();
}

}  // namespace cirtf
