#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"

#include "cirtf/losses.hpp"
#include "cirtf/model.hpp"

using namespace cirtf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.conv_kernel = 5;
  c.l_s = 4;
  c.n_an = 3;
  return c;
}

template <typename S>
Seq<S> random_input(int n_r, Rng& rng) {
  Seq<S> s(2, n_r);
  for (int t = 0; t < n_r; ++t) {
    s(0, t) = static_cast<S>(rng.normal());
    s(1, t) = static_cast<S>(rng.normal());
  }
  return s;
}

template <typename S>
bool bitwise_equal(const Mat<S>& a, const Mat<S>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("parameter counts match the two scale presets") {
  auto paper = ParamSet<float>::zeros(ModelConfig::paper_scale());
  CHECK_EQ(paper.param_count(), 14970884);
  CHECK(paper.param_count() >= 12000000);
  CHECK(paper.param_count() <= 18000000);

  auto desk = ParamSet<float>::zeros(ModelConfig::desk_scale());
  CHECK_EQ(desk.param_count(), 104580);
  CHECK(desk.param_count() < 300000);
}

TEST_CASE("config validation rejects bad shapes") {
  ModelConfig c = tiny_config();
  c.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.conv_kernel = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.p_drop = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.d_model = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("initialization is seed-deterministic with documented structure") {
  const auto cfg = tiny_config();
  auto a = init_parameters<float>(cfg, 42);
  auto b = init_parameters<float>(cfg, 42);
  auto c = init_parameters<float>(cfg, 43);

  auto va = a.tensors(), vb = b.tensors(), vc = c.tensors();
  REQUIRE_EQ(va.size(), vb.size());
  bool any_diff = false;
  for (size_t i = 0; i < va.size(); ++i) {
    CHECK_EQ(va[i].name, vb[i].name);
    REQUIRE_EQ(va[i].size, vb[i].size);
    for (Eigen::Index j = 0; j < va[i].size; ++j) {
      CHECK_EQ(va[i].data[j], vb[i].data[j]);
      if (va[i].data[j] != vc[i].data[j]) any_diff = true;
    }
  }
  CHECK(any_diff);

  CHECK((a.blocks[0].ln1_g.array() == 1.0f).all());
  CHECK((a.final_ln_g.array() == 1.0f).all());
  CHECK((a.in_proj_b.array() == 0.0f).all());
  CHECK((a.blocks[0].bq.array() == 0.0f).all());
  CHECK((a.final_ln_b.array() == 0.0f).all());
  CHECK(a.mask_emb.template lpNorm<Eigen::Infinity>() < 0.2f);
  CHECK(a.mask_emb.template lpNorm<Eigen::Infinity>() > 0.0f);
  CHECK(a.cls_emb.template lpNorm<Eigen::Infinity>() < 0.2f);
}

TEST_CASE("embedding applies projection, mask replacement, and CLS") {
  const auto cfg = tiny_config();
  auto p = init_parameters<double>(cfg, 5);
  Rng rng(91);
  auto input = random_input<double>(cfg.n_r(), rng);

  ForwardTrace<double> tr;
  embed_and_mask(p, input, MaskSpec::none(cfg.n_r()), tr);
  CHECK(bitwise_equal<double>(tr.x_masked, tr.x_proj));
  CHECK_EQ(tr.latents.cols(), cfg.n_r() + 1);
  CHECK((tr.latents.col(0).array() == p.cls_emb.array()).all());

  MaskSpec mask{{0, 6}, 3, cfg.n_r()};
  ForwardTrace<double> tm;
  embed_and_mask(p, input, mask, tm);
  const auto flags = mask.flags();
  for (int t = 0; t < cfg.n_r(); ++t) {
    if (flags[static_cast<size_t>(t)]) {
      CHECK((tm.x_masked.col(t).array() == p.mask_emb.array()).all());
    } else {
      CHECK((tm.x_masked.col(t).array() == tm.x_proj.col(t).array()).all());
    }
  }

  // Two inputs that differ only under a mask produce identical latents.
  auto input2 = input;
  input2(0, 1) += 3.0;
  input2(1, 7) -= 2.0;
  ForwardTrace<double> tm2;
  embed_and_mask(p, input2, mask, tm2);
  CHECK(bitwise_equal<double>(tm.latents, tm2.latents));
}

TEST_CASE("embedding rejects out-of-range and mismatched masks") {
  const auto cfg = tiny_config();
  auto p = init_parameters<double>(cfg, 5);
  Rng rng(92);
  auto input = random_input<double>(cfg.n_r(), rng);
  ForwardTrace<double> tr;

  CHECK_THROWS_AS(embed_and_mask(p, input, MaskSpec{{10}, 3, cfg.n_r()}, tr), Error);
  CHECK_THROWS_AS(embed_and_mask(p, input, MaskSpec{{-1}, 3, cfg.n_r()}, tr), Error);
  CHECK_THROWS_AS(embed_and_mask(p, input, MaskSpec{{0}, 3, cfg.n_r() - 2}, tr), Error);
  CHECK_NOTHROW(embed_and_mask(p, input, MaskSpec{{9}, 3, cfg.n_r()}, tr));
}

TEST_CASE("attention rows are probability distributions") {
  const auto cfg = ModelConfig::desk_scale();
  auto p = init_parameters<float>(cfg, 7);
  Rng rng(93);
  auto input = random_input<float>(cfg.n_r(), rng);
  auto tr = forward(p, input, MaskSpec{{4, 40}, 8, cfg.n_r()}, RunMode::eval, 0);

  REQUIRE_EQ(tr.blocks.size(), static_cast<size_t>(cfg.n_blocks));
  for (const auto& bt : tr.blocks) {
    REQUIRE_EQ(bt.attn.size(), static_cast<size_t>(cfg.n_heads));
    for (const auto& prob : bt.attn) {
      REQUIRE_EQ(prob.rows(), cfg.n_r() + 1);
      for (Eigen::Index r = 0; r < prob.rows(); ++r) {
        CHECK(std::abs(prob.row(r).sum() - 1.0f) <= 1e-6f);
        CHECK(prob.row(r).minCoeff() >= 0.0f);
      }
    }
  }
}

TEST_CASE("output shapes track the input length") {
  ModelConfig cfg = tiny_config();
  for (int l_s : {4, 7}) {
    cfg.l_s = l_s;
    cfg.conv_kernel = 5;
    auto p = init_parameters<float>(cfg, 11);
    Rng rng(94);
    auto input = random_input<float>(cfg.n_r(), rng);
    auto tr = forward(p, input, MaskSpec::none(cfg.n_r()), RunMode::eval, 0);
    CHECK_EQ(tr.recon.cols(), cfg.n_r());
    CHECK_EQ(tr.encoded.cols(), cfg.n_r() + 1);
  }
}

TEST_CASE("eval mode is deterministic, train mode is seed-reproducible") {
  const auto cfg = tiny_config();
  auto p = init_parameters<float>(cfg, 13);
  Rng rng(95);
  auto input = random_input<float>(cfg.n_r(), rng);
  MaskSpec mask{{2}, 3, cfg.n_r()};

  auto e1 = forward(p, input, mask, RunMode::eval, 1);
  auto e2 = forward(p, input, mask, RunMode::eval, 2);
  CHECK(bitwise_equal<float>(Mat<float>(e1.recon), Mat<float>(e2.recon)));
  CHECK(bitwise_equal<float>(e1.encoded, e2.encoded));
  CHECK_EQ(e1.loc_x, e2.loc_x);
  CHECK_EQ(e1.loc_y, e2.loc_y);

  auto t1 = forward(p, input, mask, RunMode::train, 17);
  auto t2 = forward(p, input, mask, RunMode::train, 17);
  CHECK(bitwise_equal<float>(Mat<float>(t1.recon), Mat<float>(t2.recon)));
  CHECK(bitwise_equal<float>(t1.encoded, t2.encoded));

  auto t3 = forward(p, input, mask, RunMode::train, 18);
  CHECK_FALSE(bitwise_equal<float>(t1.encoded, t3.encoded));
  CHECK_FALSE(bitwise_equal<float>(t1.encoded, e1.encoded));
}

TEST_CASE("encoder is permutation-equivariant once the positional conv is removed") {
  ModelConfig cfg = tiny_config();
  cfg.l_s = 4;
  cfg.n_an = 2;  // 8-step sequence
  auto p = init_parameters<double>(cfg, 21);
  p.conv_w.setZero();
  p.conv_b.setZero();

  Rng rng(96);
  auto input = random_input<double>(cfg.n_r(), rng);
  auto base = forward(p, input, MaskSpec::none(cfg.n_r()), RunMode::eval, 0);

  std::vector<int> perm(static_cast<size_t>(cfg.n_r()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 gen(123);
  std::shuffle(perm.begin(), perm.end(), gen);

  Seq<double> shuffled(2, cfg.n_r());
  for (int t = 0; t < cfg.n_r(); ++t) shuffled.col(perm[static_cast<size_t>(t)]) = input.col(t);
  auto permuted = forward(p, shuffled, MaskSpec::none(cfg.n_r()), RunMode::eval, 0);

  for (int t = 0; t < cfg.n_r(); ++t) {
    const int q = perm[static_cast<size_t>(t)];
    CHECK((permuted.encoded.col(1 + q) - base.encoded.col(1 + t)).template lpNorm<Eigen::Infinity>() <
          1e-9);
    CHECK((permuted.recon.col(q) - base.recon.col(t)).template lpNorm<Eigen::Infinity>() < 1e-9);
  }
  CHECK_EQ(permuted.loc_x, doctest::Approx(base.loc_x).epsilon(1e-12));
  CHECK_EQ(permuted.loc_y, doctest::Approx(base.loc_y).epsilon(1e-12));
}

TEST_CASE("heads read the right representations") {
  const auto cfg = tiny_config();
  auto p = ParamSet<double>::zeros(cfg);
  Mat<double> encoded = Mat<double>::Zero(cfg.d_model, cfg.n_r() + 1);

  // Zero representations and zero weights: zero outputs.
  Seq<double> rec = reconstruction_head(p, encoded);
  CHECK_EQ(rec.cols(), cfg.n_r());
  CHECK_EQ(rec.template lpNorm<Eigen::Infinity>(), 0.0);

  // Bias propagates to every position.
  p.recon_b << 0.5, -0.25;
  rec = reconstruction_head(p, encoded);
  for (int t = 0; t < cfg.n_r(); ++t) {
    CHECK_EQ(rec(0, t), 0.5);
    CHECK_EQ(rec(1, t), -0.25);
  }

  p.loc_b << 3.25, -1.5;
  auto [lx, ly] = localization_head(p, encoded);
  CHECK_EQ(lx, 3.25);
  CHECK_EQ(ly, -1.5);

  // The localization head sees only the CLS column; the reconstruction head
  // never sees it.
  p.loc_w.setOnes();
  p.recon_w.setOnes();
  encoded.col(3).setConstant(2.0);
  auto [lx2, ly2] = localization_head(p, encoded);
  CHECK_EQ(lx2, 3.25);
  CHECK_EQ(ly2, -1.5);
  encoded.setZero();
  encoded.col(0).setConstant(1.0);
  rec = reconstruction_head(p, encoded);
  CHECK_EQ(rec(0, 0), 0.5);
  auto [lx3, ly3] = localization_head(p, encoded);
  CHECK_EQ(lx3, doctest::Approx(3.25 + cfg.d_model).epsilon(1e-12));
}

TEST_CASE("the position estimate depends on every input position") {
  const auto cfg = tiny_config();
  auto p = init_parameters<double>(cfg, 29);
  Rng rng(97);
  auto input = random_input<double>(cfg.n_r(), rng);
  auto base = forward(p, input, MaskSpec::none(cfg.n_r()), RunMode::eval, 0);

  for (int t = 0; t < cfg.n_r(); ++t) {
    auto bumped = input;
    bumped(0, t) += 0.25;
    auto tr = forward(p, bumped, MaskSpec::none(cfg.n_r()), RunMode::eval, 0);
    CHECK(std::abs(tr.loc_x - base.loc_x) + std::abs(tr.loc_y - base.loc_y) > 1e-12);
  }
}

TEST_CASE("analytic gradients match central finite differences for every tensor") {
  const auto cfg = tiny_config();
  auto p = init_parameters<double>(cfg, 31);
  Rng rng(98);
  auto input = random_input<double>(cfg.n_r(), rng);
  auto target = random_input<double>(cfg.n_r(), rng);
  MaskSpec mask{{1, 7}, 3, cfg.n_r()};
  const double ref_x = 1.7, ref_y = -0.4;
  const uint64_t drop_seed = 77;

  auto loss_of = [&](ParamSet<double>& q) {
    auto tr = forward(q, input, mask, RunMode::train, drop_seed);
    return masked_spectral_loss<double>(tr.recon, target, mask, cfg.n_an, cfg.l_s) +
           localization_loss<double>(tr.loc_x, tr.loc_y, ref_x, ref_y);
  };

  auto tr = forward(p, input, mask, RunMode::train, drop_seed);
  Seq<double> d_recon;
  masked_spectral_loss_backward<double>(tr.recon, target, mask, cfg.n_an, cfg.l_s, d_recon);
  auto [glx, gly] = localization_loss_grad<double>(tr.loc_x, tr.loc_y, ref_x, ref_y);
  auto grads = ParamSet<double>::zeros(cfg);
  backward(p, tr, d_recon, glx, gly, grads);

  const double h = 1e-4;
  auto pv = p.tensors();
  auto gv = grads.tensors();
  REQUIRE_EQ(pv.size(), gv.size());
  for (size_t i = 0; i < pv.size(); ++i) {
    double num = 0, den_an = 0, den_fd = 0;
    for (Eigen::Index j = 0; j < pv[i].size; ++j) {
      const double saved = pv[i].data[j];
      pv[i].data[j] = saved + h;
      const double fp = loss_of(p);
      pv[i].data[j] = saved - h;
      const double fm = loss_of(p);
      pv[i].data[j] = saved;
      const double fd = (fp - fm) / (2 * h);
      const double an = gv[i].data[j];
      num += (fd - an) * (fd - an);
      den_an += an * an;
      den_fd += fd * fd;
    }
    INFO("tensor ", pv[i].name);
    if (pv[i].name.ends_with("attn.bk")) {
      // A shared key offset shifts every attention row uniformly, which the
      // softmax cancels: the key bias is a null direction of the loss. Both
      // sides must agree it is (numerically) zero.
      CHECK(std::sqrt(den_an) < 1e-9);
      CHECK(std::sqrt(den_fd) < 1e-6);
    } else {
      const double denom = std::sqrt(std::max(den_an, den_fd));
      REQUIRE(denom > 0.0);
      CHECK(std::sqrt(num) / denom <= 1e-4);
    }
  }
}
