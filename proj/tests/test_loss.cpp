#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ucmnet/loss.hpp"

using namespace ucmnet;
using ad::Tape;
using ad::Var;

namespace {

int refl(int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); }

// direct stencil application with reflect boundary sampling
double lap_at(const Tensor64& img, int i, int j, int ch) {
  const int h = img.shape[0], w = img.shape[1];
  auto v = [&](int y, int x) { return img.at({refl(y, h), refl(x, w), ch}); };
  return v(i - 1, j) + v(i + 1, j) + v(i, j - 1) + v(i, j + 1) - 4.0 * v(i, j);
}

double udl_scalar(double e, double s) { return std::exp(-s) * e + 2.0 * s; }

}  // namespace

TEST_CASE("laplacian: constants vanish, ramps vanish in the interior, stencil oracle") {
  Tape<double> t;

  auto flat = ad::constant(t, Tensor64::full({4, 5, 2}, 0.37));
  for (double v : laplacian(flat).val().data) CHECK(v == 0.0);

  Tensor64 ramp({5, 6, 1});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) ramp.at({i, j, 0}) = 0.125 * j;  // binary-exact slope
  auto lr = laplacian(ad::constant(t, ramp)).val();
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 5; ++j) CHECK(lr.at({i, j, 0}) == 0.0);

  Rng rng(3);
  auto img = random_uniform<double>(rng, {5, 5, 2}, 0.0, 1.0);
  auto got = laplacian(ad::constant(t, img)).val();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      for (int ch = 0; ch < 2; ++ch)
        CHECK(got.at({i, j, ch}) == doctest::Approx(lap_at(img, i, j, ch)).epsilon(1e-12));

  CHECK_THROWS_AS(laplacian(ad::constant(t, Tensor64::ones({2, 5, 1}))), ShapeError);
}

TEST_CASE("udl: closed-form values and the s=0 reduction") {
  Tape<double> t;
  Rng rng(4);
  auto gt = random_uniform<double>(rng, {4, 4, 3}, 0.0, 1.0);

  // identical images, s = 0 -> 0
  auto zero_s = ad::constant(t, Tensor64::zeros({4, 4, 1}));
  auto same = udl(ad::constant(t, gt), ad::constant(t, gt), zero_s);
  CHECK(same.val().data[0] == 0.0);

  // per-pixel channel-summed error 1, s = 0 -> 1
  Tensor64 off = gt;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) off.at({i, j, 0}) += 1.0;
  auto one = udl(ad::constant(t, off), ad::constant(t, gt), zero_s);
  CHECK(one.val().data[0] == doctest::Approx(1.0).epsilon(1e-15));

  // s = 0 equals the channel-summed pixel-mean L1
  auto pred = random_uniform<double>(rng, {4, 4, 3}, 0.0, 1.0);
  auto got = udl(ad::constant(t, pred), ad::constant(t, gt), zero_s);
  double want = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double e = 0;
      for (int ch = 0; ch < 3; ++ch) e += std::abs(pred.at({i, j, ch}) - gt.at({i, j, ch}));
      want += e;
    }
  want /= 16.0;
  CHECK(got.val().data[0] == doctest::Approx(want).epsilon(1e-15));

  CHECK_THROWS_AS(
      udl(ad::constant(t, Tensor64::ones({3, 3, 3})), ad::constant(t, Tensor64::ones({3, 4, 3})),
          zero_s),
      ShapeError);
}

TEST_CASE("udl minimizer sits at s* = ln(e/2)") {
  const double e = 3.0;
  const double s_star = std::log(e / 2.0);

  // numeric 1-D minimization agrees
  double lo = -5.0, hi = 5.0;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (udl_scalar(e, m1) < udl_scalar(e, m2)) hi = m2;
    else lo = m1;
  }
  CHECK(0.5 * (lo + hi) == doctest::Approx(s_star).epsilon(1e-3));

  // gradient of udl wrt a uniform s map vanishes at s*
  Tape<double> t;
  auto gt = Tensor64::zeros({4, 4, 3});
  auto pred = Tensor64::full({4, 4, 3}, 1.0);  // channel-summed error e = 3 per pixel
  auto s = ad::param(t, Tensor64::full({4, 4, 1}, s_star));
  auto loss = udl(ad::constant(t, pred), ad::constant(t, gt), s);
  auto grads = ad::gradients(loss, {s});
  for (double g : grads[0].data) CHECK(std::abs(g) < 1e-6);
}

TEST_CASE("hf_udl: composition oracle and constant-offset invariance") {
  Rng rng(6);
  auto pred = random_uniform<double>(rng, {6, 5, 3}, 0.0, 1.0);
  auto gt = random_uniform<double>(rng, {6, 5, 3}, 0.0, 1.0);
  auto s_map = random_uniform<double>(rng, {6, 5, 1}, -0.5, 0.5);

  Tape<double> t;
  auto got = hf_udl(ad::constant(t, pred), ad::constant(t, gt), ad::constant(t, s_map));

  // independent composition: direct stencil then the udl formula
  double want = 0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j) {
      double e = 0;
      for (int ch = 0; ch < 3; ++ch)
        e += std::abs(lap_at(pred, i, j, ch) - lap_at(gt, i, j, ch));
      want += udl_scalar(e, s_map.at({i, j, 0}));
    }
  want /= 30.0;
  CHECK(got.val().data[0] == doctest::Approx(want).epsilon(1e-12));

  // identical images, s = 0 -> 0; offsetting Î alone changes nothing
  auto zero_s = ad::constant(t, Tensor64::zeros({6, 5, 1}));
  CHECK(hf_udl(ad::constant(t, gt), ad::constant(t, gt), zero_s).val().data[0] == 0.0);

  Tensor64 shifted = pred;
  for (auto& v : shifted.data) v += 0.25;
  auto base = hf_udl(ad::constant(t, pred), ad::constant(t, gt), ad::constant(t, s_map));
  auto moved = hf_udl(ad::constant(t, shifted), ad::constant(t, gt), ad::constant(t, s_map));
  CHECK(moved.val().data[0] == doctest::Approx(base.val().data[0]).epsilon(1e-9));

  Tensor64 gt_shift = gt;
  for (auto& v : gt_shift.data) v += 0.25;
  auto both = hf_udl(ad::constant(t, shifted), ad::constant(t, gt_shift), ad::constant(t, s_map));
  CHECK(both.val().data[0] == doctest::Approx(base.val().data[0]).epsilon(1e-9));
}

TEST_CASE("psnr_loss: closed forms, clamp floor, independent computation") {
  Tape<double> t;
  Rng rng(7);
  auto gt = random_uniform<double>(rng, {4, 4, 3}, 0.0, 1.0);

  Tensor64 off = gt;
  for (auto& v : off.data) v += 0.1;  // MSE = 0.01
  auto twenty = psnr_loss(ad::constant(t, off), ad::constant(t, gt));
  CHECK(twenty.val().data[0] == doctest::Approx(-20.0).epsilon(1e-9));

  auto floor = psnr_loss(ad::constant(t, gt), ad::constant(t, gt));
  CHECK(floor.val().data[0] <= -119.99);

  auto pred = random_uniform<double>(rng, {4, 4, 3}, 0.0, 1.0);
  double mse = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(gt.data.size());
  auto got = psnr_loss(ad::constant(t, pred), ad::constant(t, gt));
  CHECK(got.val().data[0] == doctest::Approx(10.0 * std::log10(mse)).epsilon(1e-12));
}

TEST_CASE("total_loss: breakdown additivity and the perfect-prediction case") {
  Rng rng(8);
  auto gt = random_uniform<double>(rng, {8, 8, 3}, 0.0, 1.0);
  LossConfig cfg;

  // fabricate a one-stage forward result with a perfect prediction and s = 0
  Tape<double> t;
  ForwardResult<double> fr;
  fr.restored = ad::constant(t, gt);
  StageOutput<double> st;
  st.image = ad::constant(t, area_downsample_raw(gt, 2));
  st.s = ad::constant(t, Tensor64::zeros({4, 4, 1}));
  st.f_u = st.s;
  st.factor = 2;
  fr.stages.push_back(st);

  auto perfect = total_loss(fr, gt, cfg);
  CHECK(perfect.hf == 0.0);
  CHECK(perfect.fidelity <= -119.99);
  CHECK(perfect.total == doctest::Approx(cfg.lambda2 * perfect.fidelity).epsilon(1e-15));

  LossConfig l1cfg;
  l1cfg.fidelity = LossConfig::Fidelity::kL1;
  auto perfect_l1 = total_loss(fr, gt, l1cfg);
  CHECK(perfect_l1.fidelity == 0.0);
  CHECK(perfect_l1.total == 0.0);

  // generic instance through a real model: breakdown sums to the scalar
  Model<double> m(ModelConfig::tiny(), 30);
  Rng rng2(31);
  m.store.entries[static_cast<size_t>(m.head_w)].value =
      random_normal<double>(rng2, {3, 3, 2, 3}, 0.0, 0.2);
  for (const auto& d : m.dec) {
    auto& v = m.store.entries[static_cast<size_t>(d.mean_w)].value;
    v = random_normal<double>(rng2, v.shape, 0.0, 0.2);
  }
  auto img = random_uniform<double>(rng2, {16, 16, 3}, 0.0, 1.0);
  auto target = random_uniform<double>(rng2, {16, 16, 3}, 0.0, 1.0);
  Tape<double> t2;
  auto p = bind_params(t2, m.store);
  auto fr2 = m.forward(p, ad::constant(t2, img));
  auto tl = total_loss(fr2, target, cfg);
  REQUIRE(tl.per_stage.size() == 2);
  double stage_mean = 0.5 * (tl.per_stage[0] + tl.per_stage[1]);
  CHECK(tl.hf == doctest::Approx(stage_mean).epsilon(1e-12));
  CHECK(tl.total ==
        doctest::Approx(cfg.lambda1 * tl.hf + cfg.lambda2 * tl.fidelity).epsilon(1e-12));

  // bad weights rejected
  LossConfig bad;
  bad.lambda1 = 0.0;
  CHECK_THROWS_AS(total_loss(fr, gt, bad), ShapeError);
}

TEST_CASE("gradients of the total loss pass finite differences") {
  // Two numeric hazards are handled here. First, the |.| inside hf_udl has
  // kinks wherever a Laplacian-difference channel is exactly zero; the seed
  // scan below picks an instance whose smallest margin is far beyond any
  // FD-step-induced shift. Second, the default lambda1 = 100 scales the
  // objective to |f| ~ 1e3 with third derivatives to match, which pushes the
  // best achievable central-difference accuracy to ~1e-5 regardless of step.
  // The loss is linear in lambda1, so the gradient is checked at lambda1 = 1
  // (equivalent up to an exact scalar factor; the breakdown test pins the
  // lambda weighting itself).
  LossConfig lcfg;
  lcfg.lambda1 = 1.0;
  ModelConfig cfg = ModelConfig::tiny();
  bool found = false;
  for (uint64_t seed = 40; seed <= 80 && !found; ++seed) {
    Model<double> m(cfg, seed);
    Rng rng(seed + 1);
    for (int id : {m.head_w, m.dec[0].mean_w, m.dec[1].mean_w}) {
      auto& v = m.store.entries[static_cast<size_t>(id)].value;
      v = random_normal<double>(rng, v.shape, 0.0, 0.1);
    }
    auto img = random_uniform<double>(rng, {12, 12, 3}, 0.1, 0.9);
    auto gt = random_uniform<double>(rng, {12, 12, 3}, 0.1, 0.9);

    double margin = 1e30;
    {
      Tape<double> t;
      auto p = bind_params(t, m.store);
      auto fr = m.forward(p, ad::constant(t, img));
      for (const auto& st : fr.stages) {
        auto lp = laplacian(st.image).val();
        auto lg = laplacian(ad::constant(t, area_downsample_raw(gt, st.factor))).val();
        for (size_t i = 0; i < lp.data.size(); ++i)
          margin = std::min(margin, std::abs(lp.data[i] - lg.data[i]));
      }
    }
    if (margin < 1e-4) continue;
    found = true;

    std::vector<Tensor64> inputs = {img};
    for (const auto& e : m.store.entries) inputs.push_back(e.value);
    const Model<double>& model = m;
    gradcheck::expect_ok(gradcheck::run(
        [&model, &gt, &lcfg](Tape<double>& t, const std::vector<Var<double>>& v) {
          std::vector<Var<double>> p(v.begin() + 1, v.end());
          auto fr = model.forward(p, v[0]);
          return total_loss(fr, gt, lcfg).value;
        },
        inputs, 1e-7, 1e-5, 1e-6));
  }
  REQUIRE(found);  // some seed in the scanned range must clear the margin
}
