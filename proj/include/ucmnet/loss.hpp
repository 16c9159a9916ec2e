#pragma once

// Training objectives.
//
//   udl(a, b, s)   = mean over pixels of  exp(-s) * sum_c |a - b|  +  2 s
//   hf_udl         = udl applied to 4-neighbor Laplacians of both images
//   psnr_loss      = 10 * log10(max(MSE, 1e-12))   (negated PSNR, peak 1.0)
//   l1_loss        = plain elementwise mean absolute error
//   total          = lambda1 * mean over decode stages of hf_udl(stage)
//                  + lambda2 * fidelity(final restored, ground truth)
//
// Stage ground truths come from area-average downsampling of the full-size
// ground truth; the downsample happens off the tape since no gradient flows
// into targets. The per-pixel uncertainty map s enters both terms of udl, so
// for a fixed per-pixel error e the optimum is s* = ln(e/2).

#include <cmath>
#include <vector>

#include "ucmnet/network.hpp"

namespace ucmnet {

struct LossConfig {
  double lambda1 = 100.0;
  double lambda2 = 0.5;
  enum class Fidelity { kPsnr, kL1 } fidelity = Fidelity::kPsnr;

  void validate() const {
    UCM_CHECK_SHAPE(lambda1 > 0 && lambda2 > 0, "loss weights must be positive");
  }
};

// Per-channel 4-neighbor Laplacian [[0,1,0],[1,-4,1],[0,1,0]], reflect padded.
template <typename T>
ad::Var<T> laplacian(ad::Var<T> x) {
  const Shape& s = x.shape();
  UCM_CHECK_SHAPE(s.size() == 3, "laplacian expects [H,W,C]");
  UCM_CHECK_SHAPE(s[0] >= 3 && s[1] >= 3,
                  "laplacian needs extents >= 3, got " << shape_str(x.val().shape));
  const int c = s[2];
  TensorT<T> k = TensorT<T>::zeros({3, 3, c});
  for (int ch = 0; ch < c; ++ch) {
    k.at({0, 1, ch}) = T(1);
    k.at({1, 0, ch}) = T(1);
    k.at({1, 1, ch}) = T(-4);
    k.at({1, 2, ch}) = T(1);
    k.at({2, 1, ch}) = T(1);
  }
  return ad::depthwise_conv2d(x, ad::constant(*x.tape, std::move(k)), 1, 1, PadMode::kReflect);
}

// s may be [h,w,1], [1], or anything broadcastable against [h,w,1].
template <typename T>
ad::Var<T> udl(ad::Var<T> pred, ad::Var<T> gt, ad::Var<T> s) {
  UCM_CHECK_SHAPE(pred.shape() == gt.shape() && pred.shape().size() == 3,
                  "udl expects matching [H,W,C] images, got "
                      << shape_str(pred.val().shape) << " vs " << shape_str(gt.val().shape));
  auto e = ad::reduce_sum(ad::abs_(ad::sub(pred, gt)), {2}, true);  // [h,w,1]
  auto per_pixel = ad::add(ad::mul(ad::exp_(ad::neg(s)), e), ad::mul_scalar(s, T(2)));
  return ad::reduce_mean(per_pixel, {}, false);
}

template <typename T>
ad::Var<T> hf_udl(ad::Var<T> pred, ad::Var<T> gt, ad::Var<T> s) {
  return udl(laplacian(pred), laplacian(gt), s);
}

template <typename T>
ad::Var<T> psnr_loss(ad::Var<T> pred, ad::Var<T> gt) {
  UCM_CHECK_SHAPE(pred.shape() == gt.shape(), "psnr_loss expects matching shapes");
  auto d = ad::sub(pred, gt);
  auto mse = ad::reduce_mean(ad::mul(d, d), {}, false);
  auto clamped = ad::clamp_min(mse, T(1e-12));
  return ad::mul_scalar(ad::log_(clamped), static_cast<T>(10.0 / std::log(10.0)));
}

template <typename T>
ad::Var<T> l1_loss(ad::Var<T> pred, ad::Var<T> gt) {
  UCM_CHECK_SHAPE(pred.shape() == gt.shape(), "l1_loss expects matching shapes");
  return ad::reduce_mean(ad::abs_(ad::sub(pred, gt)), {}, false);
}

template <typename T>
struct TotalLoss {
  ad::Var<T> value;
  T hf = T(0);        // mean over stages of hf_udl
  T fidelity = T(0);  // psnr_loss or l1_loss on the final image
  T total = T(0);
  std::vector<T> per_stage;
};

template <typename T>
TotalLoss<T> total_loss(const ForwardResult<T>& fr, const TensorT<T>& gt, const LossConfig& cfg) {
  cfg.validate();
  UCM_CHECK_SHAPE(fr.restored.shape() == gt.shape,
                  "ground truth " << shape_str(gt.shape) << " vs restored "
                                  << shape_str(fr.restored.val().shape));
  UCM_CHECK_SHAPE(!fr.stages.empty(), "total_loss needs at least one stage");
  auto& tape = *fr.restored.tape;

  TotalLoss<T> out;
  ad::Var<T> hf_sum;
  for (const auto& st : fr.stages) {
    auto gt_k = ad::constant(tape, area_downsample_raw(gt, st.factor));
    UCM_CHECK_SHAPE(gt_k.shape() == st.image.shape(),
                    "stage ground truth " << shape_str(gt_k.val().shape) << " vs stage image "
                                          << shape_str(st.image.val().shape));
    auto term = hf_udl(st.image, gt_k, st.s);
    out.per_stage.push_back(term.val().data[0]);
    hf_sum = hf_sum.tape ? ad::add(hf_sum, term) : term;
  }
  auto hf_mean = ad::mul_scalar(hf_sum, T(1) / static_cast<T>(fr.stages.size()));

  auto gt_full = ad::constant(tape, gt);
  auto fid = cfg.fidelity == LossConfig::Fidelity::kPsnr ? psnr_loss(fr.restored, gt_full)
                                                         : l1_loss(fr.restored, gt_full);

  out.value = ad::add(ad::mul_scalar(hf_mean, static_cast<T>(cfg.lambda1)),
                      ad::mul_scalar(fid, static_cast<T>(cfg.lambda2)));
  out.hf = hf_mean.val().data[0];
  out.fidelity = fid.val().data[0];
  out.total = out.value.val().data[0];
  return out;
}

}  // namespace ucmnet
