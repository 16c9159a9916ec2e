#pragma once

// Frequency convolution block. Two residual sub-blocks applied in sequence:
//
//  1. Frequency enhancement. The input's 2-D spectrum is split into amplitude
//     and phase; a small refiner (1x1 conv -> GELU -> 1x1 conv, second conv
//     zero-initialized) produces an amplitude residual while the phase is left
//     untouched. The refined spectrum is written as a frequency residual
//         out = F + ifft( (|amp + delta| - amp) * unit_phase )
//     so a zero refiner yields out == F bit-exactly, and the non-negative
//     refined amplitude |amp + delta| means the phase of every bin is
//     preserved rather than flipped when the residual would drive it negative.
//
//  2. Spatial gating. Pointwise expansion C -> 2C, depthwise 3x3, Single Gate
//     (elementwise product of the two channel halves), Simplified Channel
//     Attention (global average pool -> pointwise conv -> per-channel scale),
//     and a zero-initialized output projection, added residually.

#include <string>
#include <vector>

#include "ucmnet/autodiff.hpp"
#include "ucmnet/params.hpp"

namespace ucmnet {

// Pointwise (1x1) conv with bias on [H,W,C].
template <typename T>
ad::Var<T> conv1x1_bias(ad::Var<T> x, ad::Var<T> w, ad::Var<T> b) {
  return ad::add(ad::conv2d_valid(x, w, 1), b);
}

// Amplitude refinement with exact phase preservation. eps regularizes the
// unit-phase division on near-empty bins.
template <typename T>
ad::Var<T> frequency_enhance(ad::Var<T> x, ad::Var<T> w1, ad::Var<T> b1, ad::Var<T> w2,
                             ad::Var<T> b2) {
  UCM_CHECK_SHAPE(x.shape().size() == 3, "frequency_enhance expects [H,W,C]");
  const T eps = T(1e-8);
  auto sp = ad::fft2(x);
  auto re = ad::unstack2(sp, 0);
  auto im = ad::unstack2(sp, 1);
  auto amp = ad::sqrt_(ad::add(ad::mul(re, re), ad::mul(im, im)));
  auto delta = conv1x1_bias(ad::gelu(conv1x1_bias(amp, w1, b1)), w2, b2);
  auto amp_new = ad::abs_(ad::add(amp, delta));
  auto scale = ad::div(ad::sub(amp_new, amp), ad::clamp_min(amp, eps));
  auto res = ad::ifft2_real(ad::stack2(ad::mul(re, scale), ad::mul(im, scale)));
  return ad::add(x, res);
}

// Split channels in half and multiply the halves.
template <typename T>
ad::Var<T> single_gate(ad::Var<T> x) {
  const Shape& s = x.shape();
  const int c = s.back();
  UCM_CHECK_SHAPE(c % 2 == 0, "single_gate needs an even channel count, got " << c);
  return ad::mul(ad::slice_last(x, 0, c / 2), ad::slice_last(x, c / 2, c / 2));
}

// Global average pool -> pointwise conv -> per-channel scale of the input.
template <typename T>
ad::Var<T> simplified_channel_attention(ad::Var<T> x, ad::Var<T> w, ad::Var<T> b) {
  UCM_CHECK_SHAPE(x.shape().size() == 3, "channel attention expects [H,W,C]");
  auto pooled = ad::reduce_mean(x, {0, 1}, true);  // [1,1,C]
  auto gate = conv1x1_bias(pooled, w, b);          // [1,1,C]
  return ad::mul(x, gate);                         // trailing broadcast
}

template <typename T>
struct FcmBlock {
  int channels = 0;
  // amplitude refiner
  int w_amp1 = -1, b_amp1 = -1, w_amp2 = -1, b_amp2 = -1;
  // spatial branch
  int w_expand = -1, b_expand = -1;
  int w_dw = -1, b_dw = -1;
  int w_sca = -1, b_sca = -1;
  int w_proj = -1, b_proj = -1;

  FcmBlock() = default;
  FcmBlock(ParamStore<T>& store, Rng& rng, const std::string& prefix, int c) : channels(c) {
    w_amp1 = store.add(prefix + ".amp1.w", init_conv<T>(rng, 1, 1, c, c));
    b_amp1 = store.add(prefix + ".amp1.b", TensorT<T>::zeros({c}));
    // Residual-branch terminals start at zero so a fresh block is an identity.
    w_amp2 = store.add(prefix + ".amp2.w", TensorT<T>::zeros({1, 1, c, c}));
    b_amp2 = store.add(prefix + ".amp2.b", TensorT<T>::zeros({c}));
    w_expand = store.add(prefix + ".expand.w", init_conv<T>(rng, 1, 1, c, 2 * c));
    b_expand = store.add(prefix + ".expand.b", TensorT<T>::zeros({2 * c}));
    w_dw = store.add(prefix + ".dw.w", init_depthwise<T>(rng, 3, 3, 2 * c));
    b_dw = store.add(prefix + ".dw.b", TensorT<T>::zeros({2 * c}));
    w_sca = store.add(prefix + ".sca.w", init_projection_conv(rng, c));
    b_sca = store.add(prefix + ".sca.b", TensorT<T>::zeros({c}));
    w_proj = store.add(prefix + ".proj.w", TensorT<T>::zeros({1, 1, c, c}));
    b_proj = store.add(prefix + ".proj.b", TensorT<T>::zeros({c}));
  }

  static TensorT<T> init_projection_conv(Rng& rng, int c) {
    const double std = std::sqrt(1.0 / static_cast<double>(c));
    return random_normal<T>(rng, {1, 1, c, c}, T(0), static_cast<T>(std));
  }

  ad::Var<T> forward(const std::vector<ad::Var<T>>& p, ad::Var<T> x) const {
    UCM_CHECK_SHAPE(x.shape().back() == channels,
                    "fcm expects " << channels << " channels, got " << shape_str(x.val().shape));
    auto f1 = frequency_enhance(x, p[w_amp1], p[b_amp1], p[w_amp2], p[b_amp2]);
    auto h = conv1x1_bias(f1, p[w_expand], p[b_expand]);
    h = ad::add(ad::depthwise_conv2d(h, p[w_dw], 1, 1, PadMode::kZero), p[b_dw]);
    h = single_gate(h);
    h = simplified_channel_attention(h, p[w_sca], p[b_sca]);
    h = conv1x1_bias(h, p[w_proj], p[b_proj]);
    return ad::add(f1, h);
  }
};

}  // namespace ucmnet
