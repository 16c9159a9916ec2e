#pragma once

// U-shaped restoration network.
//
//   embed:  3x3 conv, 3 -> C0
//   encode stage k:  FCM blocks at C_k, then 2x2 stride-2 conv C_k -> C_{k+1}
//   decode stage k:  FCM blocks -> UPT -> per-stage heads -> 2x2 stride-2
//                    transposed conv C_{k+1} -> C_k, then the encoder skip is
//                    added post-upsample
//   head:   3x3 conv C0 -> 3, zero-initialized, added to the input image
//
// Every decode stage emits a restored image at its own resolution (3x3 conv
// from the UPT output) plus an uncertainty scalar map (channel mean of F_U);
// both feed the multiscale loss. Inputs whose extents are not divisible by
// 2^stages are reflect-padded on the bottom/right and cropped on output.

#include <string>
#include <vector>

#include "ucmnet/fcm.hpp"
#include "ucmnet/upt.hpp"

namespace ucmnet {

struct ModelConfig {
  int stages = 3;
  int base_channels = 16;
  int blocks_per_stage = 1;  // FCM blocks per stage, both paths
  int channel_growth = 2;
  int bank_tokens = 256;
  double bank_momentum = 0.999;

  int width_at(int level) const {
    int c = base_channels;
    for (int i = 0; i < level; ++i) c *= channel_growth;
    return c;
  }

  void validate() const {
    UCM_CHECK_SHAPE(stages >= 1, "config needs stages >= 1, got " << stages);
    UCM_CHECK_SHAPE(base_channels >= 1 && blocks_per_stage >= 1 && bank_tokens >= 1,
                    "config widths must be positive");
    UCM_CHECK_SHAPE(channel_growth >= 1, "channel growth must be >= 1");
    UCM_CHECK_SHAPE(bank_momentum >= 0.0 && bank_momentum <= 1.0,
                    "bank momentum must lie in [0,1], got " << bank_momentum);
  }

  static ModelConfig tiny() {
    ModelConfig c;
    c.stages = 2;
    c.base_channels = 2;
    c.bank_tokens = 4;
    return c;
  }
  static ModelConfig desk() { return ModelConfig{}; }
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.base_channels = 32;
    c.blocks_per_stage = 2;
    return c;
  }
};

template <typename T>
struct StageOutput {
  ad::Var<T> image;  // [h,w,3] stage restoration
  ad::Var<T> s;      // [h,w,1] uncertainty scalar map (channel mean of F_U)
  ad::Var<T> f_u;    // [h,w,C] full uncertainty features
  int factor = 1;    // stage resolution = input resolution / factor
};

template <typename T>
struct ForwardResult {
  ad::Var<T> restored;                 // [H,W,3]
  std::vector<StageOutput<T>> stages;  // deepest stage first
};

template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> store;

  struct EncStage {
    std::vector<FcmBlock<T>> fcms;
    int down_w = -1, down_b = -1;
  };
  struct DecStage {
    std::vector<FcmBlock<T>> fcms;
    UptBlock<T> upt;
    int mean_w = -1, mean_b = -1;
    int up_w = -1, up_b = -1;
  };

  int embed_w = -1, embed_b = -1;
  std::vector<EncStage> enc;  // level 0 (full res) .. stages-1
  std::vector<DecStage> dec;  // deepest level first
  int head_w = -1, head_b = -1;

  Model() = default;
  Model(const ModelConfig& config, uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(seed);
    const int c0 = cfg.base_channels;
    embed_w = store.add("embed.w", init_conv<T>(rng, 3, 3, 3, c0));
    embed_b = store.add("embed.b", TensorT<T>::zeros({c0}));

    for (int k = 0; k < cfg.stages; ++k) {
      EncStage st;
      const int ck = cfg.width_at(k), cn = cfg.width_at(k + 1);
      const std::string prefix = "enc" + std::to_string(k);
      for (int b = 0; b < cfg.blocks_per_stage; ++b)
        st.fcms.emplace_back(store, rng, prefix + ".fcm" + std::to_string(b), ck);
      st.down_w = store.add(prefix + ".down.w", init_conv<T>(rng, 2, 2, ck, cn));
      st.down_b = store.add(prefix + ".down.b", TensorT<T>::zeros({cn}));
      enc.push_back(std::move(st));
    }

    for (int k = cfg.stages - 1; k >= 0; --k) {
      DecStage st;
      const int ck = cfg.width_at(k), cn = cfg.width_at(k + 1);
      const std::string prefix = "dec" + std::to_string(k);
      for (int b = 0; b < cfg.blocks_per_stage; ++b)
        st.fcms.emplace_back(store, rng, prefix + ".fcm" + std::to_string(b), cn);
      st.upt = UptBlock<T>(store, rng, prefix + ".upt", cn, cfg.bank_tokens,
                           static_cast<T>(cfg.bank_momentum));
      // stage image head starts at zero, like every residual terminal
      st.mean_w = store.add(prefix + ".mean.w", TensorT<T>::zeros({3, 3, cn, 3}));
      st.mean_b = store.add(prefix + ".mean.b", TensorT<T>::zeros({3}));
      st.up_w = store.add(prefix + ".up.w", init_conv_transpose<T>(rng, 2, 2, ck, cn));
      st.up_b = store.add(prefix + ".up.b", TensorT<T>::zeros({ck}));
      dec.push_back(std::move(st));
    }

    head_w = store.add("head.w", TensorT<T>::zeros({3, 3, c0, 3}));
    head_b = store.add("head.b", TensorT<T>::zeros({3}));
  }

  int count_parameters() const { return store.total_scalars(); }
  int count_memory_scalars() const {
    int n = 0;
    for (const auto& d : dec) n += shape_numel(d.upt.bank.memory.shape);
    return n;
  }

  std::vector<MemoryContextBank<T>*> banks() {
    std::vector<MemoryContextBank<T>*> out;
    for (auto& d : dec) out.push_back(&d.upt.bank);
    return out;
  }

  ForwardResult<T> forward(const std::vector<ad::Var<T>>& p, ad::Var<T> input) const {
    const Shape& s = input.shape();
    UCM_CHECK_SHAPE(s.size() == 3 && s[2] == 3,
                    "model expects [H,W,3], got " << shape_str(input.val().shape));
    const int h = s[0], w = s[1];
    const int mult = 1 << cfg.stages;
    const int ph = (mult - h % mult) % mult, pw = (mult - w % mult) % mult;

    auto x = input;
    if (ph || pw) x = ad::pad2d_rect(input, 0, ph, 0, pw, PadMode::kReflect);
    x = ad::add(ad::conv2d(x, p[embed_w], 1, 1, PadMode::kReflect), p[embed_b]);

    std::vector<ad::Var<T>> skips;
    for (const auto& st : enc) {
      for (const auto& f : st.fcms) x = f.forward(p, x);
      skips.push_back(x);
      x = ad::add(ad::conv2d_valid(x, p[st.down_w], 2), p[st.down_b]);
    }

    ForwardResult<T> result;
    int level = cfg.stages - 1;
    for (const auto& st : dec) {
      for (const auto& f : st.fcms) x = f.forward(p, x);
      auto u = st.upt.forward(p, x);
      x = u.out;
      StageOutput<T> so;
      so.image = ad::add(ad::conv2d(x, p[st.mean_w], 1, 1, PadMode::kReflect), p[st.mean_b]);
      so.s = ad::reduce_mean(u.f_u, {2}, true);
      so.f_u = u.f_u;
      so.factor = 1 << (level + 1);
      result.stages.push_back(so);
      x = ad::add(ad::conv_transpose2d(x, p[st.up_w], 2), p[st.up_b]);
      x = ad::add(x, skips[static_cast<size_t>(level)]);
      --level;
    }

    auto res = ad::add(ad::conv2d(x, p[head_w], 1, 1, PadMode::kReflect), p[head_b]);
    if (ph || pw) res = ad::crop2d(res, 0, 0, h, w);
    result.restored = ad::add(input, res);
    return result;
  }
};

}  // namespace ucmnet
