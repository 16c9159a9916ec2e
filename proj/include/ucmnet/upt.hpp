#pragma once

// Uncertainty-prior transformer block. Pipeline:
//
//   F_U  = estimate_uncertainty(F_in)             conv3x3 -> GELU -> conv3x3 -> softplus
//   F_C  = retrieve_context(F_U, bank)            cosine addressing of a memory bank,
//                                                 per-pixel softmax over tokens, then a
//                                                 weighted sum of paired context tokens
//   F^   = directional_cross_attention(F_in, F_C) vertical + horizontal attention with
//                                                 F_C as the key, averaged, residual
//   out  = vanilla_transformer(F^)                full token self-attention, residual
//
// The memory half of the bank is plain state: it enters the tape as a constant
// (similarity scores carry no gradient into it) and is refreshed after each
// optimizer step by a momentum rule addressed via argmax similarity. The
// context half is an ordinary trainable parameter.

#include <string>
#include <vector>

#include "ucmnet/autodiff.hpp"
#include "ucmnet/params.hpp"

namespace ucmnet {

template <typename T>
struct MemoryContextBank {
  TensorT<T> memory;    // [N,C] state, momentum-updated, gradient-isolated
  T momentum = T(0.999);
  int context_id = -1;  // [N,C] trainable tokens, lives in the ParamStore
  std::string name;

  MemoryContextBank() = default;
  MemoryContextBank(ParamStore<T>& store, Rng& rng, const std::string& prefix, int n, int c,
                    T eta = T(0.999))
      : momentum(eta), name(prefix) {
    UCM_CHECK_SHAPE(n > 0 && c > 0, "bank needs positive token count and width");
    memory = normalize_rows_raw(random_normal<T>(rng, {n, c}, T(0), T(1)), T(1e-8));
    context_id = store.add(prefix + ".context", random_normal<T>(rng, {n, c}, T(0), T(0.02)));
  }

  int tokens() const { return memory.shape[0]; }
  int channels() const { return memory.shape[1]; }
};

// Cosine similarity scores between memory rows and token rows: [N,hw].
// Both sides are L2-normalized with an epsilon floor on the norm so zero
// vectors stay finite. Raw flavor for the out-of-tape update rule.
template <typename T>
TensorT<T> cosine_scores_raw(const TensorT<T>& memory, const TensorT<T>& tokens) {
  UCM_CHECK_SHAPE(memory.shape.size() == 2 && tokens.shape.size() == 2 &&
                      memory.shape[1] == tokens.shape[1],
                  "cosine scores need [N,C] memory and [hw,C] tokens, got "
                      << shape_str(memory.shape) << " and " << shape_str(tokens.shape));
  const T eps = T(1e-8);
  auto mhat = normalize_rows_raw(memory, eps);
  auto fhat = normalize_rows_raw(tokens, eps);
  return matmul_raw(mhat, transpose2d_raw(fhat));
}

// Tape flavor: memory enters as a constant, tokens stay differentiable.
// sqrt(max(sum_sq, eps^2)) == max(norm, eps) exactly, so this matches the raw
// scores bit for bit while keeping the gradient clean at tiny norms.
template <typename T>
ad::Var<T> cosine_scores(const TensorT<T>& memory, ad::Var<T> tokens) {
  const T eps = T(1e-8);
  auto mhat = ad::constant(*tokens.tape, normalize_rows_raw(memory, eps));
  auto ss = ad::reduce_sum(ad::mul(tokens, tokens), {1}, true);  // [hw,1]
  auto norm = ad::sqrt_(ad::clamp_min(ss, eps * eps));
  auto fhat = ad::div(tokens, norm);
  return ad::matmul(mhat, ad::transpose2d(fhat));  // [N,hw]
}

// Per-pixel softmax over memory tokens, then a weighted sum of context tokens.
template <typename T>
ad::Var<T> retrieve_context(ad::Var<T> f_u, const MemoryContextBank<T>& bank,
                            ad::Var<T> context) {
  const Shape& s = f_u.shape();
  UCM_CHECK_SHAPE(s.size() == 3, "retrieve_context expects [H,W,C]");
  const int h = s[0], w = s[1], c = s[2];
  UCM_CHECK_SHAPE(c == bank.channels(), "bank width " << bank.channels()
                                                      << " vs feature channels " << c);
  auto tokens = ad::reshape(f_u, {h * w, c});
  auto scores = cosine_scores(bank.memory, tokens);       // [N,hw]
  auto weights = ad::softmax(scores, 0);                  // each column sums to 1
  auto f_c = ad::matmul(ad::transpose2d(weights), context);  // [hw,C]
  return ad::reshape(f_c, {h, w, c});
}

// conv3x3 -> GELU -> conv3x3 -> softplus; reflect padding keeps borders sane.
template <typename T>
ad::Var<T> estimate_uncertainty(ad::Var<T> x, ad::Var<T> w1, ad::Var<T> b1, ad::Var<T> w2,
                                ad::Var<T> b2) {
  auto h1 = ad::gelu(ad::add(ad::conv2d(x, w1, 1, 1, PadMode::kReflect), b1));
  return ad::softplus(ad::add(ad::conv2d(h1, w2, 1, 1, PadMode::kReflect), b2));
}

namespace uptdetail {

// Per-pixel channel projection: [H,W,C] x [C,C] -> [hw,C] as x . W^T.
template <typename T>
ad::Var<T> project(ad::Var<T> x, ad::Var<T> w, int hw, int c) {
  return ad::matmul(ad::reshape(x, {hw, c}), ad::transpose2d(w));
}

// softmax(logits * scale, axis 1) . values
template <typename T>
ad::Var<T> attend(ad::Var<T> q, ad::Var<T> k, ad::Var<T> v, ad::Var<T> scale) {
  auto logits = ad::mul(ad::matmul(q, ad::transpose2d(k)), scale);
  return ad::matmul(ad::softmax(logits, 1), v);
}

}  // namespace uptdetail

// Vertical and horizontal strip attention, F_C as the key side, averaged and
// added back to the input. Rows attend over rows ([H,(WC)]) and columns over
// columns ([W,(HC)]); both share the 1/sqrt(alpha) scale.
template <typename T>
ad::Var<T> directional_cross_attention(ad::Var<T> f_in, ad::Var<T> f_c, ad::Var<T> w_q,
                                       ad::Var<T> w_k, ad::Var<T> w_v, ad::Var<T> log_alpha) {
  const Shape& s = f_in.shape();
  UCM_CHECK_SHAPE(s.size() == 3, "cross attention expects [H,W,C]");
  UCM_CHECK_SHAPE(s == f_c.shape(), "context shape " << shape_str(f_c.val().shape)
                                                     << " must match input " << shape_str(s));
  const int h = s[0], w = s[1], c = s[2];
  const int hw = h * w;
  auto q = uptdetail::project(f_in, w_q, hw, c);  // [hw,C]
  auto k = uptdetail::project(f_c, w_k, hw, c);
  auto v = uptdetail::project(f_in, w_v, hw, c);
  auto scale = ad::exp_(ad::mul_scalar(log_alpha, T(-0.5)));  // 1/sqrt(alpha), [1]

  // vertical: contiguous reinterpretation [hw,C] == [H,(WC)]
  auto f_v = uptdetail::attend(ad::reshape(q, {h, w * c}), ad::reshape(k, {h, w * c}),
                               ad::reshape(v, {h, w * c}), scale);
  f_v = ad::reshape(f_v, {h, w, c});

  // horizontal: permute to [W,H,C] first, then flatten rows
  auto flip = [&](ad::Var<T> t) {
    return ad::reshape(ad::permute(ad::reshape(t, {h, w, c}), {1, 0, 2}), {w, h * c});
  };
  auto f_h = uptdetail::attend(flip(q), flip(k), flip(v), scale);
  f_h = ad::permute(ad::reshape(f_h, {w, h, c}), {1, 0, 2});

  auto fused = ad::mul_scalar(ad::add(f_v, f_h), T(0.5));
  return ad::add(fused, f_in);
}

// Full token self-attention over the flattened grid with a 1/sqrt(beta) scale.
template <typename T>
ad::Var<T> vanilla_transformer(ad::Var<T> f_hat, ad::Var<T> w_q, ad::Var<T> w_k, ad::Var<T> w_v,
                               ad::Var<T> log_beta) {
  const Shape& s = f_hat.shape();
  UCM_CHECK_SHAPE(s.size() == 3, "vanilla transformer expects [H,W,C]");
  const int h = s[0], w = s[1], c = s[2];
  const int hw = h * w;
  auto q = uptdetail::project(f_hat, w_q, hw, c);
  auto k = uptdetail::project(f_hat, w_k, hw, c);
  auto v = uptdetail::project(f_hat, w_v, hw, c);
  auto scale = ad::exp_(ad::mul_scalar(log_beta, T(-0.5)));
  auto out = ad::add(uptdetail::attend(q, k, v, scale), ad::reshape(f_hat, {hw, c}));
  return ad::reshape(out, {h, w, c});
}

template <typename T>
struct UptForward {
  ad::Var<T> out;
  ad::Var<T> f_u;
};

template <typename T>
struct UptBlock {
  int channels = 0;
  int w_var1 = -1, b_var1 = -1, w_var2 = -1, b_var2 = -1;
  int w_q1 = -1, w_k1 = -1, w_v1 = -1;
  int w_q2 = -1, w_k2 = -1, w_v2 = -1;
  int log_alpha = -1, log_beta = -1;
  MemoryContextBank<T> bank;

  UptBlock() = default;
  UptBlock(ParamStore<T>& store, Rng& rng, const std::string& prefix, int c, int bank_tokens,
           T eta = T(0.999))
      : channels(c) {
    w_var1 = store.add(prefix + ".var1.w", init_conv<T>(rng, 3, 3, c, c));
    b_var1 = store.add(prefix + ".var1.b", TensorT<T>::zeros({c}));
    w_var2 = store.add(prefix + ".var2.w", init_conv<T>(rng, 3, 3, c, c));
    b_var2 = store.add(prefix + ".var2.b", TensorT<T>::zeros({c}));
    w_q1 = store.add(prefix + ".q1.w", init_projection<T>(rng, c));
    w_k1 = store.add(prefix + ".k1.w", init_projection<T>(rng, c));
    w_v1 = store.add(prefix + ".v1.w", init_projection<T>(rng, c));
    log_alpha = store.add(prefix + ".log_alpha",
                          TensorT<T>::full({1}, static_cast<T>(std::log(1024.0))));
    w_q2 = store.add(prefix + ".q2.w", init_projection<T>(rng, c));
    w_k2 = store.add(prefix + ".k2.w", init_projection<T>(rng, c));
    w_v2 = store.add(prefix + ".v2.w", init_projection<T>(rng, c));
    log_beta = store.add(prefix + ".log_beta",
                         TensorT<T>::full({1}, static_cast<T>(std::log(static_cast<double>(c)))));
    bank = MemoryContextBank<T>(store, rng, prefix + ".bank", bank_tokens, c, eta);
  }

  UptForward<T> forward(const std::vector<ad::Var<T>>& p, ad::Var<T> x) const {
    UCM_CHECK_SHAPE(x.shape().size() == 3 && x.shape().back() == channels,
                    "upt expects [H,W," << channels << "], got " << shape_str(x.val().shape));
    auto f_u = estimate_uncertainty(x, p[w_var1], p[b_var1], p[w_var2], p[b_var2]);
    auto f_c = retrieve_context(f_u, bank, p[bank.context_id]);
    auto f_hat = directional_cross_attention(x, f_c, p[w_q1], p[w_k1], p[w_v1], p[log_alpha]);
    auto f_t = vanilla_transformer(f_hat, p[w_q2], p[w_k2], p[w_v2], p[log_beta]);
    return {f_t, f_u};
  }
};

// Momentum refresh of the memory tokens, addressed by argmax cosine score
// computed once against the pre-update bank. Updates run in raster order with
// the unnormalized uncertainty vectors, so pixels sharing an address compound.
// Returns the per-pixel addresses.
template <typename T>
std::vector<int> memory_update(MemoryContextBank<T>& bank, const TensorT<T>& f_u) {
  UCM_CHECK_SHAPE(f_u.shape.size() == 3 && f_u.shape[2] == bank.channels(),
                  "memory_update expects [H,W," << bank.channels() << "], got "
                                                << shape_str(f_u.shape));
  const int hw = f_u.shape[0] * f_u.shape[1];
  const int c = bank.channels();
  auto tokens = reshape_raw(f_u, {hw, c});
  auto scores = cosine_scores_raw(bank.memory, tokens);  // [N,hw]
  auto addresses = argmax_axis0(scores);
  const T eta = bank.momentum;
  for (int j = 0; j < hw; ++j) {
    const int r = addresses[static_cast<size_t>(j)];
    for (int ch = 0; ch < c; ++ch) {
      T& m = bank.memory.data[static_cast<size_t>(r * c + ch)];
      m = eta * m + (T(1) - eta) * tokens.data[static_cast<size_t>(j * c + ch)];
    }
  }
  UCM_CHECK_NUMERIC(all_finite(bank.memory), "memory bank went non-finite during update");
  return addresses;
}

}  // namespace ucmnet
