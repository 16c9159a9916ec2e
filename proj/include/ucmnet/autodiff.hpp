#pragma once

// Reverse-mode automatic differentiation over TensorT. A Tape is an ordered
// record of primitive ops; Var is a lightweight handle (tape pointer + node
// id). Recording appends nodes whose ids strictly increase, so parents always
// precede children and the reverse sweep in id order is a valid, fully
// deterministic topological order.
//
// A tape is confined to one logical thread while recording. Node values are
// immutable once written; reading them from other threads after recording is
// safe.

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "ucmnet/fft.hpp"
#include "ucmnet/tensor.hpp"

namespace ucmnet {
namespace ad {

template <typename T>
class Tape {
 public:
  using Tensor = TensorT<T>;
  struct Node;
  // Returns one gradient per parent, aligned with Node::parents. Slots whose
  // `need` flag is false may be returned empty.
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tape&, const Node&, const Tensor& gout,
                                        const std::vector<char>& need)>;

  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackwardFn backward;  // empty for leaves
    bool requires_grad = false;
  };

  int add_leaf(Tensor v, bool requires_grad) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, requires_grad});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int add_node(Tensor v, std::vector<int> parents, BackwardFn fn) {
    bool rg = false;
    for (int p : parents) rg = rg || nodes_[static_cast<size_t>(p)].requires_grad;
    nodes_.push_back(Node{std::move(v), std::move(parents), std::move(fn), rg});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const TensorT<T>& val() const { return tape->value(id); }
  const Shape& shape() const { return val().shape; }
  bool requires_grad() const { return tape->node(id).requires_grad; }
};

template <typename T>
Var<T> constant(Tape<T>& t, TensorT<T> v) {
  return Var<T>{&t, t.add_leaf(std::move(v), false)};
}

template <typename T>
Var<T> param(Tape<T>& t, TensorT<T> v) {
  return Var<T>{&t, t.add_leaf(std::move(v), true)};
}

namespace detail {

template <typename T>
void check_same_tape(std::initializer_list<Var<T>> vars) {
  const Tape<T>* t = nullptr;
  for (const auto& v : vars) {
    UCM_CHECK(v.tape != nullptr && v.id >= 0, ShapeError, "unbound Var handle");
    if (!t) t = v.tape;
    UCM_CHECK(v.tape == t, ShapeError, "Vars belong to different tapes");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise (with trailing broadcast)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape<T>({a, b});
  auto& t = *a.tape;
  auto v = add_raw(a.val(), b.val());
  int id = t.add_node(std::move(v), {a.id, b.id},
                      [](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                         const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(2);
                        if (need[0]) out[0] = reduce_to_shape(g, tp.value(n.parents[0]).shape);
                        if (need[1]) out[1] = reduce_to_shape(g, tp.value(n.parents[1]).shape);
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_tape<T>({a, b});
  auto& t = *a.tape;
  int id = t.add_node(sub_raw(a.val(), b.val()), {a.id, b.id},
                      [](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                         const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(2);
                        if (need[0]) out[0] = reduce_to_shape(g, tp.value(n.parents[0]).shape);
                        if (need[1]) {
                          auto neg = ew_unary(g, [](T x) { return -x; });
                          out[1] = reduce_to_shape(neg, tp.value(n.parents[1]).shape);
                        }
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape<T>({a, b});
  auto& t = *a.tape;
  int id = t.add_node(mul_raw(a.val(), b.val()), {a.id, b.id},
                      [](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                         const std::vector<char>& need) {
                        const auto& av = tp.value(n.parents[0]);
                        const auto& bv = tp.value(n.parents[1]);
                        std::vector<TensorT<T>> out(2);
                        if (need[0]) out[0] = reduce_to_shape(mul_raw(g, bv), av.shape);
                        if (need[1]) out[1] = reduce_to_shape(mul_raw(g, av), bv.shape);
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::check_same_tape<T>({a, b});
  auto& t = *a.tape;
  int id = t.add_node(div_raw(a.val(), b.val()), {a.id, b.id},
                      [](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                         const std::vector<char>& need) {
                        const auto& av = tp.value(n.parents[0]);
                        const auto& bv = tp.value(n.parents[1]);
                        std::vector<TensorT<T>> out(2);
                        if (need[0]) out[0] = reduce_to_shape(div_raw(g, bv), av.shape);
                        if (need[1]) {
                          // -g * a / b^2
                          auto gb = ew_binary(mul_raw(g, av), mul_raw(bv, bv),
                                              [](T x, T y) { return -x / y; });
                          out[1] = reduce_to_shape(gb, bv.shape);
                        }
                        return out;
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

namespace detail {

// Generic unary op: forward maps x -> f(x); backward multiplies gout by
// df(x, y) where y is the stored output.
template <typename T, class F, class DF>
Var<T> unary_op(Var<T> a, F f, DF df) {
  auto& t = *a.tape;
  int id = t.add_node(ew_unary(a.val(), f), {a.id},
                      [df](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                           const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) {
                          const auto& x = tp.value(n.parents[0]);
                          TensorT<T> gx(x.shape);
                          for (size_t i = 0; i < x.data.size(); ++i)
                            gx.data[i] = g.data[i] * df(x.data[i], n.value.data[i]);
                          out[0] = std::move(gx);
                        }
                        return out;
                      });
  return {&t, id};
}

}  // namespace detail

template <typename T>
Var<T> neg(Var<T> a) {
  return detail::unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> exp_(Var<T> a) {
  return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_(Var<T> a) {
  if constexpr (sizeof(T) == 8) {
    for (T v : a.val().data)
      UCM_CHECK_NUMERIC(v > T(0), "log of non-positive value " << v);
  }
  return detail::unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sqrt_(Var<T> a) {
  return detail::unary_op(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(0.5) / std::max(y, T(1e-30)); });
}

template <typename T>
Var<T> abs_(Var<T> a) {
  return detail::unary_op(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  return detail::unary_op(
      a, [](T x) { return gelu_scalar(x); },
      [](T x, T) { return gelu_grad_scalar(x); });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  return detail::unary_op(
      a, [](T x) { return softplus_scalar(x); },
      [](T x, T) {
        // sigmoid(x), overflow-safe
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return detail::unary_op(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T s) {
  return detail::unary_op(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

// max(x, c) elementwise against a constant threshold.
template <typename T>
Var<T> clamp_min(Var<T> a, T c) {
  return detail::unary_op(
      a, [c](T x) { return x > c ? x : c; },
      [c](T x, T) { return x >= c ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
  auto& t = *a.tape;
  const Shape src = a.shape();
  int id = t.add_node(reshape_raw(a.val(), std::move(s)), {a.id},
                      [src](const Tape<T>&, const typename Tape<T>::Node&, const TensorT<T>& g,
                            const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) out[0] = reshape_raw(g, src);
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> permute(Var<T> a, std::vector<int> perm) {
  auto& t = *a.tape;
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  int id = t.add_node(permute_raw(a.val(), perm), {a.id},
                      [inv](const Tape<T>&, const typename Tape<T>::Node&, const TensorT<T>& g,
                            const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) out[0] = permute_raw(g, inv);
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> transpose2d(Var<T> a) {
  return permute(a, {1, 0});
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
TensorT<T> expand_reduced_grad(const TensorT<T>& g, const Shape& in_shape,
                               const std::vector<int>& axes, bool keepdims, T scale) {
  // Rebuild the keepdims shape, then broadcast-add into the input shape.
  Shape keep = in_shape;
  if (axes.empty()) {
    for (auto& d : keep) d = 1;
  } else {
    for (int a : axes) keep[static_cast<size_t>(a)] = 1;
  }
  TensorT<T> gk = keepdims ? g : reshape_raw(g, keep);
  TensorT<T> out(in_shape);
  auto scaled = ew_unary(gk, [scale](T x) { return x * scale; });
  return add_raw(out, scaled);  // broadcast expansion
}

}  // namespace detail

template <typename T>
Var<T> reduce_sum(Var<T> a, std::vector<int> axes = {}, bool keepdims = false) {
  auto& t = *a.tape;
  const Shape in_shape = a.shape();
  int id = t.add_node(reduce_sum_raw(a.val(), axes, keepdims), {a.id},
                      [in_shape, axes, keepdims](const Tape<T>&, const typename Tape<T>::Node&,
                                                 const TensorT<T>& g, const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0])
                          out[0] = detail::expand_reduced_grad(g, in_shape, axes, keepdims, T(1));
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> reduce_mean(Var<T> a, std::vector<int> axes = {}, bool keepdims = false) {
  auto& t = *a.tape;
  const Shape in_shape = a.shape();
  int64_t count = 1;
  if (axes.empty()) {
    count = shape_numel(in_shape);
  } else {
    for (int ax : axes) count *= in_shape[static_cast<size_t>(ax)];
  }
  const T inv = T(1) / static_cast<T>(count);
  auto summed = reduce_sum_raw(a.val(), axes, keepdims);
  int id = t.add_node(ew_unary(summed, [inv](T x) { return x * inv; }), {a.id},
                      [in_shape, axes, keepdims, inv](const Tape<T>&, const typename Tape<T>::Node&,
                                                      const TensorT<T>& g, const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0])
                          out[0] = detail::expand_reduced_grad(g, in_shape, axes, keepdims, inv);
                        return out;
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Matmul / softmax
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape<T>({a, b});
  auto& t = *a.tape;
  int id = t.add_node(matmul_raw(a.val(), b.val()), {a.id, b.id},
                      [](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                         const std::vector<char>& need) {
                        const auto& av = tp.value(n.parents[0]);
                        const auto& bv = tp.value(n.parents[1]);
                        std::vector<TensorT<T>> out(2);
                        if (need[0]) out[0] = matmul_raw(g, transpose2d_raw(bv));
                        if (need[1]) out[1] = matmul_raw(transpose2d_raw(av), g);
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> softmax(Var<T> a, int axis) {
  auto& t = *a.tape;
  int id = t.add_node(softmax_raw(a.val(), axis), {a.id},
                      [axis](const Tape<T>&, const typename Tape<T>::Node& n, const TensorT<T>& g,
                             const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) out[0] = softmax_backward_raw(n.value, g, axis);
                        return out;
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Padding / cropping / convolutions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> pad2d(Var<T> a, int pad, PadMode mode) {
  if (pad == 0) return a;
  auto& t = *a.tape;
  const Shape src = a.shape();
  int id = t.add_node(pad2d_raw(a.val(), pad, mode), {a.id},
                      [pad, mode, src](const Tape<T>&, const typename Tape<T>::Node&,
                                       const TensorT<T>& g, const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) out[0] = pad2d_adjoint_raw(g, pad, mode, src);
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> pad2d_rect(Var<T> a, int top, int bottom, int left, int right, PadMode mode) {
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return a;
  auto& t = *a.tape;
  const Shape src = a.shape();
  int id = t.add_node(pad2d_rect_raw(a.val(), top, bottom, left, right, mode), {a.id},
                      [top, bottom, left, right, mode, src](
                          const Tape<T>&, const typename Tape<T>::Node&, const TensorT<T>& g,
                          const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0])
                          out[0] = pad2d_rect_adjoint_raw(g, top, bottom, left, right, mode, src);
                        return out;
                      });
  return {&t, id};
}

// Spatial crop of [H,W,C] starting at (top,left); adjoint places the gradient
// back into a zero tensor of the source shape.
template <typename T>
Var<T> crop2d(Var<T> a, int top, int left, int h, int w) {
  auto& t = *a.tape;
  const auto& x = a.val();
  UCM_CHECK_SHAPE(x.rank() == 3, "crop2d expects [H,W,C]");
  const int sh = x.shape[0], sw = x.shape[1], c = x.shape[2];
  UCM_CHECK_SHAPE(top >= 0 && left >= 0 && top + h <= sh && left + w <= sw,
                  "crop window exceeds " << shape_str(x.shape));
  TensorT<T> v({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch) v.at({y, xx, ch}) = x.at({y + top, xx + left, ch});
  const Shape src = x.shape;
  int id = t.add_node(std::move(v), {a.id},
                      [top, left, h, w, src](const Tape<T>&, const typename Tape<T>::Node&,
                                             const TensorT<T>& g, const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) {
                          TensorT<T> gx(src);
                          const int c = src[2];
                          for (int y = 0; y < h; ++y)
                            for (int xx = 0; xx < w; ++xx)
                              for (int ch = 0; ch < c; ++ch)
                                gx.at({y + top, xx + left, ch}) = g.at({y, xx, ch});
                          out[0] = std::move(gx);
                        }
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> conv2d_valid(Var<T> x, Var<T> w, int stride) {
  detail::check_same_tape<T>({x, w});
  auto& t = *x.tape;
  int id = t.add_node(
      conv2d_valid_raw(x.val(), w.val(), stride), {x.id, w.id},
      [stride](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
               const std::vector<char>& need) {
        const auto& xv = tp.value(n.parents[0]);
        const auto& wv = tp.value(n.parents[1]);
        const ucmnet::detail::ImageView<T> vx(xv);
        std::vector<TensorT<T>> out(2);
        if (need[0]) out[0] = conv2d_valid_grad_input_raw(g, wv, stride, vx.h, vx.w);
        if (need[1]) out[1] = conv2d_valid_grad_weight_raw(xv, g, stride, wv.shape[0], wv.shape[1]);
        return out;
      });
  return {&t, id};
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride, int padding, PadMode mode) {
  return conv2d_valid(pad2d(x, padding, mode), w, stride);
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, int stride) {
  detail::check_same_tape<T>({x, w});
  auto& t = *x.tape;
  int id = t.add_node(
      conv_transpose2d_raw(x.val(), w.val(), stride), {x.id, w.id},
      [stride](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
               const std::vector<char>& need) {
        const auto& xv = tp.value(n.parents[0]);
        const auto& wv = tp.value(n.parents[1]);
        std::vector<TensorT<T>> out(2);
        if (need[0]) out[0] = conv2d_valid_raw(g, wv, stride);
        if (need[1])
          out[1] = conv2d_valid_grad_weight_raw(g, xv, stride, wv.shape[0], wv.shape[1]);
        return out;
      });
  return {&t, id};
}

template <typename T>
Var<T> depthwise_conv2d_valid(Var<T> x, Var<T> w, int stride) {
  detail::check_same_tape<T>({x, w});
  auto& t = *x.tape;
  int id = t.add_node(
      depthwise_conv2d_valid_raw(x.val(), w.val(), stride), {x.id, w.id},
      [stride](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
               const std::vector<char>& need) {
        const auto& xv = tp.value(n.parents[0]);
        const auto& wv = tp.value(n.parents[1]);
        const ucmnet::detail::ImageView<T> vx(xv);
        std::vector<TensorT<T>> out(2);
        if (need[0]) out[0] = depthwise_conv2d_grad_input_raw(g, wv, stride, vx.h, vx.w);
        if (need[1])
          out[1] = depthwise_conv2d_grad_weight_raw(xv, g, stride, wv.shape[0], wv.shape[1]);
        return out;
      });
  return {&t, id};
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, int stride, int padding, PadMode mode) {
  return depthwise_conv2d_valid(pad2d(x, padding, mode), w, stride);
}

// Slice along the last axis; adjoint scatters into a zero tensor.
template <typename T>
Var<T> slice_last(Var<T> x, int start, int len) {
  auto& t = *x.tape;
  const Shape src = x.shape();
  int id = t.add_node(slice_last_raw(x.val(), start, len), {x.id},
                      [start, len, src](const Tape<T>&, const typename Tape<T>::Node&,
                                        const TensorT<T>& g, const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) {
                          TensorT<T> gx(src);
                          const int c = src.back();
                          const int64_t rows = gx.numel() / c;
                          for (int64_t row = 0; row < rows; ++row)
                            for (int i = 0; i < len; ++i)
                              gx.data[static_cast<size_t>(row * c + start + i)] =
                                  g.data[static_cast<size_t>(row * len + i)];
                          out[0] = std::move(gx);
                        }
                        return out;
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Fourier ops. Spectra are packed [2,H,W,C] (real plane, imaginary plane).
// Both maps are linear, so each backward is the scaled adjoint transform.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> fft2(Var<T> x) {
  auto& t = *x.tape;
  const auto& xv = x.val();
  const T hw = static_cast<T>(xv.shape[0]) * static_cast<T>(xv.shape[1]);
  int id = t.add_node(fft2_raw(xv), {x.id},
                      [hw](const Tape<T>&, const typename Tape<T>::Node&, const TensorT<T>& g,
                           const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) {
                          auto gi = ifft2_real_raw(g);
                          out[0] = ew_unary(gi, [hw](T v) { return v * hw; });
                        }
                        return out;
                      });
  return {&t, id};
}

template <typename T>
Var<T> ifft2_real(Var<T> sp) {
  auto& t = *sp.tape;
  const auto& sv = sp.val();
  UCM_CHECK_SHAPE(sv.rank() == 4 && sv.shape[0] == 2, "ifft2_real expects packed [2,H,W,C]");
  const T inv_hw = T(1) / (static_cast<T>(sv.shape[1]) * static_cast<T>(sv.shape[2]));
  int id = t.add_node(ifft2_real_raw(sv), {sp.id},
                      [inv_hw](const Tape<T>&, const typename Tape<T>::Node&, const TensorT<T>& g,
                               const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) {
                          auto gs = fft2_raw(g);
                          out[0] = ew_unary(gs, [inv_hw](T v) { return v * inv_hw; });
                        }
                        return out;
                      });
  return {&t, id};
}

// Pack two equal-shape tensors along a new leading axis of extent 2.
template <typename T>
Var<T> stack2(Var<T> a, Var<T> b) {
  detail::check_same_tape<T>({a, b});
  auto& t = *a.tape;
  const auto& av = a.val();
  const auto& bv = b.val();
  UCM_CHECK_SHAPE(av.shape == bv.shape, "stack2 operands differ: " << shape_str(av.shape) << " vs "
                                                                   << shape_str(bv.shape));
  Shape os = av.shape;
  os.insert(os.begin(), 2);
  TensorT<T> v(os);
  std::copy(av.data.begin(), av.data.end(), v.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), v.data.begin() + av.numel());
  int id = t.add_node(std::move(v), {a.id, b.id},
                      [](const Tape<T>& tp, const typename Tape<T>::Node& n, const TensorT<T>& g,
                         const std::vector<char>& need) {
                        const auto& av2 = tp.value(n.parents[0]);
                        const int64_t half = av2.numel();
                        std::vector<TensorT<T>> out(2);
                        for (int k = 0; k < 2; ++k) {
                          if (!need[static_cast<size_t>(k)]) continue;
                          TensorT<T> gk(av2.shape);
                          std::copy(g.data.begin() + k * half, g.data.begin() + (k + 1) * half,
                                    gk.data.begin());
                          out[static_cast<size_t>(k)] = std::move(gk);
                        }
                        return out;
                      });
  return {&t, id};
}

// Select plane `index` from a leading axis of extent 2.
template <typename T>
Var<T> unstack2(Var<T> x, int index) {
  auto& t = *x.tape;
  const auto& xv = x.val();
  UCM_CHECK_SHAPE(xv.rank() >= 1 && xv.shape[0] == 2, "unstack2 expects leading extent 2");
  UCM_CHECK_SHAPE(index == 0 || index == 1, "unstack2 index must be 0 or 1");
  Shape os(xv.shape.begin() + 1, xv.shape.end());
  const int64_t half = shape_numel(os);
  TensorT<T> v(os);
  std::copy(xv.data.begin() + index * half, xv.data.begin() + (index + 1) * half, v.data.begin());
  const Shape src = xv.shape;
  int id = t.add_node(std::move(v), {x.id},
                      [index, src, half](const Tape<T>&, const typename Tape<T>::Node&,
                                         const TensorT<T>& g, const std::vector<char>& need) {
                        std::vector<TensorT<T>> out(1);
                        if (need[0]) {
                          TensorT<T> gx(src);
                          std::copy(g.data.begin(), g.data.end(), gx.data.begin() + index * half);
                          out[0] = std::move(gx);
                        }
                        return out;
                      });
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Gradient query
// ---------------------------------------------------------------------------

// Derivatives of a scalar output w.r.t. each listed parameter, in order.
// Parameters the output does not depend on receive zero tensors. The reverse
// sweep walks node ids downward, which is a deterministic topological order.
template <typename T>
std::vector<TensorT<T>> gradients(const Var<T>& output, const std::vector<Var<T>>& params) {
  UCM_CHECK(output.tape != nullptr, ShapeError, "gradients: unbound output");
  const Tape<T>& tape = *output.tape;
  UCM_CHECK_SHAPE(output.val().numel() == 1,
                  "gradients requires a scalar output, got " << shape_str(output.val().shape));
  for (const auto& p : params)
    UCM_CHECK(p.tape == output.tape, ShapeError, "parameter on a different tape");

  std::vector<std::unique_ptr<TensorT<T>>> grads(static_cast<size_t>(tape.size()));
  grads[static_cast<size_t>(output.id)] =
      std::make_unique<TensorT<T>>(TensorT<T>::ones(output.val().shape));

  for (int id = output.id; id >= 0; --id) {
    auto& gptr = grads[static_cast<size_t>(id)];
    if (!gptr) continue;
    const auto& node = tape.node(id);
    if (!node.backward || !node.requires_grad) continue;
    std::vector<char> need(node.parents.size(), 0);
    bool any = false;
    for (size_t i = 0; i < node.parents.size(); ++i) {
      need[i] = tape.node(node.parents[i]).requires_grad ? 1 : 0;
      any = any || need[i];
    }
    if (!any) continue;
    auto pg = node.backward(tape, node, *gptr, need);
    for (size_t i = 0; i < node.parents.size(); ++i) {
      if (!need[i]) continue;
      const int pid = node.parents[i];
      auto& slot = grads[static_cast<size_t>(pid)];
      if (!slot) {
        slot = std::make_unique<TensorT<T>>(std::move(pg[i]));
      } else {
        *slot = add_raw(*slot, pg[i]);
      }
    }
    if (id != output.id) gptr.reset();  // free as we go
  }

  std::vector<TensorT<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto& slot = grads[static_cast<size_t>(p.id)];
    out.push_back(slot ? *slot : TensorT<T>::zeros(p.val().shape));
  }
  return out;
}

}  // namespace ad
}  // namespace ucmnet
