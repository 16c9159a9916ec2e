#pragma once

// Dense row-major tensor and the raw numeric kernels the autodiff layer is
// built from. Image-like tensors use channel-last layout [B, H, W, C] (or
// [H, W, C] unbatched); token banks use [N, C].
//
// Raw kernels here are pure functions: they allocate and return new tensors,
// never mutate inputs. Gradient bookkeeping lives in autodiff.hpp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ucmnet/common.hpp"

namespace ucmnet {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)) {
    for (int d : shape) UCM_CHECK_SHAPE(d > 0, "non-positive extent in shape " << shape_str(shape));
    data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  }
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    UCM_CHECK_SHAPE(static_cast<int64_t>(data.size()) == shape_numel(shape),
                    "data size " << data.size() << " does not match shape " << shape_str(shape));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int axis) const { return shape[static_cast<size_t>(axis)]; }

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT ones(Shape s) { return full(std::move(s), T(1)); }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  // Row-major strides, in elements.
  std::vector<int64_t> strides() const {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = rank() - 2; i >= 0; --i)
      st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return st;
  }

  T& at(std::initializer_list<int> idx) {
    return data[static_cast<size_t>(flat_index(idx))];
  }
  T at(std::initializer_list<int> idx) const {
    return data[static_cast<size_t>(flat_index(idx))];
  }

  int64_t flat_index(std::initializer_list<int> idx) const {
    UCM_CHECK_SHAPE(static_cast<int>(idx.size()) == rank(),
                    "index rank " << idx.size() << " vs tensor rank " << rank());
    int64_t flat = 0;
    int axis = 0;
    for (int i : idx) {
      UCM_CHECK_SHAPE(i >= 0 && i < shape[static_cast<size_t>(axis)],
                      "index " << i << " out of range for axis " << axis << " of " << shape_str(shape));
      flat = flat * shape[static_cast<size_t>(axis)] + i;
      ++axis;
    }
    return flat;
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
const char* dtype_tag() {
  if constexpr (sizeof(T) == 4) return "f32";
  else return "f64";
}

// ---------------------------------------------------------------------------
// Broadcasting (trailing dimensions only: shapes align at the right edge, and
// each aligned pair must match or one of them must be 1 / absent).
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int da = i < ra ? a[static_cast<size_t>(ra - 1 - i)] : 1;
    const int db = i < rb ? b[static_cast<size_t>(rb - 1 - i)] : 1;
    UCM_CHECK_SHAPE(da == db || da == 1 || db == 1,
                    "shapes " << shape_str(a) << " and " << shape_str(b) << " do not broadcast");
    out[static_cast<size_t>(r - 1 - i)] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Strides of `src` viewed through broadcast shape `out` (0 where broadcast).
inline std::vector<int64_t> broadcast_strides(const Shape& src, const Shape& out) {
  const int rs = static_cast<int>(src.size()), ro = static_cast<int>(out.size());
  std::vector<int64_t> st(static_cast<size_t>(ro), 0);
  int64_t stride = 1;
  for (int i = 0; i < rs; ++i) {
    const int axis = rs - 1 - i;
    const int out_axis = ro - 1 - i;
    if (src[static_cast<size_t>(axis)] != 1) st[static_cast<size_t>(out_axis)] = stride;
    stride *= src[static_cast<size_t>(axis)];
  }
  return st;
}

}  // namespace detail

template <typename T, class F>
TensorT<T> ew_binary(const TensorT<T>& a, const TensorT<T>& b, F f) {
  if (a.shape == b.shape) {
    TensorT<T> out(a.shape);
    const size_t n = a.data.size();
    for (size_t i = 0; i < n; ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape, b.shape);
  TensorT<T> out(os);
  const auto sa = detail::broadcast_strides(a.shape, os);
  const auto sb = detail::broadcast_strides(b.shape, os);
  const int r = static_cast<int>(os.size());
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t ia = 0, ib = 0;
  const int64_t n = out.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    out.data[static_cast<size_t>(flat)] =
        f(a.data[static_cast<size_t>(ia)], b.data[static_cast<size_t>(ib)]);
    for (int axis = r - 1; axis >= 0; --axis) {
      ++idx[static_cast<size_t>(axis)];
      ia += sa[static_cast<size_t>(axis)];
      ib += sb[static_cast<size_t>(axis)];
      if (idx[static_cast<size_t>(axis)] < os[static_cast<size_t>(axis)]) break;
      idx[static_cast<size_t>(axis)] = 0;
      ia -= sa[static_cast<size_t>(axis)] * os[static_cast<size_t>(axis)];
      ib -= sb[static_cast<size_t>(axis)] * os[static_cast<size_t>(axis)];
    }
  }
  return out;
}

template <typename T, class F>
TensorT<T> ew_unary(const TensorT<T>& a, F f) {
  TensorT<T> out(a.shape);
  const size_t n = a.data.size();
  for (size_t i = 0; i < n; ++i) out.data[i] = f(a.data[i]);
  return out;
}

// Sum `g` down to `target` shape: the adjoint of broadcasting.
template <typename T>
TensorT<T> reduce_to_shape(const TensorT<T>& g, const Shape& target) {
  if (g.shape == target) return g;
  UCM_CHECK_SHAPE(broadcast_shape(g.shape, target) == g.shape,
                  "cannot reduce " << shape_str(g.shape) << " to " << shape_str(target));
  TensorT<T> out(target);
  const auto st = detail::broadcast_strides(target, g.shape);
  const int r = g.rank();
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t io = 0;
  const int64_t n = g.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    out.data[static_cast<size_t>(io)] += g.data[static_cast<size_t>(flat)];
    for (int axis = r - 1; axis >= 0; --axis) {
      ++idx[static_cast<size_t>(axis)];
      io += st[static_cast<size_t>(axis)];
      if (idx[static_cast<size_t>(axis)] < g.shape[static_cast<size_t>(axis)]) break;
      idx[static_cast<size_t>(axis)] = 0;
      io -= st[static_cast<size_t>(axis)] * g.shape[static_cast<size_t>(axis)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise kernels
// ---------------------------------------------------------------------------

template <typename T> TensorT<T> add_raw(const TensorT<T>& a, const TensorT<T>& b) {
  return ew_binary(a, b, [](T x, T y) { return x + y; });
}
template <typename T> TensorT<T> sub_raw(const TensorT<T>& a, const TensorT<T>& b) {
  return ew_binary(a, b, [](T x, T y) { return x - y; });
}
template <typename T> TensorT<T> mul_raw(const TensorT<T>& a, const TensorT<T>& b) {
  return ew_binary(a, b, [](T x, T y) { return x * y; });
}

// Division by an exact zero is a NumericError in 64-bit mode; the 32-bit
// training path skips the scan for speed.
template <typename T> TensorT<T> div_raw(const TensorT<T>& a, const TensorT<T>& b) {
  if constexpr (sizeof(T) == 8) {
    for (T v : b.data)
      UCM_CHECK_NUMERIC(v != T(0), "elementwise division by exact zero");
  }
  return ew_binary(a, b, [](T x, T y) { return x / y; });
}

template <typename T>
T gelu_scalar(T x) {
  // Exact (erf-based) GELU.
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}
template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  const T pdf = T(0.3989422804014326779) * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}
template <typename T>
T softplus_scalar(T x) {
  // log(1 + e^x), overflow-safe.
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Sum over the listed axes. keepdims retains size-1 extents. Axes must be
// distinct and in range. An empty axis list means "all axes".
template <typename T>
TensorT<T> reduce_sum_raw(const TensorT<T>& x, std::vector<int> axes, bool keepdims) {
  const int r = x.rank();
  if (axes.empty()) {
    axes.resize(static_cast<size_t>(r));
    std::iota(axes.begin(), axes.end(), 0);
  }
  std::vector<bool> reduced(static_cast<size_t>(r), false);
  for (int a : axes) {
    UCM_CHECK_SHAPE(a >= 0 && a < r, "reduce axis " << a << " out of range for " << shape_str(x.shape));
    UCM_CHECK_SHAPE(!reduced[static_cast<size_t>(a)], "duplicate reduce axis " << a);
    reduced[static_cast<size_t>(a)] = true;
  }
  Shape os;
  for (int i = 0; i < r; ++i) {
    if (reduced[static_cast<size_t>(i)]) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(x.shape[static_cast<size_t>(i)]);
    }
  }
  if (os.empty()) os.push_back(1);
  TensorT<T> out(os);

  // Per-axis output stride; zero on reduced axes (their size-1 slot, if kept,
  // contributes no offset).
  std::vector<int64_t> ostr(static_cast<size_t>(r), 0);
  {
    int64_t stride = 1;
    for (int i = r - 1; i >= 0; --i) {
      if (!reduced[static_cast<size_t>(i)]) {
        ostr[static_cast<size_t>(i)] = stride;
        stride *= x.shape[static_cast<size_t>(i)];
      }
    }
  }
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t io = 0;
  const int64_t n = x.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    out.data[static_cast<size_t>(io)] += x.data[static_cast<size_t>(flat)];
    for (int axis = r - 1; axis >= 0; --axis) {
      ++idx[static_cast<size_t>(axis)];
      io += ostr[static_cast<size_t>(axis)];
      if (idx[static_cast<size_t>(axis)] < x.shape[static_cast<size_t>(axis)]) break;
      idx[static_cast<size_t>(axis)] = 0;
      io -= ostr[static_cast<size_t>(axis)] * x.shape[static_cast<size_t>(axis)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape_raw(const TensorT<T>& x, Shape s) {
  UCM_CHECK_SHAPE(shape_numel(s) == x.numel(),
                  "reshape " << shape_str(x.shape) << " -> " << shape_str(s) << " changes element count");
  return TensorT<T>(std::move(s), x.data);
}

template <typename T>
TensorT<T> permute_raw(const TensorT<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  UCM_CHECK_SHAPE(static_cast<int>(perm.size()) == r, "permute rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<size_t>(i)];
    UCM_CHECK_SHAPE(p >= 0 && p < r && !seen[static_cast<size_t>(p)], "invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    os[static_cast<size_t>(i)] = x.shape[static_cast<size_t>(p)];
  }
  TensorT<T> out(os);
  const auto xstr = x.strides();
  std::vector<int64_t> gather(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) gather[static_cast<size_t>(i)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t ix = 0;
  const int64_t n = out.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    out.data[static_cast<size_t>(flat)] = x.data[static_cast<size_t>(ix)];
    for (int axis = r - 1; axis >= 0; --axis) {
      ++idx[static_cast<size_t>(axis)];
      ix += gather[static_cast<size_t>(axis)];
      if (idx[static_cast<size_t>(axis)] < os[static_cast<size_t>(axis)]) break;
      idx[static_cast<size_t>(axis)] = 0;
      ix -= gather[static_cast<size_t>(axis)] * os[static_cast<size_t>(axis)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul: [m,k] x [k,n] -> [m,n]
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul_raw(const TensorT<T>& a, const TensorT<T>& b) {
  UCM_CHECK_SHAPE(a.rank() == 2 && b.rank() == 2,
                  "matmul expects rank-2 operands, got " << shape_str(a.shape) << " x " << shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
  UCM_CHECK_SHAPE(k == k2, "matmul inner extents differ: " << shape_str(a.shape) << " x " << shape_str(b.shape));
  TensorT<T> out({m, n});
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* po = out.data.data();
  for (int i = 0; i < m; ++i) {
    T* orow = po + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T aip = pa[static_cast<int64_t>(i) * k + p];
      if (aip == T(0)) continue;
      const T* brow = pb + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

template <typename T>
TensorT<T> transpose2d_raw(const TensorT<T>& a) {
  UCM_CHECK_SHAPE(a.rank() == 2, "transpose expects rank-2, got " << shape_str(a.shape));
  return permute_raw(a, {1, 0});
}

// ---------------------------------------------------------------------------
// Spatial padding (zero | reflect) on [H,W,C] or [B,H,W,C]
// ---------------------------------------------------------------------------

enum class PadMode { kZero, kReflect };

namespace detail {

inline int reflect_index(int i, int n) {
  // Mirror without repeating the border sample: [a,b,c] pad 1 -> [b,a,b,c,b].
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

template <typename T>
struct ImageView {
  // Uniform [B,H,W,C] view over rank-3 or rank-4 tensors.
  int b, h, w, c;
  explicit ImageView(const TensorT<T>& t) {
    UCM_CHECK_SHAPE(t.rank() == 3 || t.rank() == 4,
                    "expected [H,W,C] or [B,H,W,C], got " << shape_str(t.shape));
    if (t.rank() == 3) {
      b = 1; h = t.shape[0]; w = t.shape[1]; c = t.shape[2];
    } else {
      b = t.shape[0]; h = t.shape[1]; w = t.shape[2]; c = t.shape[3];
    }
  }
  Shape like(int nb, int nh, int nw, int nc, int rank) const {
    if (rank == 3) return {nh, nw, nc};
    return {nb, nh, nw, nc};
  }
};

}  // namespace detail

template <typename T>
TensorT<T> pad2d_rect_raw(const TensorT<T>& x, int top, int bottom, int left, int right,
                          PadMode mode) {
  UCM_CHECK_SHAPE(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "negative padding");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return x;
  const detail::ImageView<T> v(x);
  const int oh = v.h + top + bottom, ow = v.w + left + right;
  TensorT<T> out(v.like(v.b, oh, ow, v.c, x.rank()));
  const T* px = x.data.data();
  T* po = out.data.data();
  for (int b = 0; b < v.b; ++b) {
    for (int y = 0; y < oh; ++y) {
      const int sy = y - top;
      for (int xcol = 0; xcol < ow; ++xcol) {
        const int sx = xcol - left;
        T* dst = po + (((static_cast<int64_t>(b) * oh + y) * ow) + xcol) * v.c;
        if (mode == PadMode::kZero && (sy < 0 || sy >= v.h || sx < 0 || sx >= v.w)) {
          continue;  // already zero
        }
        const int iy = mode == PadMode::kZero ? sy : detail::reflect_index(sy, v.h);
        const int ix = mode == PadMode::kZero ? sx : detail::reflect_index(sx, v.w);
        const T* src = px + (((static_cast<int64_t>(b) * v.h + iy) * v.w) + ix) * v.c;
        for (int ch = 0; ch < v.c; ++ch) dst[ch] = src[ch];
      }
    }
  }
  return out;
}

// Adjoint of pad2d_rect: scatter-add padded-space gradient back to the source.
template <typename T>
TensorT<T> pad2d_rect_adjoint_raw(const TensorT<T>& g, int top, int bottom, int left, int right,
                                  PadMode mode, const Shape& src_shape) {
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return g;
  TensorT<T> out(src_shape);
  const detail::ImageView<T> v(out);
  const detail::ImageView<T> gv(g);
  UCM_CHECK_SHAPE(gv.h == v.h + top + bottom && gv.w == v.w + left + right && gv.c == v.c &&
                      gv.b == v.b,
                  "pad adjoint shape mismatch");
  const T* pg = g.data.data();
  T* po = out.data.data();
  for (int b = 0; b < gv.b; ++b) {
    for (int y = 0; y < gv.h; ++y) {
      const int sy = y - top;
      for (int xcol = 0; xcol < gv.w; ++xcol) {
        const int sx = xcol - left;
        if (mode == PadMode::kZero && (sy < 0 || sy >= v.h || sx < 0 || sx >= v.w)) continue;
        const int iy = mode == PadMode::kZero ? sy : detail::reflect_index(sy, v.h);
        const int ix = mode == PadMode::kZero ? sx : detail::reflect_index(sx, v.w);
        const T* src = pg + (((static_cast<int64_t>(b) * gv.h + y) * gv.w) + xcol) * gv.c;
        T* dst = po + (((static_cast<int64_t>(b) * v.h + iy) * v.w) + ix) * v.c;
        for (int ch = 0; ch < v.c; ++ch) dst[ch] += src[ch];
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> pad2d_raw(const TensorT<T>& x, int pad, PadMode mode) {
  UCM_CHECK_SHAPE(pad >= 0, "negative padding");
  if (pad == 0) return x;
  if (mode == PadMode::kReflect) {
    const detail::ImageView<T> v(x);
    UCM_CHECK_SHAPE(v.h > pad && v.w > pad,
                    "reflect padding " << pad << " needs spatial extents > pad, got " << shape_str(x.shape));
  }
  return pad2d_rect_raw(x, pad, pad, pad, pad, mode);
}

template <typename T>
TensorT<T> pad2d_adjoint_raw(const TensorT<T>& g, int pad, PadMode mode, const Shape& src_shape) {
  return pad2d_rect_adjoint_raw(g, pad, pad, pad, pad, mode, src_shape);
}

// ---------------------------------------------------------------------------
// Convolutions. Weight layout [kh, kw, Cin, Cout]. Valid (unpadded) kernels;
// padding is composed separately via pad2d.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d_valid_raw(const TensorT<T>& x, const TensorT<T>& w, int stride) {
  const detail::ImageView<T> v(x);
  UCM_CHECK_SHAPE(w.rank() == 4, "conv weight must be [kh,kw,Cin,Cout], got " << shape_str(w.shape));
  const int kh = w.shape[0], kw = w.shape[1], ci = w.shape[2], co = w.shape[3];
  UCM_CHECK_SHAPE(ci == v.c, "conv input channels " << v.c << " vs weight Cin " << ci);
  UCM_CHECK_SHAPE(stride >= 1, "conv stride must be >= 1");
  UCM_CHECK_SHAPE(v.h >= kh && v.w >= kw,
                  "conv input " << shape_str(x.shape) << " smaller than kernel " << shape_str(w.shape));
  const int oh = (v.h - kh) / stride + 1;
  const int ow = (v.w - kw) / stride + 1;
  TensorT<T> out(v.like(v.b, oh, ow, co, x.rank()));
  const T* px = x.data.data();
  const T* pw = w.data.data();
  T* po = out.data.data();
  for (int b = 0; b < v.b; ++b) {
    const T* xb = px + static_cast<int64_t>(b) * v.h * v.w * v.c;
    T* ob = po + static_cast<int64_t>(b) * oh * ow * co;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T* acc = ob + (static_cast<int64_t>(oy) * ow + ox) * co;
        for (int ky = 0; ky < kh; ++ky) {
          const T* xrow = xb + ((static_cast<int64_t>(oy) * stride + ky) * v.w + static_cast<int64_t>(ox) * stride) * v.c;
          const T* wrow = pw + (static_cast<int64_t>(ky) * kw) * ci * co;
          for (int kx = 0; kx < kw; ++kx) {
            const T* xpix = xrow + static_cast<int64_t>(kx) * v.c;
            const T* wpix = wrow + static_cast<int64_t>(kx) * ci * co;
            for (int c = 0; c < ci; ++c) {
              const T xv = xpix[c];
              if (xv == T(0)) continue;
              const T* wv = wpix + static_cast<int64_t>(c) * co;
              for (int o = 0; o < co; ++o) acc[o] += xv * wv[o];
            }
          }
        }
      }
    }
  }
  return out;
}

// Gradient of conv2d_valid w.r.t. its input; also the conv_transpose2d
// forward kernel (they are the same adjoint map).
template <typename T>
TensorT<T> conv2d_valid_grad_input_raw(const TensorT<T>& gout, const TensorT<T>& w, int stride,
                                       int in_h, int in_w) {
  const detail::ImageView<T> v(gout);
  const int kh = w.shape[0], kw = w.shape[1], ci = w.shape[2], co = w.shape[3];
  UCM_CHECK_SHAPE(co == v.c, "adjoint channels " << v.c << " vs weight Cout " << co);
  UCM_CHECK_SHAPE(in_h >= kh && in_w >= kw, "adjoint target extents smaller than kernel");
  TensorT<T> out(v.like(v.b, in_h, in_w, ci, gout.rank()));
  const T* pg = gout.data.data();
  const T* pw = w.data.data();
  T* po = out.data.data();
  for (int b = 0; b < v.b; ++b) {
    const T* gb = pg + static_cast<int64_t>(b) * v.h * v.w * co;
    T* ob = po + static_cast<int64_t>(b) * in_h * in_w * ci;
    for (int oy = 0; oy < v.h; ++oy) {
      for (int ox = 0; ox < v.w; ++ox) {
        const T* gpix = gb + (static_cast<int64_t>(oy) * v.w + ox) * co;
        for (int ky = 0; ky < kh; ++ky) {
          T* orow = ob + ((static_cast<int64_t>(oy) * stride + ky) * in_w + static_cast<int64_t>(ox) * stride) * ci;
          for (int kx = 0; kx < kw; ++kx) {
            T* opix = orow + static_cast<int64_t>(kx) * ci;
            const T* wpix = pw + ((static_cast<int64_t>(ky) * kw + kx) * ci) * co;
            for (int c = 0; c < ci; ++c) {
              const T* wv = wpix + static_cast<int64_t>(c) * co;
              T acc = T(0);
              for (int o = 0; o < co; ++o) acc += gpix[o] * wv[o];
              opix[c] += acc;
            }
          }
        }
      }
    }
  }
  return out;
}

// Gradient of conv2d_valid w.r.t. the weight.
template <typename T>
TensorT<T> conv2d_valid_grad_weight_raw(const TensorT<T>& x, const TensorT<T>& gout, int stride,
                                        int kh, int kw) {
  const detail::ImageView<T> vx(x);
  const detail::ImageView<T> vg(gout);
  UCM_CHECK_SHAPE(vx.b == vg.b, "batch mismatch in conv weight gradient");
  TensorT<T> gw({kh, kw, vx.c, vg.c});
  const T* px = x.data.data();
  const T* pg = gout.data.data();
  T* pw = gw.data.data();
  for (int b = 0; b < vx.b; ++b) {
    const T* xb = px + static_cast<int64_t>(b) * vx.h * vx.w * vx.c;
    const T* gb = pg + static_cast<int64_t>(b) * vg.h * vg.w * vg.c;
    for (int oy = 0; oy < vg.h; ++oy) {
      for (int ox = 0; ox < vg.w; ++ox) {
        const T* gpix = gb + (static_cast<int64_t>(oy) * vg.w + ox) * vg.c;
        for (int ky = 0; ky < kh; ++ky) {
          const T* xrow = xb + ((static_cast<int64_t>(oy) * stride + ky) * vx.w + static_cast<int64_t>(ox) * stride) * vx.c;
          for (int kx = 0; kx < kw; ++kx) {
            const T* xpix = xrow + static_cast<int64_t>(kx) * vx.c;
            T* wpix = pw + ((static_cast<int64_t>(ky) * kw + kx) * vx.c) * vg.c;
            for (int c = 0; c < vx.c; ++c) {
              const T xv = xpix[c];
              if (xv == T(0)) continue;
              T* wv = wpix + static_cast<int64_t>(c) * vg.c;
              for (int o = 0; o < vg.c; ++o) wv[o] += xv * gpix[o];
            }
          }
        }
      }
    }
  }
  return gw;
}

// Depthwise (per-channel) valid convolution: weight [kh,kw,C], each channel
// filtered independently.
template <typename T>
TensorT<T> depthwise_conv2d_valid_raw(const TensorT<T>& x, const TensorT<T>& w, int stride) {
  const detail::ImageView<T> v(x);
  UCM_CHECK_SHAPE(w.rank() == 3, "depthwise weight must be [kh,kw,C], got " << shape_str(w.shape));
  const int kh = w.shape[0], kw = w.shape[1], c = w.shape[2];
  UCM_CHECK_SHAPE(c == v.c, "depthwise channels " << v.c << " vs weight C " << c);
  UCM_CHECK_SHAPE(v.h >= kh && v.w >= kw, "depthwise input smaller than kernel");
  const int oh = (v.h - kh) / stride + 1;
  const int ow = (v.w - kw) / stride + 1;
  TensorT<T> out(v.like(v.b, oh, ow, c, x.rank()));
  const T* px = x.data.data();
  const T* pw = w.data.data();
  T* po = out.data.data();
  for (int b = 0; b < v.b; ++b) {
    const T* xb = px + static_cast<int64_t>(b) * v.h * v.w * c;
    T* ob = po + static_cast<int64_t>(b) * oh * ow * c;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T* acc = ob + (static_cast<int64_t>(oy) * ow + ox) * c;
        for (int ky = 0; ky < kh; ++ky) {
          const T* xrow = xb + ((static_cast<int64_t>(oy) * stride + ky) * v.w + static_cast<int64_t>(ox) * stride) * c;
          const T* wrow = pw + static_cast<int64_t>(ky) * kw * c;
          for (int kx = 0; kx < kw; ++kx) {
            const T* xpix = xrow + static_cast<int64_t>(kx) * c;
            const T* wpix = wrow + static_cast<int64_t>(kx) * c;
            for (int ch = 0; ch < c; ++ch) acc[ch] += xpix[ch] * wpix[ch];
          }
        }
      }
  }
  return out;
}

template <typename T>
TensorT<T> depthwise_conv2d_grad_input_raw(const TensorT<T>& gout, const TensorT<T>& w, int stride,
                                           int in_h, int in_w) {
  const detail::ImageView<T> v(gout);
  const int kh = w.shape[0], kw = w.shape[1], c = w.shape[2];
  TensorT<T> out(v.like(v.b, in_h, in_w, c, gout.rank()));
  const T* pg = gout.data.data();
  const T* pw = w.data.data();
  T* po = out.data.data();
  for (int b = 0; b < v.b; ++b) {
    const T* gb = pg + static_cast<int64_t>(b) * v.h * v.w * c;
    T* ob = po + static_cast<int64_t>(b) * in_h * in_w * c;
    for (int oy = 0; oy < v.h; ++oy)
      for (int ox = 0; ox < v.w; ++ox) {
        const T* gpix = gb + (static_cast<int64_t>(oy) * v.w + ox) * c;
        for (int ky = 0; ky < kh; ++ky) {
          T* orow = ob + ((static_cast<int64_t>(oy) * stride + ky) * in_w + static_cast<int64_t>(ox) * stride) * c;
          for (int kx = 0; kx < kw; ++kx) {
            T* opix = orow + static_cast<int64_t>(kx) * c;
            const T* wpix = pw + (static_cast<int64_t>(ky) * kw + kx) * c;
            for (int ch = 0; ch < c; ++ch) opix[ch] += gpix[ch] * wpix[ch];
          }
        }
      }
  }
  return out;
}

template <typename T>
TensorT<T> depthwise_conv2d_grad_weight_raw(const TensorT<T>& x, const TensorT<T>& gout,
                                            int stride, int kh, int kw) {
  const detail::ImageView<T> vx(x);
  const detail::ImageView<T> vg(gout);
  TensorT<T> gw({kh, kw, vx.c});
  const T* px = x.data.data();
  const T* pg = gout.data.data();
  T* pw = gw.data.data();
  for (int b = 0; b < vx.b; ++b) {
    const T* xb = px + static_cast<int64_t>(b) * vx.h * vx.w * vx.c;
    const T* gb = pg + static_cast<int64_t>(b) * vg.h * vg.w * vg.c;
    for (int oy = 0; oy < vg.h; ++oy)
      for (int ox = 0; ox < vg.w; ++ox) {
        const T* gpix = gb + (static_cast<int64_t>(oy) * vg.w + ox) * vg.c;
        for (int ky = 0; ky < kh; ++ky) {
          const T* xrow = xb + ((static_cast<int64_t>(oy) * stride + ky) * vx.w + static_cast<int64_t>(ox) * stride) * vx.c;
          for (int kx = 0; kx < kw; ++kx) {
            const T* xpix = xrow + static_cast<int64_t>(kx) * vx.c;
            T* wpix = pw + (static_cast<int64_t>(ky) * kw + kx) * vx.c;
            for (int ch = 0; ch < vx.c; ++ch) wpix[ch] += xpix[ch] * gpix[ch];
          }
        }
      }
  }
  return gw;
}

// Slice [start, start+len) along the last axis.
template <typename T>
TensorT<T> slice_last_raw(const TensorT<T>& x, int start, int len) {
  const int r = x.rank();
  const int c = x.shape[static_cast<size_t>(r - 1)];
  UCM_CHECK_SHAPE(start >= 0 && len > 0 && start + len <= c,
                  "slice [" << start << "," << start + len << ") out of range for last extent " << c);
  Shape os = x.shape;
  os[static_cast<size_t>(r - 1)] = len;
  TensorT<T> out(os);
  const int64_t rows = x.numel() / c;
  for (int64_t row = 0; row < rows; ++row)
    for (int i = 0; i < len; ++i)
      out.data[static_cast<size_t>(row * len + i)] = x.data[static_cast<size_t>(row * c + start + i)];
  return out;
}

// L2-normalize each row of [N,C]; rows with norm below eps divide by eps.
template <typename T>
TensorT<T> normalize_rows_raw(const TensorT<T>& m, T eps) {
  UCM_CHECK_SHAPE(m.rank() == 2, "normalize_rows expects [N,C], got " << shape_str(m.shape));
  const int n = m.shape[0], c = m.shape[1];
  TensorT<T> out(m.shape);
  for (int i = 0; i < n; ++i) {
    T sq = T(0);
    for (int j = 0; j < c; ++j) {
      const T v = m.data[static_cast<size_t>(i) * c + j];
      sq += v * v;
    }
    const T norm = std::max(std::sqrt(sq), eps);
    for (int j = 0; j < c; ++j)
      out.data[static_cast<size_t>(i) * c + j] = m.data[static_cast<size_t>(i) * c + j] / norm;
  }
  return out;
}

// conv_transpose2d: exact adjoint of conv2d(., w, stride, valid). Input
// channels equal the conv's Cout; the result has the conv's Cin channels and
// extents (h-1)*stride + kh.
template <typename T>
TensorT<T> conv_transpose2d_raw(const TensorT<T>& x, const TensorT<T>& w, int stride) {
  const detail::ImageView<T> v(x);
  UCM_CHECK_SHAPE(w.rank() == 4, "conv_transpose weight must be [kh,kw,Cin,Cout]");
  const int kh = w.shape[0], kw = w.shape[1];
  const int oh = (v.h - 1) * stride + kh;
  const int ow = (v.w - 1) * stride + kw;
  return conv2d_valid_grad_input_raw(x, w, stride, oh, ow);
}

// ---------------------------------------------------------------------------
// Softmax along one axis (numerically stabilized)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax_raw(const TensorT<T>& x, int axis) {
  const int r = x.rank();
  UCM_CHECK_SHAPE(axis >= 0 && axis < r, "softmax axis " << axis << " out of range for " << shape_str(x.shape));
  const int n = x.shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= x.shape[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= x.shape[static_cast<size_t>(i)];
  TensorT<T> out(x.shape);
  const T* px = x.data.data();
  T* po = out.data.data();
  for (int64_t ou = 0; ou < outer; ++ou) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = ou * n * inner + in;
      T mx = px[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      T sum = T(0);
      for (int i = 0; i < n; ++i) {
        const T e = std::exp(px[base + i * inner] - mx);
        po[base + i * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int i = 0; i < n; ++i) po[base + i * inner] *= inv;
    }
  }
  return out;
}

// Analytic softmax backward: g_x = y * (g_y - sum(g_y * y)) along axis.
template <typename T>
TensorT<T> softmax_backward_raw(const TensorT<T>& y, const TensorT<T>& gy, int axis) {
  UCM_CHECK_SHAPE(y.shape == gy.shape, "softmax backward shape mismatch");
  const int r = y.rank();
  const int n = y.shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= y.shape[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= y.shape[static_cast<size_t>(i)];
  TensorT<T> out(y.shape);
  const T* py = y.data.data();
  const T* pg = gy.data.data();
  T* po = out.data.data();
  for (int64_t ou = 0; ou < outer; ++ou) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = ou * n * inner + in;
      T dot = T(0);
      for (int i = 0; i < n; ++i) dot += py[base + i * inner] * pg[base + i * inner];
      for (int i = 0; i < n; ++i)
        po[base + i * inner] = py[base + i * inner] * (pg[base + i * inner] - dot);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Misc kernels used outside the differentiable graph
// ---------------------------------------------------------------------------

// Argmax along axis 0 of [N, M]; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_axis0(const TensorT<T>& s) {
  UCM_CHECK_SHAPE(s.rank() == 2, "argmax_axis0 expects [N,M], got " << shape_str(s.shape));
  const int n = s.shape[0], m = s.shape[1];
  std::vector<int> out(static_cast<size_t>(m), 0);
  for (int j = 0; j < m; ++j) {
    T best = s.data[static_cast<size_t>(j)];
    int arg = 0;
    for (int i = 1; i < n; ++i) {
      const T v = s.data[static_cast<size_t>(i) * m + j];
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    out[static_cast<size_t>(j)] = arg;
  }
  return out;
}

// Non-overlapping block average over factor x factor tiles of [H,W,C].
template <typename T>
TensorT<T> area_downsample_raw(const TensorT<T>& x, int factor) {
  UCM_CHECK_SHAPE(x.rank() == 3, "area_downsample expects [H,W,C]");
  UCM_CHECK_SHAPE(factor >= 1, "downsample factor must be >= 1");
  if (factor == 1) return x;
  const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
  UCM_CHECK_SHAPE(h % factor == 0 && w % factor == 0,
                  "extents " << shape_str(x.shape) << " not divisible by factor " << factor);
  const int oh = h / factor, ow = w / factor;
  TensorT<T> out({oh, ow, c});
  const T norm = T(1) / static_cast<T>(factor * factor);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += x.at({oy * factor + dy, ox * factor + dx, ch});
        out.at({oy, ox, ch}) = acc * norm;
      }
  return out;
}

template <typename T>
bool all_finite(const TensorT<T>& x) {
  for (T v : x.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  UCM_CHECK_SHAPE(a.shape == b.shape, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

template <typename T>
TensorT<T> random_uniform(Rng& rng, Shape s, T lo, T hi) {
  TensorT<T> t(std::move(s));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return t;
}

template <typename T>
TensorT<T> random_normal(Rng& rng, Shape s, T mean, T stddev) {
  TensorT<T> t(std::move(s));
  for (auto& v : t.data) v = static_cast<T>(rng.normal(static_cast<double>(mean), static_cast<double>(stddev)));
  return t;
}

template <typename TOut, typename TIn>
TensorT<TOut> cast_tensor(const TensorT<TIn>& x) {
  TensorT<TOut> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<TOut>(x.data[i]);
  return out;
}

}  // namespace ucmnet
