#pragma once

// 2-D discrete Fourier transforms over [H,W,C] tensors, one transform per
// channel. Forward is unscaled; inverse carries the full 1/(H*W) factor.
// Arbitrary extents are supported: power-of-two lengths use an iterative
// radix-2 kernel, everything else goes through Bluestein's chirp-z algorithm.
// Internals run in double regardless of the tensor scalar type.
//
// Spectra are packed real tensors of shape [2,H,W,C]: index 0 along the first
// axis is the real plane, index 1 the imaginary plane.

#include <complex>
#include <vector>

#include "ucmnet/tensor.hpp"

namespace ucmnet {
namespace fftdetail {

using cd = std::complex<double>;
inline constexpr double kPi = 3.14159265358979323846;

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline int next_pow2(int n) {
  int m = 1;
  while (m < n) m <<= 1;
  return m;
}

// In-place iterative radix-2 FFT, n a power of two.
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / len * (inverse ? 1.0 : -1.0);
    const cd wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        const cd u = a[static_cast<size_t>(i + k)];
        const cd v = a[static_cast<size_t>(i + k + len / 2)] * w;
        a[static_cast<size_t>(i + k)] = u + v;
        a[static_cast<size_t>(i + k + len / 2)] = u - v;
        w *= wlen;
      }
    }
  }
  // No scaling here; callers handle normalization.
}

// Unscaled forward DFT of arbitrary length via Bluestein's algorithm.
inline void dft_bluestein(std::vector<cd>& a) {
  const int n = static_cast<int>(a.size());
  const int m = next_pow2(2 * n - 1);
  // Chirp w_k = exp(-i*pi*k^2/n); k^2 reduced mod 2n to keep angles exact.
  std::vector<cd> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const int64_t kk = (static_cast<int64_t>(k) * k) % (2LL * n);
    const double ang = -kPi * static_cast<double>(kk) / n;
    w[static_cast<size_t>(k)] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<cd> fa(static_cast<size_t>(m), cd(0, 0));
  std::vector<cd> fb(static_cast<size_t>(m), cd(0, 0));
  for (int k = 0; k < n; ++k) fa[static_cast<size_t>(k)] = a[static_cast<size_t>(k)] * w[static_cast<size_t>(k)];
  fb[0] = std::conj(w[0]);
  for (int k = 1; k < n; ++k)
    fb[static_cast<size_t>(k)] = fb[static_cast<size_t>(m - k)] = std::conj(w[static_cast<size_t>(k)]);
  fft_pow2(fa, false);
  fft_pow2(fb, false);
  for (int i = 0; i < m; ++i) fa[static_cast<size_t>(i)] *= fb[static_cast<size_t>(i)];
  fft_pow2(fa, true);
  const double inv_m = 1.0 / m;
  for (int k = 0; k < n; ++k)
    a[static_cast<size_t>(k)] = fa[static_cast<size_t>(k)] * w[static_cast<size_t>(k)] * inv_m;
}

// Unscaled transform of arbitrary length; inverse leaves the 1/n factor to
// the caller (so forward-then-inverse needs an explicit 1/n).
inline void fft_any(std::vector<cd>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  if (n == 1) return;
  if (is_pow2(n)) {
    fft_pow2(a, inverse);
    return;
  }
  if (!inverse) {
    dft_bluestein(a);
  } else {
    for (auto& v : a) v = std::conj(v);
    dft_bluestein(a);
    for (auto& v : a) v = std::conj(v);
  }
}

// 2-D transform of one channel grid (row-major H x W), in place.
inline void fft2_grid(std::vector<cd>& g, int h, int w, bool inverse) {
  std::vector<cd> buf(static_cast<size_t>(std::max(h, w)));
  for (int y = 0; y < h; ++y) {
    buf.assign(g.begin() + static_cast<int64_t>(y) * w, g.begin() + static_cast<int64_t>(y + 1) * w);
    buf.resize(static_cast<size_t>(w));
    fft_any(buf, inverse);
    std::copy(buf.begin(), buf.end(), g.begin() + static_cast<int64_t>(y) * w);
  }
  for (int x = 0; x < w; ++x) {
    buf.resize(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) buf[static_cast<size_t>(y)] = g[static_cast<size_t>(y) * w + x];
    fft_any(buf, inverse);
    for (int y = 0; y < h; ++y) g[static_cast<size_t>(y) * w + x] = buf[static_cast<size_t>(y)];
  }
  if (inverse) {
    const double scale = 1.0 / (static_cast<double>(h) * w);
    for (auto& v : g) v *= scale;
  }
}

}  // namespace fftdetail

// Forward 2-D DFT of a real [H,W,C] tensor; packed [2,H,W,C] spectrum.
template <typename T>
TensorT<T> fft2_raw(const TensorT<T>& x) {
  UCM_CHECK_SHAPE(x.rank() == 3, "fft2 expects [H,W,C], got " << shape_str(x.shape));
  UCM_CHECK_NUMERIC(all_finite(x), "fft2 input contains non-finite values");
  const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
  TensorT<T> out({2, h, w, c});
  std::vector<fftdetail::cd> grid(static_cast<size_t>(h) * w);
  const int64_t plane = static_cast<int64_t>(h) * w * c;
  for (int ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
      grid[static_cast<size_t>(i)] = fftdetail::cd(static_cast<double>(x.data[static_cast<size_t>(i * c + ch)]), 0.0);
    fftdetail::fft2_grid(grid, h, w, false);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
      out.data[static_cast<size_t>(i * c + ch)] = static_cast<T>(grid[static_cast<size_t>(i)].real());
      out.data[static_cast<size_t>(plane + i * c + ch)] = static_cast<T>(grid[static_cast<size_t>(i)].imag());
    }
  }
  return out;
}

// Full complex inverse of a packed spectrum; result packed [2,H,W,C].
template <typename T>
TensorT<T> ifft2_raw(const TensorT<T>& sp) {
  UCM_CHECK_SHAPE(sp.rank() == 4 && sp.shape[0] == 2,
                  "ifft2 expects packed [2,H,W,C], got " << shape_str(sp.shape));
  UCM_CHECK_NUMERIC(all_finite(sp), "ifft2 input contains non-finite values");
  const int h = sp.shape[1], w = sp.shape[2], c = sp.shape[3];
  TensorT<T> out(sp.shape);
  std::vector<fftdetail::cd> grid(static_cast<size_t>(h) * w);
  const int64_t plane = static_cast<int64_t>(h) * w * c;
  for (int ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
      grid[static_cast<size_t>(i)] =
          fftdetail::cd(static_cast<double>(sp.data[static_cast<size_t>(i * c + ch)]),
                        static_cast<double>(sp.data[static_cast<size_t>(plane + i * c + ch)]));
    fftdetail::fft2_grid(grid, h, w, true);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
      out.data[static_cast<size_t>(i * c + ch)] = static_cast<T>(grid[static_cast<size_t>(i)].real());
      out.data[static_cast<size_t>(plane + i * c + ch)] = static_cast<T>(grid[static_cast<size_t>(i)].imag());
    }
  }
  return out;
}

// Real part of the inverse transform: [2,H,W,C] -> [H,W,C].
template <typename T>
TensorT<T> ifft2_real_raw(const TensorT<T>& sp) {
  TensorT<T> full = ifft2_raw(sp);
  const int h = sp.shape[1], w = sp.shape[2], c = sp.shape[3];
  TensorT<T> out({h, w, c});
  std::copy(full.data.begin(), full.data.begin() + out.numel(), out.data.begin());
  return out;
}

}  // namespace ucmnet
