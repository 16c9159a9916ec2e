#pragma once

// Evaluation metrics, computed in double regardless of the model precision.
//
//   psnr: peak 1.0, MSE floored at 1e-12, so identical images read 120 dB.
//   ssim: 11x11 Gaussian window (sigma 1.5, separable, truncated at radius 5),
//         K1 = 0.01, K2 = 0.03, biased covariance estimates, valid windows
//         only (no padded borders), each channel scored then averaged.

#include <array>
#include <cmath>

#include "ucmnet/tensor.hpp"

namespace ucmnet {

template <typename T>
double psnr(const TensorT<T>& a, const TensorT<T>& b) {
  UCM_CHECK_SHAPE(a.shape == b.shape, "psnr expects matching shapes, got "
                                          << shape_str(a.shape) << " vs " << shape_str(b.shape));
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  return -10.0 * std::log10(std::max(mse, 1e-12));
}

namespace metricsdetail {

inline std::array<double, 11> ssim_window() {
  std::array<double, 11> k{};
  const double sigma = 1.5;
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    k[static_cast<size_t>(i)] = std::exp(-0.5 * x * x / (sigma * sigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace metricsdetail

template <typename T>
double ssim(const TensorT<T>& a, const TensorT<T>& b) {
  UCM_CHECK_SHAPE(a.shape == b.shape && a.rank() == 3,
                  "ssim expects matching [H,W,C] images, got " << shape_str(a.shape) << " vs "
                                                               << shape_str(b.shape));
  const int h = a.shape[0], w = a.shape[1], c = a.shape[2];
  UCM_CHECK_SHAPE(h >= 11 && w >= 11, "ssim needs extents >= 11, got " << shape_str(a.shape));
  const auto win = metricsdetail::ssim_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int oh = h - 10, ow = w - 10;

  // separable filtering: rows first, then columns, on the five products
  auto filt = [&](auto&& value_at) {
    // value_at(y, x) -> double; returns fully filtered [oh, ow] field
    std::vector<double> rows(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int k = 0; k < 11; ++k) acc += win[static_cast<size_t>(k)] * value_at(y, x + k);
        rows[static_cast<size_t>(y) * ow + x] = acc;
      }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int k = 0; k < 11; ++k) acc += win[static_cast<size_t>(k)] * rows[static_cast<size_t>(y + k) * ow + x];
        out[static_cast<size_t>(y) * ow + x] = acc;
      }
    return out;
  };

  double channel_sum = 0;
  for (int ch = 0; ch < c; ++ch) {
    auto va = [&](int y, int x) { return static_cast<double>(a.data[(static_cast<size_t>(y) * w + x) * c + ch]); };
    auto vb = [&](int y, int x) { return static_cast<double>(b.data[(static_cast<size_t>(y) * w + x) * c + ch]); };
    auto ua = filt(va);
    auto ub = filt(vb);
    auto uaa = filt([&](int y, int x) { return va(y, x) * va(y, x); });
    auto ubb = filt([&](int y, int x) { return vb(y, x) * vb(y, x); });
    auto uab = filt([&](int y, int x) { return va(y, x) * vb(y, x); });

    double mean = 0;
    for (size_t i = 0; i < ua.size(); ++i) {
      const double mx = ua[i], my = ub[i];
      const double vx = uaa[i] - mx * mx;
      const double vy = ubb[i] - my * my;
      const double vxy = uab[i] - mx * my;
      mean += ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    channel_sum += mean / static_cast<double>(ua.size());
  }
  return channel_sum / c;
}

}  // namespace ucmnet
