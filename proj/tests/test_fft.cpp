#include "doctest.h"
#include "oracles.hpp"
#include "ucmnet/fft.hpp"

using namespace ucmnet;

namespace {

Tensor64 random_image(uint64_t seed, int h, int w, int c) {
  Rng rng(seed);
  return random_uniform<double>(rng, {h, w, c}, -1.0, 1.0);
}

}  // namespace

TEST_CASE("fft2 matches the naive DFT, power-of-two and odd sizes") {
  struct Sz {
    int h, w, c;
  };
  const Sz sizes[] = {{4, 4, 1}, {8, 8, 2}, {7, 5, 2}, {13, 9, 1}, {6, 10, 3}, {1, 5, 1}, {3, 1, 2}};
  uint64_t seed = 100;
  for (const auto& s : sizes) {
    auto x = random_image(seed++, s.h, s.w, s.c);
    auto got = fft2_raw(x);
    auto want = oracles::naive_dft2(x, nullptr, false);
    CHECK(max_abs_diff(got, want) < 1e-9 * std::max(1, s.h * s.w));
  }
}

TEST_CASE("inverse transform matches the naive inverse definition") {
  auto x = random_image(7, 7, 6, 2);
  auto sp = fft2_raw(x);
  // Split packed spectrum into re/im for the oracle.
  Tensor64 re({7, 6, 2}), im({7, 6, 2});
  std::copy(sp.data.begin(), sp.data.begin() + re.numel(), re.data.begin());
  std::copy(sp.data.begin() + re.numel(), sp.data.end(), im.data.begin());
  auto got = ifft2_raw(sp);
  auto want = oracles::naive_dft2(re, &im, true);
  CHECK(max_abs_diff(got, want) < 1e-9);
}

TEST_CASE("round trip ifft2(fft2(x)) == x within 1e-9") {
  struct Sz {
    int h, w;
  };
  const Sz sizes[] = {{8, 8}, {7, 5}, {13, 9}, {16, 12}, {32, 32}};
  uint64_t seed = 40;
  for (const auto& s : sizes) {
    auto x = random_image(seed++, s.h, s.w, 3);
    auto back = ifft2_real_raw(fft2_raw(x));
    CHECK(max_abs_diff(back, x) < 1e-9);
    // Imaginary part of the inverse of a real image's spectrum vanishes.
    auto full = ifft2_raw(fft2_raw(x));
    double max_im = 0;
    for (int64_t i = x.numel(); i < full.numel(); ++i)
      max_im = std::max(max_im, std::abs(full.data[static_cast<size_t>(i)]));
    CHECK(max_im < 1e-9);
  }
}

TEST_CASE("Parseval: energy matches between domains within 1e-9") {
  const int h = 12, w = 10;
  auto x = random_image(55, h, w, 2);
  auto sp = fft2_raw(x);
  double spatial = 0;
  for (double v : x.data) spatial += v * v;
  double freq = 0;
  for (double v : sp.data) freq += v * v;
  freq /= static_cast<double>(h) * w;
  CHECK(std::abs(spatial - freq) / spatial < 1e-9);
}

TEST_CASE("fft2 is linear") {
  auto x = random_image(1, 9, 7, 1);
  auto y = random_image(2, 9, 7, 1);
  const double a = 1.7, b = -0.4;
  auto lhs = fft2_raw(add_raw(ew_unary(x, [=](double v) { return a * v; }),
                              ew_unary(y, [=](double v) { return b * v; })));
  auto fx = fft2_raw(x);
  auto fy = fft2_raw(y);
  auto rhs = add_raw(ew_unary(fx, [=](double v) { return a * v; }),
                     ew_unary(fy, [=](double v) { return b * v; }));
  CHECK(max_abs_diff(lhs, rhs) < 1e-9);
}

TEST_CASE("DC bin is the pixel sum; constant image has energy only at DC") {
  Tensor64 x = Tensor64::full({6, 4, 1}, 0.25);
  auto sp = fft2_raw(x);
  CHECK(sp.at({0, 0, 0, 0}) == doctest::Approx(0.25 * 24).epsilon(1e-12));
  CHECK(sp.at({1, 0, 0, 0}) == doctest::Approx(0.0));
  for (int ky = 0; ky < 6; ++ky)
    for (int kx = 0; kx < 4; ++kx) {
      if (ky == 0 && kx == 0) continue;
      CHECK(std::abs(sp.at({0, ky, kx, 0})) < 1e-10);
      CHECK(std::abs(sp.at({1, ky, kx, 0})) < 1e-10);
    }
}

TEST_CASE("real input gives a conjugate-symmetric spectrum") {
  const int h = 6, w = 8;
  auto x = random_image(77, h, w, 1);
  auto sp = fft2_raw(x);
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < w; ++kx) {
      const int my = (h - ky) % h, mx = (w - kx) % w;
      CHECK(sp.at({0, ky, kx, 0}) == doctest::Approx(sp.at({0, my, mx, 0})).epsilon(1e-9));
      CHECK(sp.at({1, ky, kx, 0}) == doctest::Approx(-sp.at({1, my, mx, 0})).epsilon(1e-9));
    }
}

TEST_CASE("non-finite input raises NumericError") {
  Tensor64 x = Tensor64::ones({4, 4, 1});
  x.data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fft2_raw(x), NumericError);
  Tensor64 sp({2, 2, 2, 1});
  sp.data[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ifft2_raw(sp), NumericError);
}

TEST_CASE("32-bit instantiation round-trips within float tolerance") {
  Rng rng(5);
  auto x = random_uniform<float>(rng, {16, 16, 4}, -1.0f, 1.0f);
  auto back = ifft2_real_raw(fft2_raw(x));
  CHECK(max_abs_diff(back, x) < 1e-5);
}

TEST_CASE("shape and layout errors") {
  Tensor64 bad({2, 3});
  CHECK_THROWS_AS(fft2_raw(bad), ShapeError);
  Tensor64 notpacked({3, 4, 4, 1});
  CHECK_THROWS_AS(ifft2_raw(notpacked), ShapeError);
}
