#pragma once

// Synthetic degradation simulator producing paired (clean, degraded) images.
// The degradation pipeline is
//
//   degraded = clamp( t * gain (x) (clean (*) psf) + N(0, sigma_d), 0, 1 )
//
// with reflect-padded convolution so a normalized PSF preserves the mean of
// constant regions. An optional second, wider PSF applies in the border zone
// (outside the central half of each axis) to model location-dependent blur.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ucmnet/manifest.hpp"
#include "ucmnet/png_io.hpp"
#include "ucmnet/tensor.hpp"

namespace ucmnet {

enum class PsfKind { kGaussian, kAiryLike, kTwoLobe };

inline TensorT<double> make_psf(PsfKind kind, int size, double width) {
  UCM_CHECK_SHAPE(size >= 3 && size % 2 == 1, "psf size must be odd and >= 3, got " << size);
  UCM_CHECK_NUMERIC(width > 0, "psf width must be positive, got " << width);
  const int r = size / 2;
  TensorT<double> psf({size, size});
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double y = i - r, x = j - r;
      const double rad = std::sqrt(x * x + y * y);
      double v = 0;
      switch (kind) {
        case PsfKind::kGaussian:
          v = std::exp(-0.5 * (x * x + y * y) / (width * width));
          break;
        case PsfKind::kAiryLike: {
          // central disc with decaying rings, rad=0 limit of 2*J1(u)/u is 1
          const double u = 3.8317 * rad / width;  // first zero lands at rad==width
          const double a = u < 1e-9 ? 1.0 : 2.0 * std::cyl_bessel_j(1, u) / u;
          v = a * a;
          break;
        }
        case PsfKind::kTwoLobe: {
          // central peak plus two symmetric horizontal side-lobes
          const int off = std::min(r, std::max(1, static_cast<int>(std::lround(2.0 * width))));
          const double w2 = 0.5 * width;
          v = std::exp(-0.5 * (x * x + y * y) / (width * width)) +
              0.3 * std::exp(-0.5 * ((x - off) * (x - off) + y * y) / (w2 * w2)) +
              0.3 * std::exp(-0.5 * ((x + off) * (x + off) + y * y) / (w2 * w2));
          break;
        }
      }
      psf.at({i, j}) = v;
    }
  double sum = 0;
  for (double v : psf.data) sum += v;
  UCM_CHECK_NUMERIC(std::isfinite(sum) && sum > 0, "psf mass must be positive and finite");
  for (auto& v : psf.data) v /= sum;
  return psf;
}

struct DegradationSpec {
  TensorT<double> psf;  // [k,k], nonnegative, sums to 1
  std::optional<TensorT<double>> border_psf;  // wider kernel for the border zone
  double transmittance = 1.0;                 // t in (0,1]
  std::array<double, 3> gain{1.0, 1.0, 1.0};  // per-channel color shift
  double noise_std = 0.0;
  uint64_t seed = 0;

  void validate() const {
    UCM_CHECK_SHAPE(psf.rank() == 2 && psf.shape[0] == psf.shape[1] && psf.shape[0] % 2 == 1 && psf.shape[0] >= 3,
                    "psf must be odd square [k,k] with k >= 3, got " << shape_str(psf.shape));
    auto check_kernel = [](const TensorT<double>& k, const char* which) {
      double sum = 0;
      for (double v : k.data) {
        UCM_CHECK_NUMERIC(v >= 0, which << " has a negative tap");
        sum += v;
      }
      UCM_CHECK_NUMERIC(std::abs(sum - 1.0) <= 1e-9, which << " must sum to 1, got " << sum);
    };
    check_kernel(psf, "psf");
    if (border_psf) {
      UCM_CHECK_SHAPE(border_psf->rank() == 2 && border_psf->shape[0] == border_psf->shape[1] &&
                          border_psf->shape[0] % 2 == 1 && border_psf->shape[0] >= 3,
                      "border psf must be odd square [k,k] with k >= 3, got " << shape_str(border_psf->shape));
      check_kernel(*border_psf, "border psf");
    }
    UCM_CHECK_NUMERIC(transmittance > 0 && transmittance <= 1.0,
                      "transmittance must lie in (0,1], got " << transmittance);
    for (double g : gain) UCM_CHECK_NUMERIC(g >= 0 && std::isfinite(g), "gain must be finite and >= 0");
    UCM_CHECK_NUMERIC(noise_std >= 0, "noise std must be >= 0, got " << noise_std);
  }
};

inline DegradationSpec poled_like_spec(uint64_t seed = 0) {
  DegradationSpec s;
  s.psf = make_psf(PsfKind::kGaussian, 7, 1.2);
  s.transmittance = 0.03;
  s.gain = {0.80, 1.00, 1.15};
  s.noise_std = 0.02;
  s.seed = seed;
  return s;
}

inline DegradationSpec toled_like_spec(uint64_t seed = 0) {
  DegradationSpec s;
  s.psf = make_psf(PsfKind::kGaussian, 9, 1.8);
  s.border_psf = make_psf(PsfKind::kGaussian, 9, 3.0);
  s.transmittance = 0.20;
  s.gain = {0.95, 1.00, 1.05};
  s.noise_std = 0.01;
  s.seed = seed;
  return s;
}

inline DegradationSpec synth_like_spec(uint64_t seed = 0) {
  DegradationSpec s;
  s.psf = make_psf(PsfKind::kTwoLobe, 9, 1.5);
  s.transmittance = 0.50;
  s.gain = {1.00, 1.00, 1.00};
  s.noise_std = 0.005;
  s.seed = seed;
  return s;
}

namespace datasimdetail {

// reflect-padded depthwise blur of [H,W,3] with a single [k,k] kernel
inline TensorT<double> blur(const TensorT<double>& img, const TensorT<double>& kernel) {
  const int k = kernel.shape[0], c = img.shape[2];
  TensorT<double> w({k, k, c});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int ch = 0; ch < c; ++ch) w.at({i, j, ch}) = kernel.at({i, j});
  const TensorT<double> padded = pad2d_raw(img, k / 2, PadMode::kReflect);
  return depthwise_conv2d_valid_raw(padded, w, 1);
}

}  // namespace datasimdetail

inline TensorT<double> degrade(const TensorT<double>& clean, const DegradationSpec& spec) {
  UCM_CHECK_SHAPE(clean.rank() == 3 && clean.shape[2] == 3,
                  "degrade expects [H,W,3], got " << shape_str(clean.shape));
  spec.validate();
  for (double v : clean.data)
    UCM_CHECK_NUMERIC(v >= 0 && v <= 1.0, "clean image must lie in [0,1], saw " << v);

  const int h = clean.shape[0], w = clean.shape[1];
  TensorT<double> blurred = datasimdetail::blur(clean, spec.psf);
  if (spec.border_psf) {
    // border zone = everything outside the central half of each axis
    const TensorT<double> wide = datasimdetail::blur(clean, *spec.border_psf);
    const int y0 = h / 4, y1 = h - h / 4, x0 = w / 4, x1 = w - w / 4;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        if (i < y0 || i >= y1 || j < x0 || j >= x1)
          for (int ch = 0; ch < 3; ++ch) blurred.at({i, j, ch}) = wide.at({i, j, ch});
  }

  Rng rng(spec.seed);
  TensorT<double> out({h, w, 3});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int ch = 0; ch < 3; ++ch) {
        double v = spec.transmittance * spec.gain[static_cast<size_t>(ch)] * blurred.at({i, j, ch});
        if (spec.noise_std > 0) v += spec.noise_std * rng.normal();
        out.at({i, j, ch}) = std::min(1.0, std::max(0.0, v));
      }
  return out;
}

// Procedural clean image: a smooth corner-to-corner gradient, a handful of
// contrasting rectangles, and short 1px strokes for text-like high frequency.
inline TensorT<double> procedural_image(int h, int w, uint64_t seed) {
  UCM_CHECK_SHAPE(h >= 16 && w >= 16, "procedural images need h,w >= 16, got " << h << "x" << w);
  Rng rng(seed);

  TensorT<double> img({h, w, 3});
  std::array<double, 3> c0{}, c1{};
  for (int k = 0; k < 3; ++k) {
    c0[static_cast<size_t>(k)] = rng.uniform(0.15, 0.85);
    c1[static_cast<size_t>(k)] = rng.uniform(0.15, 0.85);
  }
  const double mix = rng.uniform(0.25, 0.75);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double t = mix * i / (h - 1) + (1.0 - mix) * j / (w - 1);
      for (int k = 0; k < 3; ++k)
        img.at({i, j, k}) = c0[static_cast<size_t>(k)] + (c1[static_cast<size_t>(k)] - c0[static_cast<size_t>(k)]) * t;
    }

  // rectangles, filled with a color pushed >= 0.35 away from the underlying
  // background so their edges carry strong second differences
  const int nrect = 3 + static_cast<int>(rng.uniform_int(4));
  for (int n = 0; n < nrect; ++n) {
    const int y0 = 1 + static_cast<int>(rng.uniform_int(h - 8));
    const int x0 = 1 + static_cast<int>(rng.uniform_int(w - 8));
    const int y1 = std::min(h - 1, y0 + 3 + static_cast<int>(rng.uniform_int(h / 2)));
    const int x1 = std::min(w - 1, x0 + 3 + static_cast<int>(rng.uniform_int(w / 2)));
    std::array<double, 3> col{};
    for (int k = 0; k < 3; ++k) {
      const double base = img.at({y0, x0, k});
      const double push = rng.uniform(0.35, 0.5);
      col[static_cast<size_t>(k)] = base < 0.5 ? base + push : base - push;
    }
    for (int i = y0; i < y1; ++i)
      for (int j = x0; j < x1; ++j)
        for (int k = 0; k < 3; ++k) img.at({i, j, k}) = col[static_cast<size_t>(k)];
  }

  // strokes: short near-black or near-white 1px polyline segments
  const int nstroke = 4 + static_cast<int>(rng.uniform_int(5));
  for (int n = 0; n < nstroke; ++n) {
    int y = 1 + static_cast<int>(rng.uniform_int(h - 2));
    int x = 1 + static_cast<int>(rng.uniform_int(w - 2));
    int dy = static_cast<int>(rng.uniform_int(3)) - 1;
    int dx = static_cast<int>(rng.uniform_int(3)) - 1;
    if (dy == 0 && dx == 0) dx = 1;
    const double shade = rng.uniform() < 0.5 ? 0.02 : 0.98;
    const int len = 5 + static_cast<int>(rng.uniform_int(11));
    for (int s = 0; s < len; ++s) {
      if (y < 1 || y >= h - 1 || x < 1 || x >= w - 1) break;
      for (int k = 0; k < 3; ++k) img.at({y, x, k}) = shade;
      y += dy;
      x += dx;
    }
  }

  for (auto& v : img.data) v = std::min(1.0, std::max(0.0, v));
  return img;
}

template <typename T>
struct PairedSample {
  TensorT<T> clean;
  TensorT<T> degraded;
  std::string spec_id;
};

// Loads every pair a manifest lists, resolving paths relative to the
// manifest's own directory.
template <typename T>
std::vector<PairedSample<T>> load_pairs(const std::string& manifest_path) {
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<PairedSample<T>> out;
  for (const auto& e : read_manifest(manifest_path)) {
    PairedSample<T> s;
    s.clean = cast_tensor<T>(read_png((base / e.clean_path).string()));
    s.degraded = cast_tensor<T>(read_png((base / e.degraded_path).string()));
    UCM_CHECK_SHAPE(s.clean.shape == s.degraded.shape,
                    "pair " << e.index << ": clean " << shape_str(s.clean.shape) << " vs degraded "
                            << shape_str(s.degraded.shape));
    s.spec_id = std::to_string(e.index);
    out.push_back(std::move(s));
  }
  return out;
}

struct DatasetConfig {
  int count = 0;
  int height = 64;
  int width = 64;
  uint64_t seed = 0;
  std::string out_dir;
  std::string image_dir;  // empty selects the procedural source
};

// Writes `count` 16-bit PNG pairs plus manifest.tsv into out_dir. Every
// sample's randomness derives from (seed, index), so outputs are independent
// of generation order and byte-identical across reruns.
inline std::vector<ManifestEntry> generate_dataset(const DatasetConfig& cfg, const DegradationSpec& spec,
                                                   const std::vector<std::string>& extra_header = {}) {
  UCM_CHECK_SHAPE(cfg.count > 0, "dataset count must be positive, got " << cfg.count);
  UCM_CHECK(!cfg.out_dir.empty(), IoError, "dataset out_dir must be set");
  spec.validate();

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create dataset dir " + cfg.out_dir + ": " + ec.message());

  std::vector<std::string> sources;
  if (!cfg.image_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(cfg.image_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") sources.push_back(entry.path().string());
    }
    std::sort(sources.begin(), sources.end());
    UCM_CHECK(!sources.empty(), IoError, "no .png files found in " << cfg.image_dir);
  }

  std::vector<ManifestEntry> entries;
  entries.reserve(static_cast<size_t>(cfg.count));
  for (int idx = 0; idx < cfg.count; ++idx) {
    TensorT<double> clean;
    if (sources.empty()) {
      clean = procedural_image(cfg.height, cfg.width, mix_seed(cfg.seed, static_cast<uint64_t>(idx)));
    } else {
      const TensorT<double> full = read_png(sources[static_cast<size_t>(idx) % sources.size()]);
      UCM_CHECK_SHAPE(full.shape[0] >= cfg.height && full.shape[1] >= cfg.width,
                      "source image " << shape_str(full.shape) << " smaller than requested " << cfg.height << "x"
                                      << cfg.width);
      clean = TensorT<double>({cfg.height, cfg.width, 3});
      for (int i = 0; i < cfg.height; ++i)
        for (int j = 0; j < cfg.width; ++j)
          for (int k = 0; k < 3; ++k) clean.at({i, j, k}) = full.at({i, j, k});
    }

    DegradationSpec per_sample = spec;
    per_sample.seed = mix_seed(spec.seed ^ 0x517cc1b727220a95ull, static_cast<uint64_t>(idx));
    const TensorT<double> deg = degrade(clean, per_sample);

    char clean_name[32], deg_name[32];
    std::snprintf(clean_name, sizeof clean_name, "clean_%04d.png", idx);
    std::snprintf(deg_name, sizeof deg_name, "degraded_%04d.png", idx);
    write_png((fs::path(cfg.out_dir) / clean_name).string(), clean, 16);
    write_png((fs::path(cfg.out_dir) / deg_name).string(), deg, 16);
    entries.push_back({idx, clean_name, deg_name});
  }

  std::vector<std::string> header = {"paired restoration samples",
                                     "index<TAB>clean<TAB>degraded, paths relative to this file"};
  header.insert(header.end(), extra_header.begin(), extra_header.end());
  write_manifest((fs::path(cfg.out_dir) / "manifest.tsv").string(), entries, header);
  return entries;
}

}  // namespace ucmnet
