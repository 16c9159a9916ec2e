#pragma once

// Training loop: one Adam step per batch, input-only Gaussian noise, memory
// bank updates after the optimizer, and a JSON-lines metric log. Everything
// is driven by one seeded RNG whose state rides along in checkpoints, so a
// resumed 64-bit run reproduces the uninterrupted one bit for bit.

#include <fstream>

#include "json.hpp"
#include "ucmnet/checkpoint.hpp"
#include "ucmnet/datasim.hpp"
#include "ucmnet/loss.hpp"
#include "ucmnet/metrics.hpp"

namespace ucmnet {

template <typename T>
struct TrainConfig {
  AdamConfig<T> adam;
  LossConfig loss;
  T noise_std = T(1e-3);  // added to inputs only, never to ground truth
  int batch_size = 4;
  int crop_h = 64, crop_w = 64;  // random crop window when samples are larger
  uint64_t seed = 0;

  void validate() const {
    adam.validate();
    loss.validate();
    UCM_CHECK_NUMERIC(noise_std >= 0, "noise std must be >= 0");
    UCM_CHECK_SHAPE(batch_size >= 1, "batch size must be >= 1");
    UCM_CHECK_SHAPE(crop_h >= 1 && crop_w >= 1, "crop window must be positive");
  }
};

template <typename T>
struct StepRecord {
  int64_t step = 0;  // 1-based, after the update
  T lr = T(0);
  T loss_total = T(0);
  T loss_hf = T(0);
  T loss_fidelity = T(0);
  T grad_norm = T(0);
};

template <typename T>
void append_metric_line(std::ostream& out, const StepRecord<T>& r) {
  nlohmann::json j{{"step", r.step},
                   {"lr", static_cast<double>(r.lr)},
                   {"loss_total", static_cast<double>(r.loss_total)},
                   {"loss_hf", static_cast<double>(r.loss_hf)},
                   {"loss_fidelity", static_cast<double>(r.loss_fidelity)},
                   {"grad_norm", static_cast<double>(r.grad_norm)}};
  out << j.dump() << "\n";
}

template <typename T>
class Trainer {
 public:
  Trainer(const ModelConfig& mc, const TrainConfig<T>& tc)
      : cfg_(tc), model_(mc, tc.seed), opt_(model_.store, tc.adam), rng_(mix_seed(tc.seed, 0x7261696eull)) {
    cfg_.validate();
  }

  Model<T>& model() { return model_; }
  const Model<T>& model() const { return model_; }
  AdamState<T>& opt() { return opt_; }
  Rng& rng() { return rng_; }
  int64_t step() const { return step_; }

  // Draws batch_size samples (with replacement) and random crops when the
  // stored images exceed the crop window.
  std::vector<PairedSample<T>> sample_batch(const std::vector<PairedSample<T>>& pool) {
    UCM_CHECK_SHAPE(!pool.empty(), "cannot sample from an empty pool");
    std::vector<PairedSample<T>> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const auto& src = pool[static_cast<size_t>(rng_.uniform_int(static_cast<int64_t>(pool.size())))];
      batch.push_back(crop(src));
    }
    return batch;
  }

  StepRecord<T> train_step(const std::vector<PairedSample<T>>& batch) {
    UCM_CHECK_SHAPE(!batch.empty(), "train_step needs a non-empty batch");

    ad::Tape<T> tape;
    const auto vars = bind_params(tape, model_.store);

    ad::Var<T> loss_sum;
    T hf_sum = 0, fid_sum = 0;
    std::vector<std::vector<TensorT<T>>> bank_features;  // per sample, per decode stage
    for (const auto& sample : batch) {
      UCM_CHECK_SHAPE(sample.clean.shape == sample.degraded.shape,
                      "sample images must share a shape");
      TensorT<T> input = sample.degraded;
      if (cfg_.noise_std > 0)
        for (auto& v : input.data) v += cfg_.noise_std * static_cast<T>(rng_.normal());

      const auto fr = model_.forward(vars, ad::constant(tape, input));
      const auto tl = total_loss(fr, sample.clean, cfg_.loss);
      loss_sum = loss_sum.tape ? ad::add(loss_sum, tl.value) : tl.value;
      hf_sum += tl.hf;
      fid_sum += tl.fidelity;

      std::vector<TensorT<T>> feats;
      for (const auto& st : fr.stages) feats.push_back(st.f_u.val());
      bank_features.push_back(std::move(feats));
    }
    const T inv_batch = T(1) / static_cast<T>(batch.size());
    const auto mean_loss = ad::mul_scalar(loss_sum, inv_batch);

    const auto grads = ad::gradients(mean_loss, vars);
    T sq = 0;
    for (const auto& g : grads)
      for (T v : g.data) sq += v * v;

    StepRecord<T> rec;
    rec.lr = opt_.lr_at(opt_.step);
    adam_step(model_.store, grads, opt_);

    // memory updates run after the optimizer, one raster pass per sample
    const auto banks = model_.banks();
    for (const auto& feats : bank_features) {
      UCM_CHECK_SHAPE(feats.size() == banks.size(), "one feature map per bank");
      for (size_t k = 0; k < banks.size(); ++k) (void)memory_update(*banks[k], feats[k]);
    }

    ++step_;
    rec.step = step_;
    rec.loss_total = mean_loss.val().data[0];
    rec.loss_hf = hf_sum * inv_batch;
    rec.loss_fidelity = fid_sum * inv_batch;
    rec.grad_norm = std::sqrt(sq);
    return rec;
  }

  void save(const std::string& path) const { save_checkpoint(path, model_, opt_, rng_, step_); }
  void load(const std::string& path) { step_ = load_checkpoint(path, model_, opt_, rng_); }

 private:
  PairedSample<T> crop(const PairedSample<T>& s) {
    const int h = s.clean.shape[0], w = s.clean.shape[1];
    UCM_CHECK_SHAPE(h >= cfg_.crop_h && w >= cfg_.crop_w,
                    "sample " << shape_str(s.clean.shape) << " smaller than crop " << cfg_.crop_h << "x"
                              << cfg_.crop_w);
    if (h == cfg_.crop_h && w == cfg_.crop_w) return s;
    const int y0 = static_cast<int>(rng_.uniform_int(h - cfg_.crop_h + 1));
    const int x0 = static_cast<int>(rng_.uniform_int(w - cfg_.crop_w + 1));
    PairedSample<T> out;
    out.spec_id = s.spec_id;
    out.clean = TensorT<T>({cfg_.crop_h, cfg_.crop_w, 3});
    out.degraded = TensorT<T>({cfg_.crop_h, cfg_.crop_w, 3});
    for (int i = 0; i < cfg_.crop_h; ++i)
      for (int j = 0; j < cfg_.crop_w; ++j)
        for (int c = 0; c < 3; ++c) {
          out.clean.at({i, j, c}) = s.clean.at({y0 + i, x0 + j, c});
          out.degraded.at({i, j, c}) = s.degraded.at({y0 + i, x0 + j, c});
        }
    return out;
  }

  TrainConfig<T> cfg_;
  Model<T> model_;
  AdamState<T> opt_;
  Rng rng_;
  int64_t step_ = 0;
};

struct EvalResult {
  double mean_psnr = 0;
  double mean_ssim = 0;
};

// Restores each degraded image (no noise, output clamped to [0,1]) and
// averages PSNR/SSIM against the clean counterpart.
template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<PairedSample<T>>& samples) {
  UCM_CHECK_SHAPE(!samples.empty(), "evaluate needs at least one sample");
  EvalResult out;
  for (const auto& s : samples) {
    ad::Tape<T> tape;
    const auto vars = bind_params(tape, model.store);
    const auto fr = model.forward(vars, ad::constant(tape, s.degraded));
    TensorT<T> restored = fr.restored.val();
    for (auto& v : restored.data) v = std::min(T(1), std::max(T(0), v));
    const auto a = cast_tensor<double>(restored);
    const auto b = cast_tensor<double>(s.clean);
    out.mean_psnr += psnr(a, b);
    out.mean_ssim += ssim(a, b);
  }
  out.mean_psnr /= static_cast<double>(samples.size());
  out.mean_ssim /= static_cast<double>(samples.size());
  return out;
}

}  // namespace ucmnet
