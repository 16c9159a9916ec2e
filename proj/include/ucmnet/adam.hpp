#pragma once

// Bias-corrected Adam with a linear learning-rate decay:
//
//   lr(k) = base_lr * (1 - k / total_steps)   for the (k+1)-th step,
//
// so the first step uses the full rate and the rate reaches exactly zero
// once `total_steps` steps have completed.

#include <cmath>
#include <string>
#include <vector>

#include "ucmnet/params.hpp"

namespace ucmnet {

template <typename T>
struct AdamConfig {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T base_lr = T(2e-4);
  int64_t total_steps = 1;

  void validate() const {
    UCM_CHECK_NUMERIC(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                      "adam betas must lie in [0,1)");
    UCM_CHECK_NUMERIC(eps > 0 && base_lr >= 0, "adam eps must be positive, lr nonnegative");
    UCM_CHECK_NUMERIC(total_steps >= 1, "total_steps must be >= 1, got " << total_steps);
  }
};

template <typename T>
struct AdamState {
  AdamConfig<T> cfg;
  int64_t step = 0;  // completed steps
  std::vector<TensorT<T>> m, v;

  AdamState() = default;
  AdamState(const ParamStore<T>& store, const AdamConfig<T>& config) : cfg(config) {
    cfg.validate();
    m.reserve(store.entries.size());
    v.reserve(store.entries.size());
    for (const auto& e : store.entries) {
      m.push_back(TensorT<T>::zeros(e.value.shape));
      v.push_back(TensorT<T>::zeros(e.value.shape));
    }
  }

  T lr_at(int64_t completed) const {
    const T frac = T(1) - static_cast<T>(completed) / static_cast<T>(cfg.total_steps);
    return cfg.base_lr * std::max(T(0), frac);
  }
};

template <typename T>
void adam_step(ParamStore<T>& store, const std::vector<TensorT<T>>& grads, AdamState<T>& state) {
  UCM_CHECK_SHAPE(grads.size() == store.entries.size() && state.m.size() == store.entries.size(),
                  "adam_step: " << grads.size() << " grads for " << store.entries.size() << " params");
  const T lr = state.lr_at(state.step);
  ++state.step;
  const T bc1 = T(1) - std::pow(state.cfg.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(state.cfg.beta2, static_cast<T>(state.step));

  for (size_t i = 0; i < grads.size(); ++i) {
    auto& entry = store.entries[i];
    const auto& g = grads[i];
    UCM_CHECK_SHAPE(g.shape == entry.value.shape,
                    "adam_step: grad shape " << shape_str(g.shape) << " for param '" << entry.name << "' "
                                             << shape_str(entry.value.shape));
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    for (size_t j = 0; j < g.data.size(); ++j) {
      const T gj = g.data[j];
      UCM_CHECK_NUMERIC(std::isfinite(gj), "non-finite gradient for parameter '" << entry.name << "'");
      mi.data[j] = state.cfg.beta1 * mi.data[j] + (T(1) - state.cfg.beta1) * gj;
      vi.data[j] = state.cfg.beta2 * vi.data[j] + (T(1) - state.cfg.beta2) * gj * gj;
      const T mhat = mi.data[j] / bc1;
      const T vhat = vi.data[j] / bc2;
      entry.value.data[j] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

}  // namespace ucmnet
