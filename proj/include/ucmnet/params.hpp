#pragma once

// Ordered, named parameter storage shared by the model blocks, the optimizer
// and the checkpoint format. Blocks hold integer ids into the store; each
// forward pass binds every entry onto a fresh tape as a gradient-tracked leaf,
// so ids double as indices into the bound Var list and into the gradient
// vector returned for a step.

#include <string>
#include <vector>

#include "ucmnet/autodiff.hpp"
#include "ucmnet/tensor.hpp"

namespace ucmnet {

template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    TensorT<T> value;
  };
  std::vector<Entry> entries;

  int add(std::string name, TensorT<T> value) {
    for (const auto& e : entries)
      UCM_CHECK(e.name != name, ShapeError, "duplicate parameter name " << name);
    entries.push_back(Entry{std::move(name), std::move(value)});
    return static_cast<int>(entries.size()) - 1;
  }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

// Bind every entry as a tracked leaf, in store order.
template <typename T>
std::vector<ad::Var<T>> bind_params(ad::Tape<T>& tape, const ParamStore<T>& store) {
  std::vector<ad::Var<T>> vars;
  vars.reserve(store.entries.size());
  for (const auto& e : store.entries) vars.push_back(ad::param(tape, e.value));
  return vars;
}

// ---------------------------------------------------------------------------
// Weight initializers
// ---------------------------------------------------------------------------

// Fan-in scaled Gaussian for conv weights [kh,kw,Cin,Cout].
template <typename T>
TensorT<T> init_conv(Rng& rng, int kh, int kw, int cin, int cout) {
  const double std = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cin));
  return random_normal<T>(rng, {kh, kw, cin, cout}, T(0), static_cast<T>(std));
}

// Transposed-conv weight [kh,kw,Cout,Cin]; fan-in is the input channel count.
template <typename T>
TensorT<T> init_conv_transpose(Rng& rng, int kh, int kw, int cout, int cin) {
  const double std = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cin));
  return random_normal<T>(rng, {kh, kw, cout, cin}, T(0), static_cast<T>(std));
}

template <typename T>
TensorT<T> init_depthwise(Rng& rng, int kh, int kw, int c) {
  const double std = std::sqrt(2.0 / (static_cast<double>(kh) * kw));
  return random_normal<T>(rng, {kh, kw, c}, T(0), static_cast<T>(std));
}

// Xavier-scaled square projection [C,C] for attention weights.
template <typename T>
TensorT<T> init_projection(Rng& rng, int c) {
  const double std = std::sqrt(1.0 / static_cast<double>(c));
  return random_normal<T>(rng, {c, c}, T(0), static_cast<T>(std));
}

}  // namespace ucmnet
