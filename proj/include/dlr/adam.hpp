#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dlr/tensor.hpp"

namespace dlr {

struct AdamState {
  Tensor m;  // first moment
  Tensor v;  // second moment
  int64_t t = 0;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  static AdamState for_param(const Tensor& p, float lr = 1e-3f) {
    AdamState s;
    s.m = Tensor::zeros(p.shape);
    s.v = Tensor::zeros(p.shape);
    s.lr = lr;
    return s;
  }
};

// Bias-corrected Adam update; t increments by exactly one per call.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(param, st.m, "adam_step");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(st.beta1), static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(st.beta2), static_cast<double>(st.t));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const float g = grad.data[i];
    st.m.data[i] = st.beta1 * st.m.data[i] + (1.0f - st.beta1) * g;
    st.v.data[i] = st.beta2 * st.v.data[i] + (1.0f - st.beta2) * g * g;
    const double mh = st.m.data[i] / bc1;
    const double vh = st.v.data[i] / bc2;
    param.data[i] -= static_cast<float>(st.lr * mh / (std::sqrt(vh) + st.eps));
  }
}

// Named trainable tensors plus their optimizer state and per-batch gradient
// accumulators. Insertion order is the persistence and update order.
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    AdamState adam;
  };
  std::vector<Entry> entries;

  int add(const std::string& name, Tensor value, float lr) {
    entries.push_back({name, std::move(value), Tensor(), AdamState()});
    Entry& e = entries.back();
    e.grad = Tensor::zeros(e.value.shape);
    e.adam = AdamState::for_param(e.value, lr);
    return static_cast<int>(entries.size()) - 1;
  }

  Entry& operator[](int i) { return entries[static_cast<size_t>(i)]; }
  const Entry& operator[](int i) const { return entries[static_cast<size_t>(i)]; }

  void zero_grad() {
    for (auto& e : entries) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0f);
  }

  // mean-of-batch step: scales accumulated gradients by 1/batch then updates
  void step(int batch) {
    const float inv = 1.0f / static_cast<float>(batch);
    for (auto& e : entries) {
      for (auto& g : e.grad.data) g *= inv;
      adam_step(e.value, e.grad, e.adam);
    }
  }
};

}  // namespace dlr
