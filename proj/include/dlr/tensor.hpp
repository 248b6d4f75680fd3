#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dlr {

inline int64_t shape_count(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::runtime_error("tensor: non-positive extent in shape");
    n *= e;
  }
  return n;
}

// Dense row-major float32 array. Reductions over its contents accumulate in
// double; the stored values are always float.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(static_cast<size_t>(shape_count(shape)), 0.0f) {}
  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_count(shape))
      throw std::runtime_error("tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data.size()); }

  float& at(int i) { return data[static_cast<size_t>(i)]; }
  const float& at(int i) const { return data[static_cast<size_t>(i)]; }
  // (row, col) into a 2-D tensor
  float& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const float& at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  // (c, h, w) into a 3-D tensor
  float& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const float& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double sum64() const {
    double s = 0.0;
    for (float v : data) s += v;
    return s;
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b))
    throw std::runtime_error(std::string(who) + ": shape mismatch " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
}

// Deterministic generator with pinned output mappings, so that a seed fixes
// every sampled value bit-for-bit regardless of the standard library.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // splitmix64
  uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

  // uniform in [0, 1) with 24-bit resolution
  float uniform01() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }
  // uniform integer in [0, n)
  int below(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  // Box-Muller; one value per call, deterministic
  float normal() {
    float u1 = uniform01(), u2 = uniform01();
    if (u1 < 1e-12f) u1 = 1e-12f;
    return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.28318530717958647692f * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = below(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  Rng fork(uint64_t stream) { return Rng(next_u64() ^ (stream * 0xd1342543de82ef95ull + 1)); }
};

inline Tensor random_uniform(Rng& rng, std::vector<int> shape, float lo, float hi) {
  Tensor t(std::move(shape));
  for (auto& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out))
inline Tensor glorot_uniform(Rng& rng, std::vector<int> shape, int fan_in, int fan_out) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  return random_uniform(rng, std::move(shape), -bound, bound);
}

}  // namespace dlr
