#pragma once

// Neural primitives as pure tensor-in/tensor-out kernels. The gradient tape
// in autodiff.hpp wraps these; frozen-weight inference calls them directly.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "dlr/tensor.hpp"

namespace dlr {

// Half-wave rectification: (x + |x|) / 2 = max(x, 0).
inline float half_wave(float x) { return x > 0.0f ? x : 0.0f; }

// -------- dilated 1-D convolution --------
// x: (C_in, T), w: (C_out, C_in, K). Cross-correlation, left-anchored:
// out[c, t] = sum_{i,j} w[c,i,j] * x[i, t + j*d], reading zeros past the
// right edge so the output keeps length T.

inline void check_conv1d(const Tensor& x, const Tensor& w, int d) {
  if (x.ndim() != 2) throw std::runtime_error("conv1d_dilated: input must be (C_in, T)");
  if (w.ndim() != 3) throw std::runtime_error("conv1d_dilated: kernel must be (C_out, C_in, K)");
  if (w.dim(1) != x.dim(0))
    throw std::runtime_error("conv1d_dilated: kernel input channels " + std::to_string(w.dim(1)) +
                             " do not match input channels " + std::to_string(x.dim(0)));
  if (d < 1) throw std::runtime_error("conv1d_dilated: dilation must be >= 1");
}

inline Tensor conv1d_dilated(const Tensor& x, const Tensor& w, int d) {
  check_conv1d(x, w, d);
  const int cin = x.dim(0), t_len = x.dim(1);
  const int cout = w.dim(0), k = w.dim(2);
  Tensor out({cout, t_len});
  for (int c = 0; c < cout; ++c) {
    float* o = &out.at(c, 0);
    for (int i = 0; i < cin; ++i) {
      const float* xi = &x.at(i, 0);
      const float* wc = &w.at(c, i, 0);
      for (int j = 0; j < k; ++j) {
        const float wj = wc[j];
        if (wj == 0.0f) continue;
        const int off = j * d;
        const int valid = std::max(0, t_len - off);
        for (int t = 0; t < valid; ++t) o[t] += wj * xi[t + off];
      }
    }
  }
  return out;
}

inline void conv1d_dilated_grad_x(const Tensor& g, const Tensor& w, int d, Tensor& gx) {
  const int cin = gx.dim(0), t_len = gx.dim(1);
  const int cout = w.dim(0), k = w.dim(2);
  for (int c = 0; c < cout; ++c) {
    const float* gc = &g.at(c, 0);
    for (int i = 0; i < cin; ++i) {
      float* gxi = &gx.at(i, 0);
      for (int j = 0; j < k; ++j) {
        const float wj = w.at(c, i, j);
        if (wj == 0.0f) continue;
        const int off = j * d;
        const int valid = std::max(0, t_len - off);
        for (int t = 0; t < valid; ++t) gxi[t + off] += wj * gc[t];
      }
    }
  }
}

inline void conv1d_dilated_grad_w(const Tensor& g, const Tensor& x, int d, Tensor& gw) {
  const int cin = x.dim(0), t_len = x.dim(1);
  const int cout = gw.dim(0), k = gw.dim(2);
  for (int c = 0; c < cout; ++c) {
    const float* gc = &g.at(c, 0);
    for (int i = 0; i < cin; ++i) {
      const float* xi = &x.at(i, 0);
      for (int j = 0; j < k; ++j) {
        const int off = j * d;
        const int valid = std::max(0, t_len - off);
        double acc = 0.0;
        for (int t = 0; t < valid; ++t) acc += static_cast<double>(gc[t]) * xi[t + off];
        gw.at(c, i, j) += static_cast<float>(acc);
      }
    }
  }
}

// -------- 2-D convolution, zero same-padding --------
// x: (C_in, H, W), w: (C_out, C_in, Kh, Kw). For even kernel extents the
// leading side gets the smaller pad: pad = (K - 1) / 2 rounded down.

inline void check_conv2d(const Tensor& x, const Tensor& w) {
  if (x.ndim() != 3) throw std::runtime_error("conv2d: input must be (C_in, H, W)");
  if (w.ndim() != 4) throw std::runtime_error("conv2d: kernel must be (C_out, C_in, Kh, Kw)");
  if (w.dim(1) != x.dim(0))
    throw std::runtime_error("conv2d: kernel input channels " + std::to_string(w.dim(1)) +
                             " do not match input channels " + std::to_string(x.dim(0)));
}

inline Tensor conv2d(const Tensor& x, const Tensor& w) {
  check_conv2d(x, w);
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  Tensor out({cout, h, wd});
  for (int c = 0; c < cout; ++c) {
    for (int i = 0; i < cin; ++i) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const float wv = w.data[((static_cast<size_t>(c) * cin + i) * kh + ky) * kw + kx];
          if (wv == 0.0f) continue;
          const int dy = ky - ph, dx = kx - pw;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          for (int y = y0; y < y1; ++y) {
            float* orow = &out.at(c, y, 0);
            const float* xrow = &x.at(i, y + dy, 0);
            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx + dx];
          }
        }
      }
    }
  }
  return out;
}

inline void conv2d_grad_x(const Tensor& g, const Tensor& w, Tensor& gx) {
  const int cin = gx.dim(0), h = gx.dim(1), wd = gx.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  for (int c = 0; c < cout; ++c) {
    for (int i = 0; i < cin; ++i) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const float wv = w.data[((static_cast<size_t>(c) * cin + i) * kh + ky) * kw + kx];
          if (wv == 0.0f) continue;
          const int dy = ky - ph, dx = kx - pw;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          for (int y = y0; y < y1; ++y) {
            const float* grow = &g.at(c, y, 0);
            float* gxrow = &gx.at(i, y + dy, 0);
            for (int xx = x0; xx < x1; ++xx) gxrow[xx + dx] += wv * grow[xx];
          }
        }
      }
    }
  }
}

inline void conv2d_grad_w(const Tensor& g, const Tensor& x, Tensor& gw) {
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = gw.dim(0), kh = gw.dim(2), kw = gw.dim(3);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  for (int c = 0; c < cout; ++c) {
    for (int i = 0; i < cin; ++i) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const int dy = ky - ph, dx = kx - pw;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const float* grow = &g.at(c, y, 0);
            const float* xrow = &x.at(i, y + dy, 0);
            for (int xx = x0; xx < x1; ++xx)
              acc += static_cast<double>(grow[xx]) * xrow[xx + dx];
          }
          gw.data[((static_cast<size_t>(c) * cin + i) * kh + ky) * kw + kx] +=
              static_cast<float>(acc);
        }
      }
    }
  }
}

// -------- batch normalization --------
// Channel axis is axis 0; statistics are taken over all remaining axes.
// Train mode also folds the batch statistics into the running averages with
// momentum 0.99. Inference normalizes with the running statistics.

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.99f;

struct BnRunning {
  Tensor mean;  // (C)
  Tensor var;   // (C)
};

enum class BnMode { train, infer };

struct BnSaved {
  std::vector<float> mean;
  std::vector<float> inv_std;
};

inline int64_t bn_inner_count(const Tensor& x) {
  if (x.ndim() < 1) throw std::runtime_error("batch_norm: input needs a channel axis");
  int64_t inner = 1;
  for (int i = 1; i < x.ndim(); ++i) inner *= x.dim(i);
  if (inner == 0 || x.size() == 0) throw std::runtime_error("batch_norm: zero-size channel");
  return inner;
}

inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BnRunning* running, BnMode mode, BnSaved* saved = nullptr) {
  const int c = x.dim(0);
  const int64_t inner = bn_inner_count(x);
  if (gamma.size() != c || beta.size() != c)
    throw std::runtime_error("batch_norm: gamma/beta must have one entry per channel");
  Tensor out(x.shape);
  if (saved) {
    saved->mean.assign(static_cast<size_t>(c), 0.0f);
    saved->inv_std.assign(static_cast<size_t>(c), 0.0f);
  }
  for (int ch = 0; ch < c; ++ch) {
    const float* xc = &x.data[static_cast<size_t>(ch) * inner];
    float* oc = &out.data[static_cast<size_t>(ch) * inner];
    float mean, inv_std;
    if (mode == BnMode::train) {
      double s = 0.0;
      for (int64_t i = 0; i < inner; ++i) s += xc[i];
      mean = static_cast<float>(s / static_cast<double>(inner));
      double v = 0.0;
      for (int64_t i = 0; i < inner; ++i) {
        const double d = xc[i] - mean;
        v += d * d;
      }
      const float var = static_cast<float>(v / static_cast<double>(inner));
      inv_std = 1.0f / std::sqrt(var + kBnEps);
      if (running) {
        running->mean.at(ch) = kBnMomentum * running->mean.at(ch) + (1.0f - kBnMomentum) * mean;
        running->var.at(ch) = kBnMomentum * running->var.at(ch) + (1.0f - kBnMomentum) * var;
      }
    } else {
      if (!running) throw std::runtime_error("batch_norm: inference needs running statistics");
      mean = running->mean.at(ch);
      inv_std = 1.0f / std::sqrt(running->var.at(ch) + kBnEps);
    }
    const float g = gamma.at(ch), b = beta.at(ch);
    for (int64_t i = 0; i < inner; ++i) oc[i] = (xc[i] - mean) * inv_std * g + b;
    if (saved) {
      saved->mean[static_cast<size_t>(ch)] = mean;
      saved->inv_std[static_cast<size_t>(ch)] = inv_std;
    }
  }
  return out;
}

// Reverse-mode for train-mode batch norm (statistics are functions of x).
inline void batch_norm_grad_train(const Tensor& g, const Tensor& x, const Tensor& gamma,
                                  const BnSaved& saved, Tensor* gx, Tensor* ggamma,
                                  Tensor* gbeta) {
  const int c = x.dim(0);
  const int64_t inner = bn_inner_count(x);
  const double n = static_cast<double>(inner);
  for (int ch = 0; ch < c; ++ch) {
    const float* xc = &x.data[static_cast<size_t>(ch) * inner];
    const float* gc = &g.data[static_cast<size_t>(ch) * inner];
    const float mean = saved.mean[static_cast<size_t>(ch)];
    const float inv_std = saved.inv_std[static_cast<size_t>(ch)];
    double sum_g = 0.0, sum_gxh = 0.0;
    for (int64_t i = 0; i < inner; ++i) {
      const double xh = (xc[i] - mean) * inv_std;
      sum_g += gc[i];
      sum_gxh += gc[i] * xh;
    }
    if (ggamma) ggamma->at(ch) += static_cast<float>(sum_gxh);
    if (gbeta) gbeta->at(ch) += static_cast<float>(sum_g);
    if (gx) {
      const double gam = gamma.at(ch);
      float* gxc = &gx->data[static_cast<size_t>(ch) * inner];
      for (int64_t i = 0; i < inner; ++i) {
        const double xh = (xc[i] - mean) * inv_std;
        const double t = n * gc[i] - sum_g - xh * sum_gxh;
        gxc[i] += static_cast<float>(gam * inv_std * t / n);
      }
    }
  }
}

inline void batch_norm_grad_infer(const Tensor& g, const Tensor& x, const Tensor& gamma,
                                  const BnRunning& running, Tensor* gx, Tensor* ggamma,
                                  Tensor* gbeta) {
  const int c = x.dim(0);
  const int64_t inner = bn_inner_count(x);
  for (int ch = 0; ch < c; ++ch) {
    const float* xc = &x.data[static_cast<size_t>(ch) * inner];
    const float* gc = &g.data[static_cast<size_t>(ch) * inner];
    const float mean = running.mean.at(ch);
    const float inv_std = 1.0f / std::sqrt(running.var.at(ch) + kBnEps);
    double sum_g = 0.0, sum_gxh = 0.0;
    for (int64_t i = 0; i < inner; ++i) {
      sum_g += gc[i];
      sum_gxh += gc[i] * (xc[i] - mean) * inv_std;
    }
    if (ggamma) ggamma->at(ch) += static_cast<float>(sum_gxh);
    if (gbeta) gbeta->at(ch) += static_cast<float>(sum_g);
    if (gx) {
      const float k = gamma.at(ch) * inv_std;
      float* gxc = &gx->data[static_cast<size_t>(ch) * inner];
      for (int64_t i = 0; i < inner; ++i) gxc[i] += k * gc[i];
    }
  }
}

// -------- elementwise / pooling / dense --------

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = half_wave(x.data[i]);
  return out;
}

// out[c, t] = mean of x[c, t*stride .. t*stride+size); tail remainder dropped
inline Tensor avg_pool1d(const Tensor& x, int size, int stride) {
  if (x.ndim() != 2) throw std::runtime_error("avg_pool1d: input must be (C, T)");
  if (size < 1 || stride < 1) throw std::runtime_error("avg_pool1d: size and stride must be >= 1");
  const int c = x.dim(0), t_len = x.dim(1);
  if (size > t_len) throw std::runtime_error("avg_pool1d: window larger than input");
  const int frames = (t_len - size) / stride + 1;
  Tensor out({c, frames});
  const double inv = 1.0 / static_cast<double>(size);
  for (int ch = 0; ch < c; ++ch) {
    for (int f = 0; f < frames; ++f) {
      const float* seg = &x.at(ch, f * stride);
      double s = 0.0;
      for (int i = 0; i < size; ++i) s += seg[i];
      out.at(ch, f) = static_cast<float>(s * inv);
    }
  }
  return out;
}

// Non-overlapping (ph, pw) windows; remainder rows/cols dropped. Ties go to
// the first element in row-major scan order.
inline Tensor max_pool2d(const Tensor& x, int ph, int pw, std::vector<int>* argmax = nullptr) {
  if (x.ndim() != 3) throw std::runtime_error("max_pool2d: input must be (C, H, W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (ph < 1 || pw < 1 || ph > h || pw > w)
    throw std::runtime_error("max_pool2d: window larger than input");
  const int oh = h / ph, ow = w / pw;
  Tensor out({c, oh, ow});
  if (argmax) argmax->assign(static_cast<size_t>(c) * oh * ow, 0);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int x0 = 0; x0 < ow; ++x0) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = 0;
        for (int dy = 0; dy < ph; ++dy) {
          const float* row = &x.at(ch, y * ph + dy, x0 * pw);
          for (int dx = 0; dx < pw; ++dx) {
            if (row[dx] > best) {
              best = row[dx];
              best_idx = (y * ph + dy) * w + (x0 * pw + dx);
            }
          }
        }
        out.at(ch, y, x0) = best;
        if (argmax) (*argmax)[(static_cast<size_t>(ch) * oh + y) * ow + x0] = best_idx;
      }
    }
  }
  return out;
}

// Mean over the trailing (time) axis: (C, T) -> (C) or (C, H, W) -> (C, H).
inline Tensor global_avg_pool_time(const Tensor& x) {
  if (x.ndim() == 2) {
    const int c = x.dim(0), t_len = x.dim(1);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int t = 0; t < t_len; ++t) s += x.at(ch, t);
      out.at(ch) = static_cast<float>(s / t_len);
    }
    return out;
  }
  if (x.ndim() == 3) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y) {
        double s = 0.0;
        for (int xx = 0; xx < w; ++xx) s += x.at(ch, y, xx);
        out.at(ch, y) = static_cast<float>(s / w);
      }
    return out;
  }
  throw std::runtime_error("global_avg_pool_time: input must be 2-D or 3-D");
}

// Mean over every non-channel cell: (C, H, W) -> (C).
inline Tensor global_avg_pool_cells(const Tensor& x) {
  if (x.ndim() != 3) throw std::runtime_error("global_avg_pool_cells: input must be (C, H, W)");
  const int c = x.dim(0);
  const int64_t inner = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    const float* xc = &x.data[static_cast<size_t>(ch) * inner];
    double s = 0.0;
    for (int64_t i = 0; i < inner; ++i) s += xc[i];
    out.at(ch) = static_cast<float>(s / static_cast<double>(inner));
  }
  return out;
}

// out = W x + b with W: (out, in), x: (in), b: (out)
inline Tensor dense(const Tensor& w, const Tensor& b, const Tensor& x) {
  if (w.ndim() != 2 || x.ndim() != 1 || b.ndim() != 1)
    throw std::runtime_error("dense: expected W (out, in), b (out), x (in)");
  if (w.dim(1) != x.dim(0) || w.dim(0) != b.dim(0))
    throw std::runtime_error("dense: shape mismatch");
  const int out_n = w.dim(0), in_n = w.dim(1);
  Tensor out({out_n});
  for (int o = 0; o < out_n; ++o) {
    double s = b.at(o);
    const float* wr = &w.at(o, 0);
    for (int i = 0; i < in_n; ++i) s += static_cast<double>(wr[i]) * x.at(i);
    out.at(o) = static_cast<float>(s);
  }
  return out;
}

inline Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw std::runtime_error("concat_channels: no inputs");
  std::vector<int> tail(parts[0]->shape.begin() + 1, parts[0]->shape.end());
  int total_c = 0;
  for (const Tensor* p : parts) {
    std::vector<int> pt(p->shape.begin() + 1, p->shape.end());
    if (pt != tail) throw std::runtime_error("concat_channels: trailing shape mismatch");
    total_c += p->dim(0);
  }
  std::vector<int> shape = {total_c};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<ptrdiff_t>(off));
    off += p->data.size();
  }
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const float v = x.data[i];
    out.data[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                            : std::exp(v) / (1.0f + std::exp(v));
  }
  return out;
}

// -------- losses --------

// -log softmax(logits)[label], computed with a log-sum-exp shift.
inline float softmax_cross_entropy(const Tensor& logits, int label, Tensor* grad = nullptr) {
  if (logits.ndim() != 1 || logits.dim(0) < 2)
    throw std::runtime_error("softmax_cross_entropy: logits must be a vector of >= 2 classes");
  const int c = logits.dim(0);
  if (label < 0 || label >= c)
    throw std::runtime_error("softmax_cross_entropy: label out of range");
  float mx = logits.at(0);
  for (int i = 1; i < c; ++i) mx = std::max(mx, logits.at(i));
  double denom = 0.0;
  for (int i = 0; i < c; ++i) denom += std::exp(static_cast<double>(logits.at(i)) - mx);
  const double log_denom = std::log(denom);
  const double loss = -(static_cast<double>(logits.at(label)) - mx - log_denom);
  if (grad) {
    *grad = Tensor({c});
    for (int i = 0; i < c; ++i) {
      const double p = std::exp(static_cast<double>(logits.at(i)) - mx - log_denom);
      grad->at(i) = static_cast<float>(p) - (i == label ? 1.0f : 0.0f);
    }
  }
  return static_cast<float>(loss);
}

constexpr float kBceClamp = 1e-7f;

// Mean binary cross-entropy over tags. Predictions are clamped into
// [1e-7, 1 - 1e-7]; the clamp is treated as identity by the gradient.
inline float bce_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr) {
  require_same_shape(pred, target, "bce_loss");
  if (pred.size() == 0) throw std::runtime_error("bce_loss: empty input");
  const int64_t n = pred.size();
  double acc = 0.0;
  if (grad) *grad = Tensor(pred.shape);
  for (int64_t i = 0; i < n; ++i) {
    const float raw = pred.at(static_cast<int>(i));
    if (raw < 0.0f || raw > 1.0f)
      throw std::runtime_error("bce_loss: prediction outside [0, 1]");
    const double p = std::clamp(raw, kBceClamp, 1.0f - kBceClamp);
    const double t = target.at(static_cast<int>(i));
    acc += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    if (grad)
      grad->at(static_cast<int>(i)) =
          static_cast<float>((p - t) / (p * (1.0 - p)) / static_cast<double>(n));
  }
  return static_cast<float>(acc / static_cast<double>(n));
}

}  // namespace dlr
