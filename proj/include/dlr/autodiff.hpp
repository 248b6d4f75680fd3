#pragma once

// Reverse-mode differentiation over an append-only tape. Each recorded node
// stores its output value and a closure that scatters the node's gradient
// into its inputs; backward walks the tape in exact reverse recording order,
// so topological order holds by construction.

#include <functional>
#include <memory>
#include <vector>

#include "dlr/ops.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

class GradientTape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;          // allocated at backward time
    bool needs_grad = false;
    std::function<void(GradientTape&, const Tensor&)> backprop;  // empty for leaves
  };

  // Leaf whose gradient will be requested (a parameter).
  int watch(const Tensor& t) { return push(t, true, {}); }
  // Leaf treated as a constant; no gradient is computed into it.
  int constant(const Tensor& t) { return push(t, false, {}); }

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0)
      throw std::runtime_error("tape: gradient not available (run backward first)");
    return n.grad;
  }
  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // ---- recorded operations ----

  int conv1d_dilated(int x, int w, int d) {
    Tensor out = dlr::conv1d_dilated(value(x), value(w), d);
    return push(std::move(out), needs(x) || needs(w),
                [x, w, d](GradientTape& t, const Tensor& g) {
                  if (t.needs(x)) conv1d_dilated_grad_x(g, t.value(w), d, t.grad_ref(x));
                  if (t.needs(w)) conv1d_dilated_grad_w(g, t.value(x), d, t.grad_ref(w));
                });
  }

  int conv2d(int x, int w) {
    Tensor out = dlr::conv2d(value(x), value(w));
    return push(std::move(out), needs(x) || needs(w),
                [x, w](GradientTape& t, const Tensor& g) {
                  if (t.needs(x)) conv2d_grad_x(g, t.value(w), t.grad_ref(x));
                  if (t.needs(w)) conv2d_grad_w(g, t.value(x), t.grad_ref(w));
                });
  }

  int batch_norm(int x, int gamma, int beta, BnRunning* running, BnMode mode) {
    auto saved = std::make_shared<BnSaved>();
    Tensor out = dlr::batch_norm(value(x), value(gamma), value(beta), running, mode,
                                 mode == BnMode::train ? saved.get() : nullptr);
    BnRunning run_copy;
    if (mode == BnMode::infer) run_copy = *running;  // freeze stats used by this node
    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, saved, mode, run_copy](GradientTape& t, const Tensor& g) {
                  Tensor* gx = t.needs(x) ? &t.grad_ref(x) : nullptr;
                  Tensor* gg = t.needs(gamma) ? &t.grad_ref(gamma) : nullptr;
                  Tensor* gb = t.needs(beta) ? &t.grad_ref(beta) : nullptr;
                  if (mode == BnMode::train)
                    batch_norm_grad_train(g, t.value(x), t.value(gamma), *saved, gx, gg, gb);
                  else
                    batch_norm_grad_infer(g, t.value(x), t.value(gamma), run_copy, gx, gg, gb);
                });
  }

  int relu(int x) {
    Tensor out = dlr::relu(value(x));
    return push(std::move(out), needs(x), [x](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      const Tensor& xin = t.value(x);
      for (size_t i = 0; i < g.data.size(); ++i)
        if (xin.data[i] > 0.0f) gx.data[i] += g.data[i];
    });
  }

  int avg_pool1d(int x, int size, int stride) {
    Tensor out = dlr::avg_pool1d(value(x), size, stride);
    return push(std::move(out), needs(x), [x, size, stride](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      const int c = g.dim(0), frames = g.dim(1);
      const float inv = 1.0f / static_cast<float>(size);
      for (int ch = 0; ch < c; ++ch)
        for (int f = 0; f < frames; ++f) {
          const float gv = g.at(ch, f) * inv;
          float* seg = &gx.at(ch, f * stride);
          for (int i = 0; i < size; ++i) seg[i] += gv;
        }
    });
  }

  int max_pool2d(int x, int ph, int pw) {
    auto argmax = std::make_shared<std::vector<int>>();
    Tensor out = dlr::max_pool2d(value(x), ph, pw, argmax.get());
    return push(std::move(out), needs(x), [x, argmax](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      const int64_t hw = static_cast<int64_t>(gx.dim(1)) * gx.dim(2);
      const int64_t ohw = static_cast<int64_t>(g.dim(1)) * g.dim(2);
      for (int ch = 0; ch < g.dim(0); ++ch)
        for (int64_t i = 0; i < ohw; ++i)
          gx.data[static_cast<size_t>(ch * hw + (*argmax)[static_cast<size_t>(ch * ohw + i)])] +=
              g.data[static_cast<size_t>(ch * ohw + i)];
    });
  }

  int global_avg_pool_time(int x) {
    Tensor out = dlr::global_avg_pool_time(value(x));
    return push(std::move(out), needs(x), [x](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      const Tensor& xin = t.value(x);
      if (xin.ndim() == 2) {
        const int c = xin.dim(0), t_len = xin.dim(1);
        for (int ch = 0; ch < c; ++ch) {
          const float gv = g.at(ch) / static_cast<float>(t_len);
          for (int i = 0; i < t_len; ++i) gx.at(ch, i) += gv;
        }
      } else {
        const int c = xin.dim(0), h = xin.dim(1), w = xin.dim(2);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y) {
            const float gv = g.at(ch, y) / static_cast<float>(w);
            for (int xx = 0; xx < w; ++xx) gx.at(ch, y, xx) += gv;
          }
      }
    });
  }

  int global_avg_pool_cells(int x) {
    Tensor out = dlr::global_avg_pool_cells(value(x));
    return push(std::move(out), needs(x), [x](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      const Tensor& xin = t.value(x);
      const int64_t inner = static_cast<int64_t>(xin.dim(1)) * xin.dim(2);
      for (int ch = 0; ch < xin.dim(0); ++ch) {
        const float gv = g.at(ch) / static_cast<float>(inner);
        float* gxc = &gx.data[static_cast<size_t>(ch) * inner];
        for (int64_t i = 0; i < inner; ++i) gxc[i] += gv;
      }
    });
  }

  int dense(int w, int b, int x) {
    Tensor out = dlr::dense(value(w), value(b), value(x));
    return push(std::move(out), needs(w) || needs(b) || needs(x),
                [w, b, x](GradientTape& t, const Tensor& g) {
                  const Tensor& wv = t.value(w);
                  const Tensor& xv = t.value(x);
                  const int out_n = wv.dim(0), in_n = wv.dim(1);
                  if (t.needs(b)) {
                    Tensor& gb = t.grad_ref(b);
                    for (int o = 0; o < out_n; ++o) gb.at(o) += g.at(o);
                  }
                  if (t.needs(w)) {
                    Tensor& gw = t.grad_ref(w);
                    for (int o = 0; o < out_n; ++o)
                      for (int i = 0; i < in_n; ++i) gw.at(o, i) += g.at(o) * xv.at(i);
                  }
                  if (t.needs(x)) {
                    Tensor& gx = t.grad_ref(x);
                    for (int o = 0; o < out_n; ++o) {
                      const float gv = g.at(o);
                      const float* wr = &wv.at(o, 0);
                      for (int i = 0; i < in_n; ++i) gx.at(i) += gv * wr[i];
                    }
                  }
                });
  }

  int concat_channels(const std::vector<int>& parts) {
    std::vector<const Tensor*> vals;
    vals.reserve(parts.size());
    bool any = false;
    for (int p : parts) {
      vals.push_back(&value(p));
      any = any || needs(p);
    }
    Tensor out = dlr::concat_channels(vals);
    return push(std::move(out), any, [parts](GradientTape& t, const Tensor& g) {
      size_t off = 0;
      for (int p : parts) {
        const size_t n = t.value(p).data.size();
        if (t.needs(p)) {
          Tensor& gp = t.grad_ref(p);
          for (size_t i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
        }
        off += n;
      }
    });
  }

  int reshape(int x, std::vector<int> shape) {
    if (shape_count(shape) != value(x).size())
      throw std::runtime_error("reshape: element count mismatch");
    Tensor out(std::move(shape), value(x).data);
    return push(std::move(out), needs(x), [x](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    });
  }

  int flatten(int x) { return reshape(x, {static_cast<int>(value(x).size())}); }

  int sigmoid(int x) {
    auto out = std::make_shared<Tensor>(dlr::sigmoid(value(x)));
    Tensor val = *out;
    return push(std::move(val), needs(x), [x, out](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      for (size_t i = 0; i < g.data.size(); ++i) {
        const float s = out->data[i];
        gx.data[i] += g.data[i] * s * (1.0f - s);
      }
    });
  }

  int add(int a, int b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out(value(a).shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = value(a).data[i] + value(b).data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GradientTape& t, const Tensor& g) {
      if (t.needs(a)) {
        Tensor& ga = t.grad_ref(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs(b)) {
        Tensor& gb = t.grad_ref(b);
        for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
      }
    });
  }

  int sum(int x) {
    Tensor out = Tensor::scalar(static_cast<float>(value(x).sum64()));
    return push(std::move(out), needs(x), [x](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      for (auto& v : gx.data) v += g.data[0];
    });
  }

  // sum(x .* weights) as a scalar readout; weights are a constant
  int inner(int x, const Tensor& weights) {
    require_same_shape(value(x), weights, "inner");
    double s = 0.0;
    for (size_t i = 0; i < weights.data.size(); ++i)
      s += static_cast<double>(value(x).data[i]) * weights.data[i];
    Tensor out = Tensor::scalar(static_cast<float>(s));
    auto w = std::make_shared<Tensor>(weights);
    return push(std::move(out), needs(x), [x, w](GradientTape& t, const Tensor& g) {
      if (!t.needs(x)) return;
      Tensor& gx = t.grad_ref(x);
      for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[0] * w->data[i];
    });
  }

  int softmax_cross_entropy(int logits, int label) {
    auto sm_grad = std::make_shared<Tensor>();
    float loss = dlr::softmax_cross_entropy(value(logits), label, sm_grad.get());
    return push(Tensor::scalar(loss), needs(logits),
                [logits, sm_grad](GradientTape& t, const Tensor& g) {
                  if (!t.needs(logits)) return;
                  Tensor& gl = t.grad_ref(logits);
                  for (size_t i = 0; i < gl.data.size(); ++i)
                    gl.data[i] += g.data[0] * sm_grad->data[i];
                });
  }

  int bce_loss(int pred, const Tensor& target) {
    auto pgrad = std::make_shared<Tensor>();
    float loss = dlr::bce_loss(value(pred), target, pgrad.get());
    return push(Tensor::scalar(loss), needs(pred),
                [pred, pgrad](GradientTape& t, const Tensor& g) {
                  if (!t.needs(pred)) return;
                  Tensor& gp = t.grad_ref(pred);
                  for (size_t i = 0; i < gp.data.size(); ++i)
                    gp.data[i] += g.data[0] * pgrad->data[i];
                });
  }

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
  // Tensors that do not reach the loss keep zero gradients.
  void backward(int loss) {
    Node& ln = nodes_.at(static_cast<size_t>(loss));
    if (ln.value.size() != 1) throw std::runtime_error("backward: loss must be a scalar");
    for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
    ln.grad.data[0] = 1.0f;
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backprop && n.needs_grad) n.backprop(*this, n.grad);
    }
  }

  bool needs(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  Tensor& grad_ref(int id) { return nodes_[static_cast<size_t>(id)].grad; }

 private:
  int push(Tensor value, bool needs_grad,
           std::function<void(GradientTape&, const Tensor&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace dlr
