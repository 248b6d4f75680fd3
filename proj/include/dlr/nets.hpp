#pragma once

// Shared 2-D convolutional trunk used by the source-task classifier and the
// tagging network: a stack of conv -> batch norm -> ReLU blocks, each
// optionally followed by a non-overlapping max pool.

#include <string>
#include <vector>

#include "dlr/adam.hpp"
#include "dlr/autodiff.hpp"
#include "dlr/ops.hpp"
#include "dlr/serialize.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

struct ConvBlockSpec {
  int out_channels;
  int kh, kw;
  int pool_h, pool_w;  // 1,1 means no pooling
};

struct ConvBlock {
  int w = -1;      // ParamStore index of the kernel
  int gamma = -1;
  int beta = -1;
  ConvBlockSpec spec{};
  BnRunning running;
};

struct ConvStack {
  std::vector<ConvBlock> blocks;

  // Registers kernels and batch-norm parameters for the given layer specs.
  void build(ParamStore& params, const std::string& prefix, int in_channels,
             const std::vector<ConvBlockSpec>& specs, Rng& rng, float lr) {
    int cin = in_channels;
    for (size_t i = 0; i < specs.size(); ++i) {
      const ConvBlockSpec& s = specs[i];
      ConvBlock b;
      b.spec = s;
      const std::string p = prefix + std::to_string(i) + ".";
      const int k_in = cin * s.kh * s.kw;
      const int k_out = s.out_channels * s.kh * s.kw;
      b.w = params.add(p + "w", glorot_uniform(rng, {s.out_channels, cin, s.kh, s.kw},
                                               k_in, k_out), lr);
      b.gamma = params.add(p + "bn.gamma", Tensor::full({s.out_channels}, 1.0f), lr);
      b.beta = params.add(p + "bn.beta", Tensor::zeros({s.out_channels}), lr);
      b.running.mean = Tensor::zeros({s.out_channels});
      b.running.var = Tensor::full({s.out_channels}, 1.0f);
      blocks.push_back(std::move(b));
      cin = s.out_channels;
    }
  }

  // x is a (C, H, W) tape var; param_vars maps ParamStore indices to tape ids.
  int forward(GradientTape& tape, int x, const std::vector<int>& param_vars, BnMode mode) {
    for (ConvBlock& b : blocks) {
      x = tape.conv2d(x, param_vars[static_cast<size_t>(b.w)]);
      x = tape.batch_norm(x, param_vars[static_cast<size_t>(b.gamma)],
                          param_vars[static_cast<size_t>(b.beta)], &b.running, mode);
      x = tape.relu(x);
      if (b.spec.pool_h > 1 || b.spec.pool_w > 1)
        x = tape.max_pool2d(x, b.spec.pool_h, b.spec.pool_w);
    }
    return x;
  }

  // running statistics are net state but not ParamStore entries
  void append_running(NamedTensors& out, const std::string& prefix) const {
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + std::to_string(i) + ".bn.";
      out.emplace_back(p + "running_mean", blocks[i].running.mean);
      out.emplace_back(p + "running_var", blocks[i].running.var);
    }
  }
  void restore_running(const NamedTensors& ts, const std::string& prefix,
                       const std::string& path) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + std::to_string(i) + ".bn.";
      blocks[i].running.mean = require_tensor(ts, p + "running_mean", path);
      blocks[i].running.var = require_tensor(ts, p + "running_var", path);
    }
  }
};

// Watches every ParamStore entry on a fresh tape; returns tape ids aligned
// with store indices.
inline std::vector<int> watch_params(GradientTape& tape, const ParamStore& params) {
  std::vector<int> vars;
  vars.reserve(params.entries.size());
  for (const auto& e : params.entries) vars.push_back(tape.watch(e.value));
  return vars;
}

// Adds the tape gradients of watched parameters into the store accumulators.
inline void accumulate_grads(GradientTape& tape, ParamStore& params,
                             const std::vector<int>& vars) {
  for (size_t i = 0; i < params.entries.size(); ++i) {
    const Tensor& g = tape.grad(vars[i]);
    Tensor& acc = params.entries[i].grad;
    for (size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += g.data[j];
  }
}

// Full parameter/optimizer-state snapshot for best-epoch bookkeeping.
struct ParamSnapshot {
  std::vector<Tensor> values;
  std::vector<Tensor> running;  // interleaved mean/var tensors, caller-ordered
};

}  // namespace dlr
