#pragma once

// The deep learned rhythmic representation: a bank of dilated 1-D
// convolutions read the raw 8 kHz waveform in parallel, one branch per
// dilation rate alpha^i, each followed by batch norm and ReLU. Branch
// outputs are concatenated along the channel axis and average-pooled over
// time with size and stride 256, giving one feature frame per 32 ms.

#include <cmath>
#include <string>
#include <vector>

#include "dlr/adam.hpp"
#include "dlr/audio_io.hpp"
#include "dlr/autodiff.hpp"
#include "dlr/ops.hpp"
#include "dlr/serialize.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

constexpr int kDlrTotalChannels = 128;
constexpr int kDlrFilterLen = 16;
constexpr int kDlrPool = 256;

struct DlrConfig {
  int n_layers = 4;        // parallel branches
  int n_channel = 32;      // channels per branch
  double alpha = 13.0;     // dilation scale; branch i dilates by alpha^i
  int filter_len = kDlrFilterLen;
  int pool = kDlrPool;     // both size and stride of the time pooling

  int total_channels() const { return n_layers * n_channel; }
  std::vector<int> dilations() const {
    std::vector<int> d(static_cast<size_t>(n_layers));
    for (int i = 0; i < n_layers; ++i)
      d[static_cast<size_t>(i)] = static_cast<int>(std::llround(std::pow(alpha, i)));
    return d;
  }
};

// Canonical constructor: enforces the 128-channel budget. Experiments may
// build reduced configs directly through custom_config.
inline DlrConfig build_config(int n_layers, int n_channel, double alpha) {
  if (n_layers < 1 || n_channel < 1)
    throw std::runtime_error("dlr config: layer and channel counts must be positive");
  if (alpha < 1.0) throw std::runtime_error("dlr config: alpha must be >= 1");
  if (n_layers * n_channel != kDlrTotalChannels)
    throw std::runtime_error("dlr config: n_layers * n_channel must equal " +
                             std::to_string(kDlrTotalChannels) + " (got " +
                             std::to_string(n_layers * n_channel) + ")");
  DlrConfig cfg;
  cfg.n_layers = n_layers;
  cfg.n_channel = n_channel;
  cfg.alpha = alpha;
  return cfg;
}

// Reduced/experimental variant without the channel-budget check.
inline DlrConfig custom_config(int n_layers, int n_channel, double alpha,
                               int filter_len = kDlrFilterLen) {
  if (n_layers < 1 || n_channel < 1 || filter_len < 1)
    throw std::runtime_error("dlr config: layer, channel and filter extents must be positive");
  if (alpha < 1.0) throw std::runtime_error("dlr config: alpha must be >= 1");
  DlrConfig cfg;
  cfg.n_layers = n_layers;
  cfg.n_channel = n_channel;
  cfg.alpha = alpha;
  cfg.filter_len = filter_len;
  return cfg;
}

// samples spanned by branch i: (K - 1) * alpha^i + 1
inline int64_t receptive_field(const DlrConfig& cfg, int branch) {
  if (branch < 0 || branch >= cfg.n_layers)
    throw std::runtime_error("receptive_field: branch index out of range");
  const int64_t d = std::llround(std::pow(cfg.alpha, branch));
  return static_cast<int64_t>(cfg.filter_len - 1) * d + 1;
}

struct DlrBranch {
  Tensor kernel;      // (n_channel, 1, filter_len)
  Tensor gamma;       // (n_channel)
  Tensor beta;        // (n_channel)
  BnRunning running;  // running batch-norm statistics
};

struct DlrWeights {
  DlrConfig cfg;
  std::vector<DlrBranch> branches;

  void validate() const {
    if (static_cast<int>(branches.size()) != cfg.n_layers)
      throw std::runtime_error("dlr weights: branch count does not match config");
    for (const auto& b : branches) {
      if (b.kernel.shape != std::vector<int>{cfg.n_channel, 1, cfg.filter_len})
        throw std::runtime_error("dlr weights: kernel shape mismatch");
      if (!b.kernel.all_finite() || !b.gamma.all_finite() || !b.beta.all_finite())
        throw std::runtime_error("dlr weights: non-finite parameter");
    }
  }
};

inline DlrWeights init_dlr_weights(const DlrConfig& cfg, Rng& rng) {
  DlrWeights w;
  w.cfg = cfg;
  w.branches.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& b : w.branches) {
    b.kernel = glorot_uniform(rng, {cfg.n_channel, 1, cfg.filter_len}, cfg.filter_len,
                              cfg.n_channel * cfg.filter_len);
    b.gamma = Tensor::full({cfg.n_channel}, 1.0f);
    b.beta = Tensor::zeros({cfg.n_channel});
    b.running.mean = Tensor::zeros({cfg.n_channel});
    b.running.var = Tensor::full({cfg.n_channel}, 1.0f);
  }
  return w;
}

struct DlrFeature {
  Tensor values;          // (total_channels, frames)
  int frame_period = kDlrPool;  // samples per frame at 8 kHz (32 ms)
};

inline void check_dlr_input(const AudioClip& clip, const DlrConfig& cfg) {
  if (clip.sample_rate != kPipelineRate)
    throw std::runtime_error("extract_dlr: expected " + std::to_string(kPipelineRate) +
                             " Hz input, got " + std::to_string(clip.sample_rate));
  if (clip.channels != 1) throw std::runtime_error("extract_dlr: expects mono input");
  if (static_cast<int>(clip.samples.size()) < cfg.pool)
    throw std::runtime_error("extract_dlr: clip shorter than one pooling window");
}

// Frozen-weight extraction (pure, inference-mode batch norm).
inline DlrFeature extract_dlr(const AudioClip& clip, const DlrWeights& weights) {
  const DlrConfig& cfg = weights.cfg;
  check_dlr_input(clip, cfg);
  Tensor x({1, static_cast<int>(clip.samples.size())}, clip.samples);
  const std::vector<int> dil = cfg.dilations();
  std::vector<Tensor> branch_maps;
  branch_maps.reserve(weights.branches.size());
  for (size_t i = 0; i < weights.branches.size(); ++i) {
    const DlrBranch& b = weights.branches[i];
    Tensor y = conv1d_dilated(x, b.kernel, dil[i]);
    y = batch_norm(y, b.gamma, b.beta, const_cast<BnRunning*>(&b.running), BnMode::infer);
    y = relu(y);
    branch_maps.push_back(std::move(y));
  }
  std::vector<const Tensor*> parts;
  for (const Tensor& t : branch_maps) parts.push_back(&t);
  Tensor cat = concat_channels(parts);
  DlrFeature feat;
  feat.values = avg_pool1d(cat, cfg.pool, cfg.pool);
  feat.frame_period = cfg.pool;
  return feat;
}

// Tape-recorded extraction for training. Branch parameters must already be
// watched on the tape; running statistics update when mode is train.
struct DlrBranchVars {
  int kernel = -1;
  int gamma = -1;
  int beta = -1;
};

inline int extract_dlr_on_tape(GradientTape& tape, int x, DlrWeights& weights,
                               const std::vector<DlrBranchVars>& vars, BnMode mode) {
  const DlrConfig& cfg = weights.cfg;
  const std::vector<int> dil = cfg.dilations();
  std::vector<int> branch_out;
  for (size_t i = 0; i < weights.branches.size(); ++i) {
    int y = tape.conv1d_dilated(x, vars[i].kernel, dil[i]);
    y = tape.batch_norm(y, vars[i].gamma, vars[i].beta, &weights.branches[i].running, mode);
    y = tape.relu(y);
    branch_out.push_back(y);
  }
  const int cat = tape.concat_channels(branch_out);
  return tape.avg_pool1d(cat, cfg.pool, cfg.pool);
}

// ---- persistence (DLRW container) ----

inline NamedTensors dlr_weights_to_tensors(const DlrWeights& w) {
  NamedTensors out;
  out.emplace_back("dlr.config",
                   Tensor({5}, {static_cast<float>(w.cfg.n_layers),
                                static_cast<float>(w.cfg.n_channel),
                                static_cast<float>(w.cfg.alpha),
                                static_cast<float>(w.cfg.filter_len),
                                static_cast<float>(w.cfg.pool)}));
  for (size_t i = 0; i < w.branches.size(); ++i) {
    const std::string p = "dlr.branch" + std::to_string(i) + ".";
    out.emplace_back(p + "kernel", w.branches[i].kernel);
    out.emplace_back(p + "bn.gamma", w.branches[i].gamma);
    out.emplace_back(p + "bn.beta", w.branches[i].beta);
    out.emplace_back(p + "bn.running_mean", w.branches[i].running.mean);
    out.emplace_back(p + "bn.running_var", w.branches[i].running.var);
  }
  return out;
}

inline DlrWeights dlr_weights_from_tensors(const NamedTensors& ts, const std::string& path) {
  const Tensor& meta = require_tensor(ts, "dlr.config", path);
  if (meta.size() != 5) throw std::runtime_error("dlrw: malformed dlr.config in " + path);
  DlrWeights w;
  w.cfg.n_layers = static_cast<int>(meta.at(0));
  w.cfg.n_channel = static_cast<int>(meta.at(1));
  w.cfg.alpha = static_cast<double>(meta.at(2));
  w.cfg.filter_len = static_cast<int>(meta.at(3));
  w.cfg.pool = static_cast<int>(meta.at(4));
  w.branches.resize(static_cast<size_t>(w.cfg.n_layers));
  for (size_t i = 0; i < w.branches.size(); ++i) {
    const std::string p = "dlr.branch" + std::to_string(i) + ".";
    w.branches[i].kernel = require_tensor(ts, p + "kernel", path);
    w.branches[i].gamma = require_tensor(ts, p + "bn.gamma", path);
    w.branches[i].beta = require_tensor(ts, p + "bn.beta", path);
    w.branches[i].running.mean = require_tensor(ts, p + "bn.running_mean", path);
    w.branches[i].running.var = require_tensor(ts, p + "bn.running_var", path);
  }
  w.validate();
  return w;
}

inline void save_weights(const std::string& path, const DlrWeights& w) {
  save_dlrw(path, dlr_weights_to_tensors(w));
}

inline DlrWeights load_weights(const std::string& path) {
  return dlr_weights_from_tensors(load_dlrw(path), path);
}

}  // namespace dlr
