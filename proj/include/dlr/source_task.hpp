#pragma once

// Multi-task source training: joint genre (9-way) and tempo (4-way)
// classification over the DLR. The dilated branch bank and a 5-layer 2-D
// conv head train end to end; the branch weights are the product.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlr/adam.hpp"
#include "dlr/audio_io.hpp"
#include "dlr/autodiff.hpp"
#include "dlr/dlr_extractor.hpp"
#include "dlr/nets.hpp"
#include "dlr/serialize.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

constexpr int kGenreClasses = 9;
constexpr int kTempoClasses = 4;

enum class Split { train, valid, test, unused };

struct BallroomItem {
  std::string audio_path;
  std::string genre_name;
  int genre = -1;  // class index after exclude_minor_genres
  double bpm = 0.0;
  Split split = Split::unused;
};

// class boundaries at 112, 149 and 187 BPM; intervals are left-closed
inline int tempo_class(double bpm) {
  if (!(bpm > 0.0)) throw std::runtime_error("tempo_class: bpm must be positive");
  if (bpm < 112.0) return 0;
  if (bpm < 149.0) return 1;
  if (bpm < 187.0) return 2;
  return 3;
}

// ---- manifest ----

// TSV with header `path<TAB>genre<TAB>bpm`, paths relative to the manifest.
inline std::vector<BallroomItem> load_source_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("manifest: cannot open " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::string line;
  if (!std::getline(is, line) || line.rfind("path\tgenre\tbpm", 0) != 0)
    throw std::runtime_error("manifest: missing path/genre/bpm header in " + manifest_path);
  std::vector<BallroomItem> items;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string path, genre, bpm_s;
    if (!std::getline(ss, path, '\t') || !std::getline(ss, genre, '\t') ||
        !std::getline(ss, bpm_s, '\t'))
      throw std::runtime_error("manifest: malformed line " + std::to_string(line_no) + " in " +
                               manifest_path);
    BallroomItem it;
    it.audio_path = (base / path).string();
    it.genre_name = genre;
    it.bpm = std::stod(bpm_s);
    if (!(it.bpm > 0.0))
      throw std::runtime_error("manifest: non-positive bpm on line " + std::to_string(line_no));
    items.push_back(std::move(it));
  }
  return items;
}

// ---- genre bookkeeping ----

// Drops the smallest genre classes down to nine when more are present, then
// assigns indices 0..G-1 in descending-count order (ties by name).
inline std::vector<BallroomItem> exclude_minor_genres(const std::vector<BallroomItem>& items) {
  std::map<std::string, int> counts;
  for (const auto& it : items) ++counts[it.genre_name];
  std::vector<std::pair<std::string, int>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const int g = static_cast<int>(order.size());
  const int keep = g > kGenreClasses ? kGenreClasses : g;
  std::map<std::string, int> index;
  for (int i = 0; i < keep; ++i) index[order[static_cast<size_t>(i)].first] = i;
  std::vector<BallroomItem> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    auto found = index.find(it.genre_name);
    if (found == index.end()) continue;
    BallroomItem kept = it;
    kept.genre = found->second;
    out.push_back(std::move(kept));
  }
  return out;
}

// ---- stratified split ----

struct SplitSizes {
  int train = 0, valid = 0, test = 0;
};

// Largest-remainder allocation per genre and split: totals are exact and
// each split's per-genre share stays within one item of the global share.
// Items beyond the requested sizes are marked unused.
inline void stratified_split(std::vector<BallroomItem>& items, SplitSizes sizes,
                             uint64_t seed) {
  const int total = static_cast<int>(items.size());
  const int requested = sizes.train + sizes.valid + sizes.test;
  if (requested > total)
    throw std::runtime_error("stratified_split: requested sizes exceed item count");

  std::map<std::string, std::vector<int>> by_genre;
  for (int i = 0; i < total; ++i) by_genre[items[static_cast<size_t>(i)].genre_name].push_back(i);

  Rng rng(seed);
  std::vector<std::pair<std::string, std::vector<int>>> pools(by_genre.begin(), by_genre.end());
  for (auto& [name, pool] : pools) rng.shuffle(pool);
  std::vector<size_t> cursor(pools.size(), 0);

  const int split_sizes[3] = {sizes.train, sizes.valid, sizes.test};
  const Split split_ids[3] = {Split::train, Split::valid, Split::test};
  for (auto& it : items) it.split = Split::unused;

  for (int s = 0; s < 3; ++s) {
    const int want = split_sizes[s];
    std::vector<int> take(pools.size(), 0);
    std::vector<std::pair<double, size_t>> remainders;
    int assigned = 0;
    for (size_t g = 0; g < pools.size(); ++g) {
      const double ideal =
          static_cast<double>(pools[g].second.size()) * want / static_cast<double>(total);
      take[g] = static_cast<int>(ideal);
      const int avail = static_cast<int>(pools[g].second.size() - cursor[g]);
      take[g] = std::min(take[g], avail);
      assigned += take[g];
      remainders.emplace_back(ideal - take[g], g);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (size_t r = 0; assigned < want; r = (r + 1) % remainders.size()) {
      const size_t g = remainders[r].second;
      const int avail = static_cast<int>(pools[g].second.size() - cursor[g]);
      if (take[g] < avail) {
        ++take[g];
        ++assigned;
      }
    }
    for (size_t g = 0; g < pools.size(); ++g) {
      for (int k = 0; k < take[g]; ++k) {
        const int idx = pools[g].second[cursor[g]++];
        items[static_cast<size_t>(idx)].split = split_ids[s];
      }
    }
  }
}

// ---- the source network ----

struct SourceHyper {
  float lr = 1e-3f;
  int batch = 16;
  int max_epochs = 200;
  int patience = 10;
  int crop_samples = 70125;
  int head_channels = 32;
  uint64_t seed = 1;
};

struct SourceNet {
  DlrConfig cfg;
  ParamStore params;
  std::vector<DlrBranchVars> branch_param_ids;  // ParamStore indices per branch
  std::vector<BnRunning> branch_running;
  ConvStack head;
  int genre_w = -1, genre_b = -1, tempo_w = -1, tempo_b = -1;

  static SourceNet build(const DlrConfig& cfg, const SourceHyper& hyper, Rng& rng) {
    SourceNet net;
    net.cfg = cfg;
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "dlr.branch" + std::to_string(i) + ".";
      DlrBranchVars v;
      v.kernel = net.params.add(
          p + "kernel",
          glorot_uniform(rng, {cfg.n_channel, 1, cfg.filter_len}, cfg.filter_len,
                         cfg.n_channel * cfg.filter_len),
          hyper.lr);
      v.gamma = net.params.add(p + "bn.gamma", Tensor::full({cfg.n_channel}, 1.0f), hyper.lr);
      v.beta = net.params.add(p + "bn.beta", Tensor::zeros({cfg.n_channel}), hyper.lr);
      net.branch_param_ids.push_back(v);
      BnRunning run;
      run.mean = Tensor::zeros({cfg.n_channel});
      run.var = Tensor::full({cfg.n_channel}, 1.0f);
      net.branch_running.push_back(std::move(run));
    }
    const int c = hyper.head_channels;
    std::vector<ConvBlockSpec> specs = {
        {c, 3, 3, 2, 2}, {c, 3, 3, 2, 2}, {c, 3, 3, 2, 2}, {c, 3, 3, 2, 2}, {c, 3, 3, 1, 1}};
    net.head.build(net.params, "head.conv", 1, specs, rng, hyper.lr);
    int rows = cfg.total_channels();
    for (const auto& s : specs)
      if (s.pool_h > 1) rows /= s.pool_h;
    if (rows < 1)
      throw std::runtime_error("source net: DLR channel count too small for the head pools");
    const int feat = c * rows;
    net.genre_w = net.params.add("genre.w",
                                 glorot_uniform(rng, {kGenreClasses, feat}, feat, kGenreClasses),
                                 hyper.lr);
    net.genre_b = net.params.add("genre.b", Tensor::zeros({kGenreClasses}), hyper.lr);
    net.tempo_w = net.params.add("tempo.w",
                                 glorot_uniform(rng, {kTempoClasses, feat}, feat, kTempoClasses),
                                 hyper.lr);
    net.tempo_b = net.params.add("tempo.b", Tensor::zeros({kTempoClasses}), hyper.lr);
    return net;
  }

  struct Logits {
    int genre = -1;
    int tempo = -1;
  };

  Logits forward(GradientTape& tape, const std::vector<int>& vars,
                 const float* samples, int n, BnMode mode) {
    const int x = tape.constant(Tensor({1, n}, std::vector<float>(samples, samples + n)));
    const std::vector<int> dil = cfg.dilations();
    std::vector<int> branch_out;
    for (size_t i = 0; i < branch_param_ids.size(); ++i) {
      const DlrBranchVars& v = branch_param_ids[i];
      int y = tape.conv1d_dilated(x, vars[static_cast<size_t>(v.kernel)],
                                  dil[i]);
      y = tape.batch_norm(y, vars[static_cast<size_t>(v.gamma)],
                          vars[static_cast<size_t>(v.beta)], &branch_running[i], mode);
      y = tape.relu(y);
      branch_out.push_back(y);
    }
    int feat = tape.concat_channels(branch_out);
    feat = tape.avg_pool1d(feat, cfg.pool, cfg.pool);
    const Tensor& f = tape.value(feat);
    int img = tape.reshape(feat, {1, f.dim(0), f.dim(1)});
    img = head.forward(tape, img, vars, mode);
    int pooled = tape.global_avg_pool_time(img);
    pooled = tape.flatten(pooled);
    Logits out;
    out.genre = tape.dense(vars[static_cast<size_t>(genre_w)],
                           vars[static_cast<size_t>(genre_b)], pooled);
    out.tempo = tape.dense(vars[static_cast<size_t>(tempo_w)],
                           vars[static_cast<size_t>(tempo_b)], pooled);
    return out;
  }

  DlrWeights to_dlr_weights() const {
    DlrWeights w;
    w.cfg = cfg;
    for (size_t i = 0; i < branch_param_ids.size(); ++i) {
      DlrBranch b;
      b.kernel = params[branch_param_ids[i].kernel].value;
      b.gamma = params[branch_param_ids[i].gamma].value;
      b.beta = params[branch_param_ids[i].beta].value;
      b.running = branch_running[i];
      w.branches.push_back(std::move(b));
    }
    return w;
  }

  NamedTensors named_tensors() const {
    NamedTensors out = dlr_weights_to_tensors(to_dlr_weights());
    for (const auto& e : params.entries)
      if (e.name.rfind("dlr.", 0) != 0) out.emplace_back(e.name, e.value);
    head.append_running(out, "head.conv");
    return out;
  }

  ParamSnapshot snapshot() const {
    ParamSnapshot s;
    for (const auto& e : params.entries) s.values.push_back(e.value);
    for (const auto& r : branch_running) {
      s.running.push_back(r.mean);
      s.running.push_back(r.var);
    }
    for (const auto& b : head.blocks) {
      s.running.push_back(b.running.mean);
      s.running.push_back(b.running.var);
    }
    return s;
  }

  void restore(const ParamSnapshot& s) {
    for (size_t i = 0; i < params.entries.size(); ++i) params.entries[i].value = s.values[i];
    size_t r = 0;
    for (auto& run : branch_running) {
      run.mean = s.running[r++];
      run.var = s.running[r++];
    }
    for (auto& b : head.blocks) {
      b.running.mean = s.running[r++];
      b.running.var = s.running[r++];
    }
  }
};

// ---- training ----

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  double test_genre_acc = 0.0;
  double test_tempo_acc = 0.0;
  int best_epoch = -1;
  std::string config_echo;
  uint64_t seed = 0;

  void write(const std::string& report_path, const std::string& losses_csv_path) const {
    std::ofstream os(report_path);
    if (!os) throw std::runtime_error("report: cannot create " + report_path);
    os << config_echo;
    os << "seed=" << seed << "\n";
    os << "epochs=" << train_loss.size() << "\n";
    os << "best_epoch=" << best_epoch << "\n";
    os << "test_genre_accuracy=" << test_genre_acc << "\n";
    os << "test_tempo_accuracy=" << test_tempo_acc << "\n";
    std::ofstream cs(losses_csv_path);
    if (!cs) throw std::runtime_error("report: cannot create " + losses_csv_path);
    cs << "epoch,train_loss,valid_loss\n";
    for (size_t e = 0; e < train_loss.size(); ++e)
      cs << e << ',' << train_loss[e] << ',' << valid_loss[e] << '\n';
  }
};

namespace detail {

inline int argmax(const Tensor& t) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(t.size()); ++i)
    if (t.at(i) > t.at(best)) best = i;
  return best;
}

}  // namespace detail

// fraction of argmax-correct predictions
inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw std::runtime_error("accuracy: size mismatch or empty input");
  int ok = 0;
  for (size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

struct SourceTrainer {
  SourceNet net;
  std::vector<BallroomItem> items;
  std::vector<std::vector<float>> audio;  // decoded 8 kHz mono, aligned with items
  SourceHyper hyper;

  SourceTrainer(std::vector<BallroomItem> its, const DlrConfig& cfg, const SourceHyper& h)
      : items(std::move(its)), hyper(h) {
    Rng rng(hyper.seed);
    net = SourceNet::build(cfg, hyper, rng);
    audio.resize(items.size());
  }

  void load_audio() {
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].split == Split::unused) continue;
      audio[i] = load_audio_8k(items[i].audio_path).samples;
      if (static_cast<int>(audio[i].size()) < hyper.crop_samples)
        throw std::runtime_error("train_source: clip shorter than the crop window: " +
                                 items[i].audio_path);
    }
  }

  // forward/backward one item; returns the loss and accumulates gradients
  double train_step(int item_idx, Rng& rng) {
    const auto& samples = audio[static_cast<size_t>(item_idx)];
    const int max_start = static_cast<int>(samples.size()) - hyper.crop_samples;
    const int start = max_start > 0 ? rng.below(max_start + 1) : 0;
    GradientTape tape;
    const std::vector<int> vars = watch_params(tape, net.params);
    const SourceNet::Logits lg = net.forward(tape, vars, samples.data() + start,
                                             hyper.crop_samples, BnMode::train);
    const auto& it = items[static_cast<size_t>(item_idx)];
    const int g_loss = tape.softmax_cross_entropy(lg.genre, it.genre);
    const int t_loss = tape.softmax_cross_entropy(lg.tempo, tempo_class(it.bpm));
    const int loss = tape.add(g_loss, t_loss);
    tape.backward(loss);
    accumulate_grads(tape, net.params, vars);
    return tape.value(loss).data[0];
  }

  struct EvalResult {
    double loss = 0.0;
    double genre_acc = 0.0;
    double tempo_acc = 0.0;
  };

  EvalResult evaluate(Split split) {
    EvalResult res;
    int n = 0;
    std::vector<int> g_pred, g_true, t_pred, t_true;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].split != split) continue;
      GradientTape tape;
      std::vector<int> vars;
      vars.reserve(net.params.entries.size());
      for (const auto& e : net.params.entries) vars.push_back(tape.constant(e.value));
      const SourceNet::Logits lg =
          net.forward(tape, vars, audio[i].data(), static_cast<int>(audio[i].size()),
                      BnMode::infer);
      const int gc = items[i].genre;
      const int tc = tempo_class(items[i].bpm);
      res.loss += tape.value(tape.softmax_cross_entropy(lg.genre, gc)).data[0];
      res.loss += tape.value(tape.softmax_cross_entropy(lg.tempo, tc)).data[0];
      g_pred.push_back(detail::argmax(tape.value(lg.genre)));
      t_pred.push_back(detail::argmax(tape.value(lg.tempo)));
      g_true.push_back(gc);
      t_true.push_back(tc);
      ++n;
    }
    if (n == 0) throw std::runtime_error("evaluate_source: empty split");
    res.loss /= n;
    res.genre_acc = accuracy(g_pred, g_true);
    res.tempo_acc = accuracy(t_pred, t_true);
    return res;
  }

  TrainReport run() {
    TrainReport report;
    report.seed = hyper.seed;
    std::vector<int> train_idx;
    int n_valid = 0;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].split == Split::train) train_idx.push_back(static_cast<int>(i));
      if (items[i].split == Split::valid) ++n_valid;
    }
    if (train_idx.empty() || n_valid == 0)
      throw std::runtime_error("train_source: empty train or valid split");

    Rng rng = Rng(hyper.seed).fork(0xabcdef);
    double best_valid = std::numeric_limits<double>::infinity();
    ParamSnapshot best = net.snapshot();
    int best_epoch = -1, stale = 0;

    for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
      rng.shuffle(train_idx);
      double epoch_loss = 0.0;
      int batch_count = 0;
      for (size_t pos = 0; pos < train_idx.size();) {
        const int bs = std::min<size_t>(static_cast<size_t>(hyper.batch),
                                        train_idx.size() - pos);
        net.params.zero_grad();
        for (int b = 0; b < bs; ++b) epoch_loss += train_step(train_idx[pos + b], rng);
        net.params.step(bs);
        pos += static_cast<size_t>(bs);
        ++batch_count;
      }
      epoch_loss /= static_cast<double>(train_idx.size());
      if (!std::isfinite(epoch_loss))
        throw std::runtime_error("train_source: training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      const EvalResult valid = evaluate(Split::valid);
      report.train_loss.push_back(epoch_loss);
      report.valid_loss.push_back(valid.loss);
      if (valid.loss < best_valid) {
        best_valid = valid.loss;
        best = net.snapshot();
        best_epoch = epoch;
        stale = 0;
      } else if (++stale > hyper.patience) {
        break;
      }
    }
    if (best_epoch >= 0) net.restore(best);
    report.best_epoch = best_epoch;
    const EvalResult test = evaluate(Split::test);
    report.test_genre_acc = test.genre_acc;
    report.test_tempo_acc = test.tempo_acc;
    return report;
  }
};

// Convenience wrapper: splits must already be assigned on the items.
inline TrainReport train_source(std::vector<BallroomItem> items, const DlrConfig& cfg,
                                const SourceHyper& hyper, DlrWeights* out_weights,
                                SourceNet* out_net = nullptr) {
  SourceTrainer trainer(std::move(items), cfg, hyper);
  trainer.load_audio();
  TrainReport report = trainer.run();
  if (out_weights) *out_weights = trainer.net.to_dlr_weights();
  if (out_net) *out_net = trainer.net;
  return report;
}

}  // namespace dlr
