#pragma once

// Transfer experiment: train a 2-D conv tagger on Mel-spectrogram, frozen
// DLR, tempogram, or channel-concatenated combinations, and score it with
// rank-based ROC-AUC macro-averaged over tags.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dlr/adam.hpp"
#include "dlr/audio_io.hpp"
#include "dlr/autodiff.hpp"
#include "dlr/dlr_extractor.hpp"
#include "dlr/dsp.hpp"
#include "dlr/nets.hpp"
#include "dlr/source_task.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

struct TagItem {
  std::string audio_path;
  std::vector<uint8_t> tags;  // one flag per vocabulary entry
  Split split = Split::unused;
};

struct TagManifest {
  std::vector<TagItem> items;
  std::vector<std::string> vocabulary;  // sorted tag names
};

// TSV `path<TAB>tag1;tag2;...`, paths relative to the manifest.
inline TagManifest load_tag_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("manifest: cannot open " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<std::pair<std::string, std::vector<std::string>>> raw;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("manifest: malformed line " + std::to_string(line_no) + " in " +
                               manifest_path);
    std::vector<std::string> tags;
    std::stringstream ss(line.substr(tab + 1));
    std::string tag;
    while (std::getline(ss, tag, ';'))
      if (!tag.empty()) tags.push_back(tag);
    if (tags.empty())
      throw std::runtime_error("manifest: item without tags on line " + std::to_string(line_no));
    raw.emplace_back(line.substr(0, tab), std::move(tags));
  }
  TagManifest out;
  for (const auto& [path, tags] : raw)
    for (const auto& t : tags) out.vocabulary.push_back(t);
  std::sort(out.vocabulary.begin(), out.vocabulary.end());
  out.vocabulary.erase(std::unique(out.vocabulary.begin(), out.vocabulary.end()),
                       out.vocabulary.end());
  for (const auto& [path, tags] : raw) {
    TagItem it;
    it.audio_path = (base / path).string();
    it.tags.assign(out.vocabulary.size(), 0);
    for (const auto& t : tags) {
      const auto pos = std::lower_bound(out.vocabulary.begin(), out.vocabulary.end(), t);
      it.tags[static_cast<size_t>(pos - out.vocabulary.begin())] = 1;
    }
    out.items.push_back(std::move(it));
  }
  return out;
}

// seeded random split by fractions; every split non-empty when feasible
inline void split_tag_items(std::vector<TagItem>& items, double train_frac, double valid_frac,
                            uint64_t seed) {
  std::vector<int> idx(items.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(idx);
  const int n = static_cast<int>(items.size());
  const int n_train = static_cast<int>(train_frac * n);
  const int n_valid = static_cast<int>(valid_frac * n);
  for (int i = 0; i < n; ++i) {
    Split s = Split::test;
    if (i < n_train) s = Split::train;
    else if (i < n_train + n_valid) s = Split::valid;
    items[static_cast<size_t>(idx[static_cast<size_t>(i)])].split = s;
  }
}

// ---- representations ----

enum class ReprKind { mel, dlr, tempogram, mel_dlr, mel_tempogram };

inline const char* repr_name(ReprKind k) {
  switch (k) {
    case ReprKind::mel: return "mel";
    case ReprKind::dlr: return "dlr";
    case ReprKind::tempogram: return "tempogram";
    case ReprKind::mel_dlr: return "mel+dlr";
    default: return "mel+tempogram";
  }
}

inline ReprKind parse_repr(const std::string& s) {
  if (s == "mel") return ReprKind::mel;
  if (s == "dlr") return ReprKind::dlr;
  if (s == "tempogram") return ReprKind::tempogram;
  if (s == "mel+dlr") return ReprKind::mel_dlr;
  if (s == "mel+tempogram") return ReprKind::mel_tempogram;
  throw std::runtime_error("unknown representation kind: " + s);
}

struct ReprSpec {
  ReprKind kind = ReprKind::mel;
  const DlrWeights* weights = nullptr;  // required for dlr kinds
  int flux_mu = kFluxMuDefault;
  int tempogram_window = 384;

  bool needs_dlr() const { return kind == ReprKind::dlr || kind == ReprKind::mel_dlr; }
};

// concatenate along the channel axis after truncating to the shorter frame count
inline Tensor concat_features(const Tensor& a, const Tensor& b) {
  const int frames = std::min(a.dim(1), b.dim(1));
  Tensor out({a.dim(0) + b.dim(0), frames});
  for (int r = 0; r < a.dim(0); ++r)
    for (int c = 0; c < frames; ++c) out.at(r, c) = a.at(r, c);
  for (int r = 0; r < b.dim(0); ++r)
    for (int c = 0; c < frames; ++c) out.at(a.dim(0) + r, c) = b.at(r, c);
  return out;
}

inline Tensor build_input(const AudioClip& clip, const ReprSpec& spec) {
  if (spec.needs_dlr() && spec.weights == nullptr)
    throw std::runtime_error("build_input: representation requires DLR weights");
  switch (spec.kind) {
    case ReprKind::mel:
      return db_scale(mel_spectrogram(clip)).values;
    case ReprKind::dlr:
      return extract_dlr(clip, *spec.weights).values;
    case ReprKind::tempogram:
      return tempogram(onset_envelope(clip, spec.flux_mu), spec.tempogram_window).values;
    case ReprKind::mel_dlr:
      return concat_features(db_scale(mel_spectrogram(clip)).values,
                             extract_dlr(clip, *spec.weights).values);
    default:
      return concat_features(
          db_scale(mel_spectrogram(clip)).values,
          tempogram(onset_envelope(clip, spec.flux_mu), spec.tempogram_window).values);
  }
}

// ---- ROC-AUC ----

// Rank-based (Mann-Whitney) AUC with ties counted one half.
inline double roc_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::runtime_error("roc_auc: size mismatch or empty input");
  int64_t n_pos = 0;
  for (uint8_t l : labels) n_pos += l ? 1 : 0;
  const int64_t n_neg = static_cast<int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::runtime_error("roc_auc: needs at least one positive and one negative");
  std::vector<int> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&scores](int a, int b) { return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() &&
           scores[static_cast<size_t>(order[j + 1])] == scores[static_cast<size_t>(order[i])])
      ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k)
      if (labels[static_cast<size_t>(order[k])]) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct MacroAucResult {
  double macro = 0.0;
  std::vector<std::optional<double>> per_tag;
  int skipped = 0;  // single-class tags
};

// scores: (items x tags); tags with a single class are skipped and counted.
inline MacroAucResult macro_roc_auc(const std::vector<std::vector<double>>& scores,
                                    const std::vector<const std::vector<uint8_t>*>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw std::runtime_error("macro_roc_auc: empty input or size mismatch");
  const size_t n_tags = labels[0]->size();
  MacroAucResult res;
  res.per_tag.resize(n_tags);
  double acc = 0.0;
  int counted = 0;
  for (size_t t = 0; t < n_tags; ++t) {
    std::vector<double> s(scores.size());
    std::vector<uint8_t> l(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][t];
      l[i] = (*labels[i])[t];
    }
    int64_t pos = 0;
    for (uint8_t v : l) pos += v ? 1 : 0;
    if (pos == 0 || pos == static_cast<int64_t>(l.size())) {
      ++res.skipped;
      continue;
    }
    const double auc = roc_auc(s, l);
    res.per_tag[t] = auc;
    acc += auc;
    ++counted;
  }
  if (counted == 0) throw std::runtime_error("macro_roc_auc: every tag is single-class");
  res.macro = acc / counted;
  return res;
}

// ---- the tagging network ----

struct TagHyper {
  float lr = 1e-3f;
  int batch = 16;
  int max_epochs = 100;
  int patience = 10;
  int crop_frames = 96;
  int head_channels = 32;
  uint64_t seed = 1;
};

struct TagNet {
  ParamStore params;
  ConvStack head;
  int out_w = -1, out_b = -1;
  int vocab = 0;
  int in_rows = 0;

  // First kernel 4x8, then 3x3; max-pools (2,2)x3 and (4,4) after layers 1-4.
  static TagNet build(int in_rows, int vocab, const TagHyper& hyper, Rng& rng) {
    TagNet net;
    net.vocab = vocab;
    net.in_rows = in_rows;
    const int c = hyper.head_channels;
    std::vector<ConvBlockSpec> specs = {
        {c, 4, 8, 2, 2}, {c, 3, 3, 2, 2}, {c, 3, 3, 2, 2}, {c, 3, 3, 4, 4}, {c, 3, 3, 1, 1}};
    net.head.build(net.params, "tag.conv", 1, specs, rng, hyper.lr);
    if (in_rows < 32)
      throw std::runtime_error("tag net: input needs at least 32 rows to survive the pools");
    net.out_w = net.params.add("tag.out.w", glorot_uniform(rng, {vocab, c}, c, vocab), hyper.lr);
    net.out_b = net.params.add("tag.out.b", Tensor::zeros({vocab}), hyper.lr);
    return net;
  }

  // probabilities in (0, 1), one per vocabulary entry
  int forward(GradientTape& tape, const std::vector<int>& vars, const Tensor& feature,
              BnMode mode) {
    if (feature.dim(1) < 32)
      throw std::runtime_error("tag net: input needs at least 32 frames");
    int x = tape.constant(feature);
    x = tape.reshape(x, {1, feature.dim(0), feature.dim(1)});
    x = head.forward(tape, x, vars, mode);
    x = tape.global_avg_pool_cells(x);
    x = tape.dense(vars[static_cast<size_t>(out_w)], vars[static_cast<size_t>(out_b)], x);
    return tape.sigmoid(x);
  }

  NamedTensors named_tensors() const {
    NamedTensors out;
    for (const auto& e : params.entries) out.emplace_back(e.name, e.value);
    head.append_running(out, "tag.conv");
    return out;
  }

  ParamSnapshot snapshot() const {
    ParamSnapshot s;
    for (const auto& e : params.entries) s.values.push_back(e.value);
    for (const auto& b : head.blocks) {
      s.running.push_back(b.running.mean);
      s.running.push_back(b.running.var);
    }
    return s;
  }
  void restore(const ParamSnapshot& s) {
    for (size_t i = 0; i < params.entries.size(); ++i) params.entries[i].value = s.values[i];
    size_t r = 0;
    for (auto& b : head.blocks) {
      b.running.mean = s.running[r++];
      b.running.var = s.running[r++];
    }
  }
};

struct TagReport {
  std::vector<double> valid_auc;
  double test_macro_auc = 0.0;
  std::vector<std::optional<double>> test_per_tag;
  int test_skipped = 0;
  int best_epoch = -1;
  uint64_t seed = 0;

  void write(const std::string& path, const std::vector<std::string>& vocab) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot create " + path);
    os << "tag,auc\n";
    for (size_t t = 0; t < vocab.size(); ++t) {
      os << vocab[t] << ',';
      if (t < test_per_tag.size() && test_per_tag[t])
        os << *test_per_tag[t];
      else
        os << "skipped";
      os << '\n';
    }
    os << "macro_auc=" << test_macro_auc << "\n";
  }
};

struct TagTrainer {
  TagNet net;
  std::vector<TagItem> items;
  std::vector<Tensor> features;  // aligned with items
  TagHyper hyper;
  std::vector<std::string> vocab;

  TagTrainer(TagManifest manifest, const ReprSpec& spec, const TagHyper& h)
      : items(std::move(manifest.items)), hyper(h), vocab(std::move(manifest.vocabulary)) {
    features.resize(items.size());
    int rows = -1;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].split == Split::unused) continue;
      const AudioClip clip = load_audio_8k(items[i].audio_path);
      features[i] = build_input(clip, spec);
      if (rows < 0) rows = features[i].dim(0);
      if (features[i].dim(0) != rows)
        throw std::runtime_error("train_target: inconsistent feature row counts");
    }
    if (rows < 0) throw std::runtime_error("train_target: no usable items");
    Rng rng(hyper.seed);
    net = TagNet::build(rows, static_cast<int>(vocab.size()), hyper, rng);
  }

  Tensor crop(const Tensor& feat, Rng& rng) const {
    const int frames = feat.dim(1);
    const int w = std::min(hyper.crop_frames, frames);
    const int max_start = frames - w;
    const int start = max_start > 0 ? rng.below(max_start + 1) : 0;
    Tensor out({feat.dim(0), w});
    for (int r = 0; r < feat.dim(0); ++r)
      for (int c = 0; c < w; ++c) out.at(r, c) = feat.at(r, start + c);
    return out;
  }

  double train_step(int idx, Rng& rng) {
    GradientTape tape;
    const std::vector<int> vars = watch_params(tape, net.params);
    const Tensor input = crop(features[static_cast<size_t>(idx)], rng);
    const int probs = net.forward(tape, vars, input, BnMode::train);
    Tensor target({net.vocab});
    for (int t = 0; t < net.vocab; ++t)
      target.at(t) = items[static_cast<size_t>(idx)].tags[static_cast<size_t>(t)] ? 1.0f : 0.0f;
    const int loss = tape.bce_loss(probs, target);
    tape.backward(loss);
    accumulate_grads(tape, net.params, vars);
    return tape.value(loss).data[0];
  }

  std::vector<double> scores_for(const Tensor& feature) {
    GradientTape tape;
    std::vector<int> vars;
    vars.reserve(net.params.entries.size());
    for (const auto& e : net.params.entries) vars.push_back(tape.constant(e.value));
    const int probs = net.forward(tape, vars, feature, BnMode::infer);
    const Tensor& p = tape.value(probs);
    return std::vector<double>(p.data.begin(), p.data.end());
  }

  MacroAucResult evaluate(Split split) {
    std::vector<std::vector<double>> scores;
    std::vector<const std::vector<uint8_t>*> labels;
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].split != split) continue;
      scores.push_back(scores_for(features[i]));
      labels.push_back(&items[i].tags);
    }
    if (scores.empty()) throw std::runtime_error("train_target: empty split");
    return macro_roc_auc(scores, labels);
  }

  TagReport run() {
    TagReport report;
    report.seed = hyper.seed;
    std::vector<int> train_idx;
    for (size_t i = 0; i < items.size(); ++i)
      if (items[i].split == Split::train) train_idx.push_back(static_cast<int>(i));
    if (train_idx.empty()) throw std::runtime_error("train_target: empty train split");

    Rng rng = Rng(hyper.seed).fork(0x7a9);
    double best_auc = -1.0;
    ParamSnapshot best = net.snapshot();
    int best_epoch = -1, stale = 0;
    for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
      rng.shuffle(train_idx);
      double epoch_loss = 0.0;
      for (size_t pos = 0; pos < train_idx.size();) {
        const int bs = std::min<size_t>(static_cast<size_t>(hyper.batch),
                                        train_idx.size() - pos);
        net.params.zero_grad();
        for (int b = 0; b < bs; ++b) epoch_loss += train_step(train_idx[pos + b], rng);
        net.params.step(bs);
        pos += static_cast<size_t>(bs);
      }
      epoch_loss /= static_cast<double>(train_idx.size());
      if (!std::isfinite(epoch_loss))
        throw std::runtime_error("train_target: training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      const double auc = evaluate(Split::valid).macro;
      report.valid_auc.push_back(auc);
      if (auc > best_auc) {
        best_auc = auc;
        best = net.snapshot();
        best_epoch = epoch;
        stale = 0;
      } else if (++stale > hyper.patience) {
        break;
      }
    }
    if (best_epoch >= 0) net.restore(best);
    report.best_epoch = best_epoch;
    const MacroAucResult test = evaluate(Split::test);
    report.test_macro_auc = test.macro;
    report.test_per_tag = test.per_tag;
    report.test_skipped = test.skipped;
    return report;
  }
};

inline TagReport train_target(TagManifest manifest, const ReprSpec& spec, const TagHyper& hyper,
                              TagNet* out_net = nullptr) {
  TagTrainer trainer(std::move(manifest), spec, hyper);
  TagReport report = trainer.run();
  if (out_net) *out_net = trainer.net;
  return report;
}

}  // namespace dlr
