#pragma once

// Deterministic generator of rhythm-labelled audio: nine onset grids over a
// two-bar cycle at 16th-note resolution, rendered as decaying bursts at a
// controlled BPM. Stands in for rhythm-genre corpora at desk scale.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dlr/audio_io.hpp"
#include "dlr/tensor.hpp"

namespace dlr {

enum class Timbre { click, noise_burst, tone_burst };

inline const char* timbre_name(Timbre t) {
  switch (t) {
    case Timbre::click: return "click";
    case Timbre::noise_burst: return "noise";
    default: return "tone";
  }
}

struct RhythmSpec {
  int pattern_id = 0;
  double bpm = 120.0;
  Timbre timbre = Timbre::click;
  uint64_t seed = 0;
};

constexpr int kPatternSlots = 32;  // two 4/4 bars at 16th-note resolution
constexpr int kCycleBeats = 8;
constexpr int kNumPatterns = 9;

struct PatternDef {
  const char* name;
  const char* grid;   // 32 chars: 'X' accent, 'x' medium, '.' rest
  const char* family; // steady / swing / clave
  bool syncopated;
};

// Grids are chosen so their inter-onset-interval profiles stay distinct
// under arbitrary time shifts (crops never see the downbeat reliably).
inline const std::array<PatternDef, kNumPatterns>& pattern_table() {
  static const std::array<PatternDef, kNumPatterns> table = {{
      {"quarters", "X...x...x...x...X...x...x...x...", "steady", false},
      {"eighths", "X.x.x.x.x.x.x.x.X.x.x.x.x.x.x.x.", "steady", false},
      {"sixteens", "Xxxxxxxxxxxxxxxx" "Xxxxxxxxxxxxxxxx", "steady", false},
      {"gallop", "X..xX..xX..xX..x" "X..xX..xX..xX..x", "swing", true},
      {"pairs", "X.x.....X.x....." "X.x.....X.x.....", "clave", true},
      {"shuffle", "X..x..x.X..x..x." "X..x..x.X..x..x.", "swing", true},
      {"clave", "X..x..x...x.x..." "X..x..x...x.x...", "clave", true},
      {"weave", "X.xx.xx.x.xx.xx." "X.xx.xx.x.xx.xx.", "clave", true},
      {"halves", "X.......x......." "X.......x.......", "steady", false},
  }};
  return table;
}

inline int pattern_onset_count(int pattern_id) {
  const char* g = pattern_table()[static_cast<size_t>(pattern_id)].grid;
  int n = 0;
  for (int i = 0; i < kPatternSlots; ++i)
    if (g[i] != '.') ++n;
  return n;
}

inline bool pattern_dense(int pattern_id) { return pattern_onset_count(pattern_id) >= 16; }

// Renders the grid as exponentially decaying bursts (<= 30 ms each, peak
// amplitude 0.8). Deterministic for a given spec and seed.
inline AudioClip render(const RhythmSpec& spec, double duration_s, int rate,
                        const char* custom_grid = nullptr) {
  if (spec.bpm < 60.0 || spec.bpm > 240.0)
    throw std::runtime_error("render: bpm must lie in [60, 240]");
  if (spec.pattern_id < 0 || spec.pattern_id >= kNumPatterns)
    throw std::runtime_error("render: unknown pattern id");
  const double cycle_s = 60.0 * kCycleBeats / spec.bpm;
  if (duration_s < cycle_s)
    throw std::runtime_error("render: duration shorter than one pattern cycle");

  const char* grid =
      custom_grid ? custom_grid : pattern_table()[static_cast<size_t>(spec.pattern_id)].grid;
  const double slot_s = 60.0 / spec.bpm / 4.0;
  const int64_t n = static_cast<int64_t>(std::llround(duration_s * rate));
  AudioClip clip;
  clip.sample_rate = rate;
  clip.channels = 1;
  clip.samples.assign(static_cast<size_t>(n), 0.0f);

  Rng rng(spec.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
  const double tone_freq = 200.0 + 1000.0 * rng.uniform01();

  const int burst_len = static_cast<int>(0.030 * rate);  // 30 ms cap
  std::vector<float> burst(static_cast<size_t>(burst_len));

  for (int64_t k = 0;; ++k) {
    bool any_in_range = false;
    for (int s = 0; s < kPatternSlots; ++s) {
      const char cell = grid[s];
      if (cell == '.') continue;
      const double t = (static_cast<double>(k) * kPatternSlots + s) * slot_s;
      if (t >= duration_s) continue;
      any_in_range = true;
      const int64_t start = std::llround(t * rate);
      const float accent = cell == 'X' ? 1.0f : 0.65f;
      const float jitter = 0.95f + 0.1f * rng.uniform01();
      const float peak = 0.8f * accent * jitter;

      switch (spec.timbre) {
        case Timbre::click: {
          const double tau = 0.004 * rate;
          for (int i = 0; i < burst_len; ++i)
            burst[static_cast<size_t>(i)] = static_cast<float>(std::exp(-i / tau));
          break;
        }
        case Timbre::noise_burst: {
          const double tau = 0.006 * rate;
          for (int i = 0; i < burst_len; ++i)
            burst[static_cast<size_t>(i)] =
                static_cast<float>((2.0f * rng.uniform01() - 1.0f) * std::exp(-i / tau));
          burst[0] = 1.0f;  // pin the peak so amplitude scaling is exact
          break;
        }
        case Timbre::tone_burst: {
          const double tau = 0.008 * rate;
          for (int i = 0; i < burst_len; ++i)
            burst[static_cast<size_t>(i)] = static_cast<float>(
                std::sin(2.0 * 3.14159265358979323846 * tone_freq * i / rate + 1.5707963267948966) *
                std::exp(-i / tau));
          break;
        }
      }
      for (int i = 0; i < burst_len && start + i < n; ++i)
        clip.samples[static_cast<size_t>(start + i)] += peak * burst[static_cast<size_t>(i)];
    }
    if (!any_in_range) break;
    if (static_cast<double>(k + 1) * kPatternSlots * slot_s >= duration_s) break;
  }
  for (auto& v : clip.samples) v = std::clamp(v, -1.0f, 1.0f);
  return clip;
}

// ---- corpus plans ----

struct SynthItem {
  RhythmSpec spec;
  double duration_s = 8.0;
  std::string filename;
  std::string genre;               // pattern name (source corpus)
  std::vector<std::string> tags;   // attribute tags (tag corpus)
};

inline std::pair<double, double> tempo_band(int tempo_class) {
  // interiors of the 112/149/187 BPM classes, with margin for +-2% jitter
  switch (tempo_class) {
    case 0: return {82.0, 109.0};
    case 1: return {115.0, 146.0};
    case 2: return {153.0, 183.0};
    default: return {191.0, 229.0};
  }
}

inline const char* tempo_band_tag(double bpm) {
  if (bpm < 112.0) return "tempo_lt112";
  if (bpm < 149.0) return "tempo_112_149";
  if (bpm < 187.0) return "tempo_149_187";
  return "tempo_ge187";
}

inline std::vector<SynthItem> plan_source_corpus(int n_items, uint64_t seed,
                                                 double duration_s = 8.0) {
  if (n_items < 1) throw std::runtime_error("synth: item count must be positive");
  Rng rng(seed);
  std::vector<SynthItem> items;
  items.reserve(static_cast<size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    SynthItem it;
    it.spec.pattern_id = i % kNumPatterns;
    const auto [lo, hi] = tempo_band(i % 4);
    double bpm = rng.uniform(static_cast<float>(lo), static_cast<float>(hi));
    bpm *= 1.0 + 0.02 * (2.0 * rng.uniform01() - 1.0);  // +-2% jitter
    it.spec.bpm = bpm;
    it.spec.timbre = static_cast<Timbre>(rng.below(3));
    it.spec.seed = rng.next_u64();
    it.duration_s = duration_s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "item_%05d.wav", i);
    it.filename = buf;
    it.genre = pattern_table()[static_cast<size_t>(it.spec.pattern_id)].name;
    items.push_back(std::move(it));
  }
  return items;
}

inline std::vector<SynthItem> plan_tag_corpus(int n_items, uint64_t seed,
                                              double duration_s = 18.0) {
  if (n_items < 1) throw std::runtime_error("synth: item count must be positive");
  Rng rng(seed);
  std::vector<SynthItem> items;
  items.reserve(static_cast<size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    SynthItem it;
    it.spec.pattern_id = i % kNumPatterns;
    const auto [lo, hi] = tempo_band(i % 4);
    double bpm = rng.uniform(static_cast<float>(lo), static_cast<float>(hi));
    bpm *= 1.0 + 0.02 * (2.0 * rng.uniform01() - 1.0);
    it.spec.bpm = bpm;
    // independent of the pattern cycle, so family tags cannot leak timbre
    it.spec.timbre = static_cast<Timbre>(rng.below(3));
    it.spec.seed = rng.next_u64();
    it.duration_s = duration_s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "tag_%05d.wav", i);
    it.filename = buf;
    const PatternDef& p = pattern_table()[static_cast<size_t>(it.spec.pattern_id)];
    it.tags.push_back(tempo_band_tag(bpm));
    it.tags.push_back(std::string("timbre_") + timbre_name(it.spec.timbre));
    it.tags.push_back(std::string("family_") + p.family);
    if (p.syncopated) it.tags.push_back("syncopated");
    if (pattern_dense(it.spec.pattern_id)) it.tags.push_back("dense");
    items.push_back(std::move(it));
  }
  return items;
}

// ---- corpus rendering ----

inline void write_source_manifest(const std::string& path, const std::vector<SynthItem>& items) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("synth: cannot create manifest: " + path);
  os << "path\tgenre\tbpm\n";
  char buf[64];
  for (const auto& it : items) {
    std::snprintf(buf, sizeof(buf), "%.4f", it.spec.bpm);
    os << it.filename << '\t' << it.genre << '\t' << buf << '\n';
  }
  if (!os) throw std::runtime_error("synth: manifest write failed: " + path);
}

inline void write_tag_manifest(const std::string& path, const std::vector<SynthItem>& items) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("synth: cannot create manifest: " + path);
  for (const auto& it : items) {
    os << it.filename << '\t';
    for (size_t t = 0; t < it.tags.size(); ++t) {
      if (t) os << ';';
      os << it.tags[t];
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("synth: manifest write failed: " + path);
}

inline void render_corpus(const std::vector<SynthItem>& items, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("synth: cannot create output directory: " + out_dir);
  for (const auto& it : items) {
    const AudioClip clip = render(it.spec, it.duration_s, kPipelineRate);
    save_wav16((fs::path(out_dir) / it.filename).string(), clip);
  }
}

// Writes WAVs plus manifest.tsv; returns the manifest path.
inline std::string make_source_corpus(int n_items, uint64_t seed, const std::string& out_dir,
                                      double duration_s = 8.0) {
  const auto items = plan_source_corpus(n_items, seed, duration_s);
  render_corpus(items, out_dir);
  const std::string manifest = (std::filesystem::path(out_dir) / "manifest.tsv").string();
  write_source_manifest(manifest, items);
  return manifest;
}

inline std::string make_tag_corpus(int n_items, uint64_t seed, const std::string& out_dir,
                                   double duration_s = 18.0) {
  const auto items = plan_tag_corpus(n_items, seed, duration_s);
  render_corpus(items, out_dir);
  const std::string manifest = (std::filesystem::path(out_dir) / "manifest.tsv").string();
  write_tag_manifest(manifest, items);
  return manifest;
}

}  // namespace dlr
