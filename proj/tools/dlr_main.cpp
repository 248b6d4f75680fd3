// Command-line front end: corpus synthesis, feature extraction, source and
// target training, and feature-map visualization.
//
//   dlr synth         --kind source|tags --items N --seed S --out DIR
//   dlr extract       --repr mel|dlr|tempogram [--weights W] --in FILE --out FILE [--csv]
//   dlr train-source  --data DIR --n N --channels C --alpha A --seed S --out W
//   dlr train-target  --data DIR --repr KIND [--weights W] --seed S --out W2
//   dlr visualize     --feature FILE [--frames N] --out IMG.pgm
//
// Every command echoes its effective configuration and seed to stderr before
// doing any work; stdout carries only the documented results.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dlr/audio_io.hpp"
#include "dlr/config.hpp"
#include "dlr/dlr_extractor.hpp"
#include "dlr/dsp.hpp"
#include "dlr/serialize.hpp"
#include "dlr/source_task.hpp"
#include "dlr/synth.hpp"
#include "dlr/target_task.hpp"

namespace {

namespace fs = std::filesystem;

void echo_config(const dlr::RunConfig& cfg) {
  std::string echo = cfg.echo_string();
  std::string prefixed;
  size_t start = 0;
  while (start < echo.size()) {
    size_t end = echo.find('\n', start);
    prefixed += "# " + echo.substr(start, end - start) + "\n";
    start = end + 1;
  }
  std::cerr << prefixed;
}

int cmd_synth(const std::string& kind, int items, uint64_t seed, const std::string& out_dir,
              double duration) {
  if (duration <= 0.0) duration = kind == "tags" ? 18.0 : 8.0;
  dlr::RunConfig cfg({{"command", "synth"},
                      {"kind", kind},
                      {"items", std::to_string(items)},
                      {"seed", std::to_string(seed)},
                      {"out", out_dir},
                      {"duration_s", std::to_string(duration)}});
  echo_config(cfg);
  std::string manifest;
  if (kind == "source")
    manifest = dlr::make_source_corpus(items, seed, out_dir, duration);
  else if (kind == "tags")
    manifest = dlr::make_tag_corpus(items, seed, out_dir, duration);
  else
    throw std::runtime_error("synth: kind must be 'source' or 'tags'");
  std::cout << manifest << "\n";
  return 0;
}

int cmd_extract(const std::string& repr, const std::string& weights_path,
                const std::string& in_path, const std::string& out_path, bool csv,
                int window, int mu) {
  dlr::RunConfig cfg({{"command", "extract"},
                      {"repr", repr},
                      {"weights", weights_path},
                      {"in", in_path},
                      {"out", out_path},
                      {"csv", csv ? "1" : "0"},
                      {"tempogram_window", std::to_string(window)},
                      {"flux_mu", std::to_string(mu)}});
  echo_config(cfg);
  const dlr::AudioClip clip = dlr::load_audio_8k(in_path);
  dlr::Tensor feature;
  if (repr == "mel") {
    feature = dlr::db_scale(dlr::mel_spectrogram(clip)).values;
  } else if (repr == "dlr") {
    if (weights_path.empty()) throw std::runtime_error("extract: --weights required for dlr");
    const dlr::DlrWeights w = dlr::load_weights(weights_path);
    feature = dlr::extract_dlr(clip, w).values;
  } else if (repr == "tempogram") {
    feature = dlr::tempogram(dlr::onset_envelope(clip, mu), window).values;
  } else {
    throw std::runtime_error("extract: repr must be mel, dlr or tempogram");
  }
  if (csv)
    dlr::save_csv(out_path, feature);
  else
    dlr::save_feat(out_path, feature);
  std::cout << feature.dim(0) << " " << feature.dim(1) << "\n";
  return 0;
}

dlr::SplitSizes fraction_split(int n) {
  dlr::SplitSizes sizes;
  sizes.train = static_cast<int>(0.8 * n);
  sizes.valid = static_cast<int>(0.1 * n);
  sizes.test = n - sizes.train - sizes.valid;
  return sizes;
}

int cmd_train_source(const std::string& data_dir, int n_layers, int channels, double alpha,
                     uint64_t seed, const std::string& out_path, const std::string& config_path,
                     int total_override) {
  dlr::RunConfig cfg({{"command", "train-source"},
                      {"data", data_dir},
                      {"n", std::to_string(n_layers)},
                      {"channels", std::to_string(channels)},
                      {"alpha", std::to_string(alpha)},
                      {"seed", std::to_string(seed)},
                      {"out", out_path},
                      {"total_channels", std::to_string(total_override)},
                      {"lr", "0.001"},
                      {"batch", "16"},
                      {"max_epochs", "200"},
                      {"patience", "10"},
                      {"crop_samples", "70125"},
                      {"head_channels", "32"}});
  if (!config_path.empty()) cfg.load_file(config_path);
  echo_config(cfg);

  dlr::DlrConfig dcfg;
  if (total_override == dlr::kDlrTotalChannels)
    dcfg = dlr::build_config(n_layers, channels, alpha);
  else {
    if (n_layers * channels != total_override)
      throw std::runtime_error("train-source: n * channels must equal total_channels");
    dcfg = dlr::custom_config(n_layers, channels, alpha);
  }

  auto items = dlr::exclude_minor_genres(
      dlr::load_source_manifest((fs::path(data_dir) / "manifest.tsv").string()));
  dlr::stratified_split(items, fraction_split(static_cast<int>(items.size())), seed);

  dlr::SourceHyper hyper;
  hyper.lr = static_cast<float>(cfg.real("lr"));
  hyper.batch = static_cast<int>(cfg.integer("batch"));
  hyper.max_epochs = static_cast<int>(cfg.integer("max_epochs"));
  hyper.patience = static_cast<int>(cfg.integer("patience"));
  hyper.crop_samples = static_cast<int>(cfg.integer("crop_samples"));
  hyper.head_channels = static_cast<int>(cfg.integer("head_channels"));
  hyper.seed = seed;

  dlr::DlrWeights weights;
  dlr::TrainReport report = dlr::train_source(items, dcfg, hyper, &weights);
  report.config_echo = cfg.echo_string();
  dlr::save_weights(out_path, weights);
  report.write(out_path + ".report.txt", out_path + ".losses.csv");
  std::cout << "test_genre_accuracy=" << report.test_genre_acc << "\n"
            << "test_tempo_accuracy=" << report.test_tempo_acc << "\n";
  return 0;
}

int cmd_train_target(const std::string& data_dir, const std::string& repr,
                     const std::string& weights_path, uint64_t seed,
                     const std::string& out_path, const std::string& config_path) {
  dlr::RunConfig cfg({{"command", "train-target"},
                      {"data", data_dir},
                      {"repr", repr},
                      {"weights", weights_path},
                      {"seed", std::to_string(seed)},
                      {"out", out_path},
                      {"lr", "0.001"},
                      {"batch", "16"},
                      {"max_epochs", "100"},
                      {"patience", "10"},
                      {"crop_frames", "96"},
                      {"head_channels", "32"},
                      {"tempogram_window", "384"},
                      {"flux_mu", "3"}});
  if (!config_path.empty()) cfg.load_file(config_path);
  echo_config(cfg);

  dlr::TagManifest manifest =
      dlr::load_tag_manifest((fs::path(data_dir) / "manifest.tsv").string());
  dlr::split_tag_items(manifest.items, 0.7, 0.15, seed);

  dlr::ReprSpec spec;
  spec.kind = dlr::parse_repr(repr);
  spec.flux_mu = static_cast<int>(cfg.integer("flux_mu"));
  spec.tempogram_window = static_cast<int>(cfg.integer("tempogram_window"));
  dlr::DlrWeights weights;
  if (spec.needs_dlr()) {
    if (weights_path.empty())
      throw std::runtime_error("train-target: --weights required for DLR representations");
    weights = dlr::load_weights(weights_path);
    spec.weights = &weights;
  }

  dlr::TagHyper hyper;
  hyper.lr = static_cast<float>(cfg.real("lr"));
  hyper.batch = static_cast<int>(cfg.integer("batch"));
  hyper.max_epochs = static_cast<int>(cfg.integer("max_epochs"));
  hyper.patience = static_cast<int>(cfg.integer("patience"));
  hyper.crop_frames = static_cast<int>(cfg.integer("crop_frames"));
  hyper.head_channels = static_cast<int>(cfg.integer("head_channels"));
  hyper.seed = seed;

  const std::vector<std::string> vocab = manifest.vocabulary;
  dlr::TagNet net;
  dlr::TagReport report = dlr::train_target(std::move(manifest), spec, hyper, &net);
  dlr::save_dlrw(out_path, net.named_tensors());
  report.write(out_path + ".auc.csv", vocab);
  std::cout << "test_macro_auc=" << report.test_macro_auc << "\n";
  return 0;
}

int cmd_visualize(const std::string& feature_path, int frames, const std::string& out_path) {
  dlr::RunConfig cfg({{"command", "visualize"},
                      {"feature", feature_path},
                      {"frames", std::to_string(frames)},
                      {"out", out_path}});
  echo_config(cfg);
  const dlr::Tensor feature = dlr::load_feat(feature_path);
  const int w = std::min(frames, feature.dim(1));
  dlr::Tensor window({feature.dim(0), w});
  for (int r = 0; r < feature.dim(0); ++r)
    for (int c = 0; c < w; ++c) window.at(r, c) = feature.at(r, c);
  dlr::save_pgm(out_path, window);
  std::cout << feature.dim(0) << " " << w << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep learned rhythmic representation toolkit"};
  app.require_subcommand(1);

  std::string kind = "source", out_dir, in_path, out_path, weights, repr = "mel", data_dir,
              config_path, feature_path;
  int items = 100, n_layers = 4, channels = 32, frames = 40, window = 384, mu = 3;
  int total_channels = dlr::kDlrTotalChannels;
  double alpha = 13.0, duration = 0.0;  // 0 picks the per-kind default
  uint64_t seed = 1;
  bool csv = false;

  CLI::App* synth = app.add_subcommand("synth", "generate a rhythm corpus");
  synth->add_option("--kind", kind, "source or tags");
  synth->add_option("--items", items)->required();
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_dir)->required();
  synth->add_option("--duration", duration, "seconds per item");

  CLI::App* extract = app.add_subcommand("extract", "extract a feature matrix");
  extract->add_option("--repr", repr, "mel, dlr or tempogram");
  extract->add_option("--weights", weights);
  extract->add_option("--in", in_path)->required();
  extract->add_option("--out", out_path)->required();
  extract->add_flag("--csv", csv, "write CSV instead of FEAT");
  extract->add_option("--tempogram-window", window);
  extract->add_option("--mu", mu);

  CLI::App* ts = app.add_subcommand("train-source", "train DLR weights on the source task");
  ts->add_option("--data", data_dir)->required();
  ts->add_option("--n", n_layers);
  ts->add_option("--channels", channels);
  ts->add_option("--alpha", alpha);
  ts->add_option("--seed", seed);
  ts->add_option("--out", out_path)->required();
  ts->add_option("--config", config_path, "key = value overrides file");
  ts->add_option("--total-channels", total_channels,
                 "override the 128-channel budget for reduced experiments");

  CLI::App* tt = app.add_subcommand("train-target", "train the tagging network");
  tt->add_option("--data", data_dir)->required();
  tt->add_option("--repr", repr, "mel, dlr, tempogram, mel+dlr, mel+tempogram");
  tt->add_option("--weights", weights);
  tt->add_option("--seed", seed);
  tt->add_option("--out", out_path)->required();
  tt->add_option("--config", config_path);

  CLI::App* vis = app.add_subcommand("visualize", "render a feature file as a PGM heatmap");
  vis->add_option("--feature", feature_path)->required();
  vis->add_option("--frames", frames);
  vis->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(kind, items, seed, out_dir, duration);
    if (extract->parsed())
      return cmd_extract(repr, weights, in_path, out_path, csv, window, mu);
    if (ts->parsed())
      return cmd_train_source(data_dir, n_layers, channels, alpha, seed, out_path, config_path,
                              total_channels);
    if (tt->parsed())
      return cmd_train_target(data_dir, repr, weights, seed, out_path, config_path);
    if (vis->parsed()) return cmd_visualize(feature_path, frames, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
