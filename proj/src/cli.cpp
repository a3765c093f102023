// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "semask/checkpoint.hpp"
#include "semask/config.hpp"
#include "semask/data_eval.hpp"
#include "semask/encoder.hpp"
#include "semask/training.hpp"

namespace fs = std::filesystem;

namespace semask {

namespace {

const std::vector<double> kMultiScaleRatios = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Marker file that keeps two commands from writing into one directory.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".semask.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw std::runtime_error("output directory '" + dir.string() +
                               "' is locked by another run (remove " + path_.string() +
                               " if no run is active)");
    }
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

std::vector<double> parse_scales(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v > 0)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--scales: '" + item + "' is not a positive number");
    }
  }
  if (out.empty()) throw UsageError("--scales: expected a comma-separated list");
  return out;
}

std::pair<Index, Index> parse_pixel(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const std::string hs = text.substr(0, comma), ws = text.substr(comma + 1);
    const Index h = std::stoll(hs, &a), w = std::stoll(ws, &b);
    if (a != hs.size() || b != ws.size()) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::exception&) {
    throw UsageError("--pixel: expected h,w, got '" + text + "'");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
}

struct CommonOptions {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string data;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? default_run_config("toy") : load_config(o.config);
  if (!o.preset.empty()) {
    cfg.model = model_preset(o.preset, cfg.model.encoder.num_classes);
    cfg.preset = o.preset;
  }
  if (o.seed) cfg.train.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.data.empty()) cfg.data.root = o.data;
  cfg.validate();
  return cfg;
}

Dataset training_data(const RunConfig& cfg) {
  const Index k = cfg.model.encoder.num_classes;
  if (!cfg.data.root.empty()) return Dataset::load(cfg.data.root, k);
  const SynthSpec& s = cfg.data.synth;
  return Dataset::in_memory(synth_shapes(s.count, s.height, s.width, k, s.seed), k);
}

Dataset evaluation_data(const RunConfig& cfg, Index k) {
  if (!cfg.data.root.empty()) return Dataset::load(cfg.data.root, k);
  const SynthSpec& s = cfg.data.heldout;
  return Dataset::in_memory(synth_shapes(s.count, s.height, s.width, k, s.seed), k);
}

std::string format_iou(const IouReport& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << r.mean << " (";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (c) s << ' ';
    if (std::isnan(r.per_class[c])) s << "-";
    else s << std::setprecision(3) << r.per_class[c];
  }
  s << ")";
  return s.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const CommonOptions& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = cfg.out_dir;
  DirectoryLock lock(dir);
  write_text(dir / "config.json", serialize_config(cfg));
  const Dataset data = training_data(cfg);

  SeMaskModel<float> model(cfg.model);
  model.init(cfg.train.seed);
  out << "training " << cfg.model.encoder.name << " (" << model.num_parameters()
      << " parameters) on " << data.size() << " images for " << cfg.train.total_iters
      << " iterations\n";

  std::ofstream csv(dir / "train_log.csv", std::ios::binary | std::ios::trunc);
  write_log_header(csv);
  TrainStatus status;
  const Index every = std::max<Index>(1, cfg.train.total_iters / 10);
  train_loop(model, data, cfg.train, status, &csv, [&](const TrainLogRow& r) {
    if ((r.iter + 1) % every == 0 || r.iter + 1 == cfg.train.total_iters) {
      out << "iter " << r.iter + 1 << "  lr " << r.lr << "  L1 " << r.l1 << "  L2 " << r.l2
          << "  LT " << r.lt << "\n";
    }
  });
  save_checkpoint((dir / "checkpoint.smsk").string(), model, status.iteration, cfg.train.seed,
                  &status.optimizer);

  const ConfusionMatrix cm = evaluate(model, data, EvalOptions{cfg.train.crop_size, {}, false});
  out << std::fixed << std::setprecision(4) << "train pixel accuracy " << pixel_accuracy(cm)
      << "  mIoU " << miou(cm).mean << "\n";
  out << "wrote " << (dir / "checkpoint.smsk").string() << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& scales_csv, bool flip, bool single,
             std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("eval: --checkpoint is required");
  const RunConfig cfg = resolve_config(o);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const SeMaskModel<float> model = ck.model();
  const Dataset data = evaluation_data(cfg, model.config().encoder.num_classes);

  struct Mode {
    std::string name;
    EvalOptions options;
  };
  std::vector<Mode> modes;
  if (single || scales_csv.empty()) modes.push_back({"single", {cfg.train.crop_size, {}, false}});
  if (!scales_csv.empty()) {
    modes.push_back({"multi", {cfg.train.crop_size, parse_scales(scales_csv), flip}});
  } else if (!single) {
    modes.push_back({"multi", {cfg.train.crop_size, kMultiScaleRatios, flip}});
  }

  std::ostringstream table;
  table << "mode,class,iou\n";
  for (const Mode& m : modes) {
    const ConfusionMatrix cm = evaluate(model, data, m.options);
    const IouReport r = miou(cm);
    out << m.name << "-scale mIoU " << format_iou(r) << "  pixel accuracy " << std::fixed
        << std::setprecision(4) << pixel_accuracy(cm) << "\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      table << m.name << "," << c << ",";
      if (std::isnan(r.per_class[c])) table << "nan"; else table << std::setprecision(9) << r.per_class[c];
      table << "\n";
    }
    table << m.name << ",mean," << std::setprecision(9) << r.mean << "\n";
  }
  if (!o.out.empty()) {
    DirectoryLock lock(o.out);
    write_text(fs::path(o.out) / "eval.csv", table.str());
  }
  return 0;
}

int cmd_infer(const CommonOptions& o, const std::string& scales_csv, bool flip, std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("infer: --checkpoint is required");
  if (o.data.empty()) throw UsageError("infer: --data is required");
  if (o.out.empty()) throw UsageError("infer: --out is required");
  const RunConfig cfg = resolve_config(o);
  const SeMaskModel<float> model = load_checkpoint(o.checkpoint).model();
  const fs::path src = fs::is_directory(fs::path(o.data) / "images") ? fs::path(o.data) / "images"
                                                                     : fs::path(o.data);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(src)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DatasetError("infer: no .png images in '" + src.string() + "'");
  DirectoryLock lock(o.out);
  const std::vector<double> scales = scales_csv.empty() ? std::vector<double>{} : parse_scales(scales_csv);
  for (const fs::path& f : files) {
    const Image image = read_png_rgb(f.string());
    const LabelMap pred = scales.empty()
                              ? infer_single(model, image, cfg.train.crop_size)
                              : infer_multiscale(model, image, cfg.train.crop_size, scales, flip);
    const std::string stem = f.stem().string();
    write_png_labels((fs::path(o.out) / (stem + ".png")).string(), pred);
    Image color = Image::zeros(pred.height, pred.width, 3);
    for (Index p = 0; p < pred.height * pred.width; ++p) {
      const auto rgb = class_color(pred.labels[static_cast<std::size_t>(p)]);
      for (int c = 0; c < 3; ++c) color.pixels[static_cast<std::size_t>(p * 3 + c)] = rgb[static_cast<std::size_t>(c)] / 255.0f;
    }
    write_png_rgb((fs::path(o.out) / (stem + "_color.png")).string(), color);
  }
  out << "wrote " << files.size() << " predictions to " << o.out << "\n";
  return 0;
}

int cmd_analyze(const CommonOptions& o, int stage, const std::string& pixel, const std::string& which,
                Index sample_index, std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("analyze: --checkpoint is required");
  if (which != "pre" && which != "post" && which != "both") {
    throw UsageError("--which: expected pre, post or both");
  }
  const RunConfig cfg = resolve_config(o);
  const SeMaskModel<float> model = load_checkpoint(o.checkpoint).model();
  const Dataset data = evaluation_data(cfg, model.config().encoder.num_classes);
  if (sample_index < 0 || sample_index >= data.size()) {
    throw UsageError("--index: sample " + std::to_string(sample_index) + " outside [0, " +
                     std::to_string(data.size()) + ")");
  }
  const Sample sample = data.get(sample_index);
  const int stages = model.config().encoder.num_stages();
  if (stage < 1 || stage > stages) {
    throw UsageError("--stage: expected 1.." + std::to_string(stages));
  }
  const Extent ext = stage_extents(model.config().encoder, sample.image.height,
                                   sample.image.width)[static_cast<std::size_t>(stage - 1)];
  auto [h, w] = pixel.empty() ? std::pair<Index, Index>{ext.height / 2, ext.width / 2}
                              : parse_pixel(pixel);

  const fs::path dir = o.out.empty() ? fs::path(cfg.out_dir) / "analysis" : fs::path(o.out);
  DirectoryLock lock(dir);
  std::vector<std::pair<std::string, FeatureSide>> sides;
  if (which != "post") sides.emplace_back("pre", FeatureSide::kPre);
  if (which != "pre") sides.emplace_back("post", FeatureSide::kPost);
  std::vector<SimilarityMap> maps;
  for (const auto& [name, side] : sides) {
    const SimilarityMap m = similarity_map(model, sample.image, stage, h, w, side);
    std::vector<std::uint8_t> gray(m.values.size());
    std::ostringstream csv;
    csv << std::setprecision(17);
    for (Index r = 0; r < m.height; ++r) {
      for (Index c = 0; c < m.width; ++c) {
        const double v = m.values[static_cast<std::size_t>(r * m.width + c)];
        gray[static_cast<std::size_t>(r * m.width + c)] =
            static_cast<std::uint8_t>(std::lround(std::clamp((v + 1.0) / 2.0, 0.0, 1.0) * 255.0));
        csv << (c ? "," : "") << v;
      }
      csv << "\n";
    }
    const std::string base = "similarity_stage" + std::to_string(stage) + "_" + name;
    write_png_gray((dir / (base + ".png")).string(), m.height, m.width, gray);
    write_text(dir / (base + ".csv"), csv.str());
    out << name << ": self-similarity at (" << h << "," << w << ") = " << std::setprecision(17)
        << m.values[static_cast<std::size_t>(h * m.width + w)] << "\n";
    maps.push_back(m);
  }
  if (maps.size() == 2) {
    out << "pre and post maps " << (maps[0].values == maps[1].values ? "identical" : "differ") << "\n";
  }

  // Within-class similarity of both feature sides over the evaluation images.
  double pre = 0, post = 0;
  NoGradGuard guard;
  for (Index i = 0; i < data.size(); ++i) {
    const Sample s = data.get(i);
    const Image normalized = normalize(s.image);
    const ModelOutput<float> fwd = model.forward(to_tensor<float>(std::span<const Image>(&normalized, 1)));
    const StageOutput<float>& so = fwd.stages[static_cast<std::size_t>(stage - 1)];
    const LabelMap labels = resize_labels(s.mask, so.pre.dim(1), so.pre.dim(2));
    pre += within_class_similarity(so.pre.data(), labels, so.pre.dim(3));
    post += within_class_similarity(so.post.data(), labels, so.post.dim(3));
  }
  pre /= static_cast<double>(data.size());
  post /= static_cast<double>(data.size());
  out << std::fixed << std::setprecision(6) << "within-class similarity  pre " << pre << "  post "
      << post << "\n";
  return 0;
}

int cmd_synth(const std::string& root, Index count, Index size, Index classes, std::uint64_t seed,
              std::ostream& out) {
  if (root.empty()) throw UsageError("synth: --out is required");
  DirectoryLock lock(root);
  write_dataset(root, synth_shapes(count, size, size, classes, seed));
  out << "wrote " << count << " samples to " << root << "\n";
  return 0;
}

}  // namespace

std::array<std::uint8_t, 3> class_color(std::int32_t label) {
  if (label == kIgnoreLabel || label < 0) return {0, 0, 0};
  const double hue = std::fmod(0.618033988749895 * static_cast<double>(label), 1.0) * 6.0;
  const double s = 0.65, v = 0.95;
  const double c = v * s, x = c * (1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0)), m = v - c;
  double rgb[3] = {0, 0, 0};
  switch (static_cast<int>(hue)) {
    case 0: rgb[0] = c; rgb[1] = x; break;
    case 1: rgb[0] = x; rgb[1] = c; break;
    case 2: rgb[1] = c; rgb[2] = x; break;
    case 3: rgb[1] = x; rgb[2] = c; break;
    case 4: rgb[0] = x; rgb[2] = c; break;
    default: rgb[0] = c; rgb[2] = x; break;
  }
  std::array<std::uint8_t, 3> out{};
  for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround((rgb[i] + m) * 255.0));
  return out;
}

std::string count_table(const std::vector<std::string>& presets, Index num_classes,
                        Index resolution) {
  std::ostringstream s;
  s << "FLOPs are reported as GFLOPs = 2 x multiply-accumulates over matmuls and convolutions, at "
    << resolution << "x" << resolution << ", K = " << num_classes << "\n";
  s << std::left << std::setw(8) << "preset" << std::right << std::setw(14) << "backbone(M)"
    << std::setw(14) << "semantic(M)" << std::setw(12) << "fpn(M)" << std::setw(12) << "total(M)"
    << std::setw(16) << "backbone(GF)" << std::setw(16) << "semantic(GF)" << std::setw(12)
    << "fpn(GF)" << std::setw(12) << "share(%)" << "\n";
  for (const std::string& name : presets) {
    const ModelConfig cfg = model_preset(name, num_classes);
    const ParamBreakdown p = count_params(cfg.encoder, cfg.decoder);
    const FlopBreakdown f = count_flops(cfg.encoder, cfg.decoder, resolution, resolution);
    s << std::left << std::setw(8) << name << std::right << std::fixed << std::setprecision(3)
      << std::setw(14) << static_cast<double>(p.backbone()) / 1e6 << std::setw(14)
      << static_cast<double>(p.semantic_total()) / 1e6 << std::setw(12)
      << static_cast<double>(p.fpn_decoder) / 1e6 << std::setw(12)
      << static_cast<double>(p.total()) / 1e6 << std::setprecision(2) << std::setw(16)
      << 2 * f.backbone() / 1e9 << std::setw(16) << 2 * f.semantic_total() / 1e9 << std::setw(12)
      << 2 * f.fpn_decoder / 1e9 << std::setw(12) << 100.0 * f.semantic_total() / f.backbone()
      << "\n";
  }
  return s.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SeMask semantic segmentation: train, evaluate and analyse"};
  app.require_subcommand(1);
  CommonOptions o;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool with_preset) {
    sub->add_option("--config", o.config, "run configuration (JSON)");
    if (with_preset) {
      sub->add_option("--preset", o.preset, "model preset")
          ->check(CLI::IsMember({"tiny", "small", "base", "large", "toy"}));
    }
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--data", o.data, "dataset root (images/ and masks/)");
  };

  CLI::App* train = app.add_subcommand("train", "train a model");
  common(train, true);
  CLI::Option* seed_opt = train->add_option("--seed", seed, "training and initialization seed");

  std::string scales_csv, pixel, which = "both";
  bool flip = false, single = false;
  int stage = 1;
  Index sample_index = 0;

  CLI::App* eval = app.add_subcommand("eval", "report mIoU for a checkpoint");
  common(eval, false);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  eval->add_option("--scales", scales_csv, "comma-separated multi-scale ratios");
  eval->add_flag("--flip", flip, "add mirrored views to multi-scale inference");
  eval->add_flag("--single", single, "single-scale inference");

  CLI::App* infer = app.add_subcommand("infer", "write predicted masks");
  common(infer, false);
  infer->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  infer->add_option("--scales", scales_csv, "comma-separated multi-scale ratios");
  infer->add_flag("--flip", flip, "add mirrored views to multi-scale inference");

  CLI::App* analyze = app.add_subcommand("analyze", "feature similarity maps before/after the semantic layer");
  common(analyze, false);
  analyze->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  analyze->add_option("--stage", stage, "stage 1-4")->check(CLI::Range(1, 4));
  analyze->add_option("--pixel", pixel, "target position h,w in stage coordinates");
  analyze->add_option("--which", which, "pre, post or both")
      ->check(CLI::IsMember({"pre", "post", "both"}));
  analyze->add_option("--index", sample_index, "sample index in the evaluation set");

  CLI::App* count = app.add_subcommand("count", "parameter and FLOP table");
  std::string count_preset;
  Index classes = 150, resolution = 512;
  count->add_option("--preset", count_preset, "single preset (default: all)")
      ->check(CLI::IsMember({"tiny", "small", "base", "large", "toy"}));
  count->add_option("--classes", classes, "class count K")->check(CLI::PositiveNumber);
  count->add_option("--resolution", resolution, "square input extent")->check(CLI::PositiveNumber);

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic shapes corpus");
  std::string synth_out;
  Index synth_count = 16, synth_size = 64, synth_classes = 4;
  std::uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "dataset root")->required();
  synth->add_option("--count", synth_count, "number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "square extent")->check(CLI::Range(8, 4096));
  synth->add_option("--classes", synth_classes, "class count K")->check(CLI::Range(2, 255));
  synth->add_option("--seed", synth_seed, "generator seed");

  std::vector<const char*> argv;
  argv.push_back("semask");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  if (*seed_opt) o.seed = seed;

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, scales_csv, flip, single, out);
    if (infer->parsed()) return cmd_infer(o, scales_csv, flip, out);
    if (analyze->parsed()) return cmd_analyze(o, stage, pixel, which, sample_index, out);
    if (count->parsed()) {
      out << count_table(count_preset.empty() ? preset_names() : std::vector<std::string>{count_preset},
                         classes, resolution);
      return 0;
    }
    if (synth->parsed()) return cmd_synth(synth_out, synth_count, synth_size, synth_classes, synth_seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace semask
