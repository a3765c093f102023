// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace semask {

namespace {

using json = nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError((where.empty() ? "" : where + ".") + key + ": unknown key");
    }
  }
}

template <typename V>
void read(const json& obj, const char* key, const std::string& where, V& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = (where.empty() ? "" : where + ".") + key;
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean()) throw ConfigError(field + ": expected a boolean");
    } else if constexpr (std::is_integral_v<V>) {
      if (!it->is_number_integer()) throw ConfigError(field + ": expected an integer");
      if constexpr (std::is_unsigned_v<V>) {
        if (it->is_number_unsigned() == false && it->template get<std::int64_t>() < 0) {
          throw ConfigError(field + ": expected a non-negative integer");
        }
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError(field + ": expected a number");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!it->is_string()) throw ConfigError(field + ": expected a string");
    } else {
      if (!it->is_array()) throw ConfigError(field + ": expected an array");
      for (const json& e : *it) {
        if (!e.is_number()) throw ConfigError(field + ": expected an array of numbers");
        if (std::is_integral_v<typename V::value_type> && !e.is_number_integer()) {
          throw ConfigError(field + ": expected an array of integers");
        }
      }
    }
    out = it->template get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

void read_synth(const json& obj, const char* key, const std::string& where, SynthSpec& s) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string at = where + "." + key;
  check_keys(*it, at, {"count", "height", "width", "seed"});
  read(*it, "count", at, s.count);
  read(*it, "height", at, s.height);
  read(*it, "width", at, s.width);
  read(*it, "seed", at, s.seed);
}

json synth_json(const SynthSpec& s) {
  return {{"count", s.count}, {"height", s.height}, {"width", s.width}, {"seed", s.seed}};
}

std::string location(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

void RunConfig::validate() const {
  if (profile != "toy" && profile != "paper") {
    throw ConfigError("profile: expected \"toy\" or \"paper\", got \"" + profile + "\"");
  }
  model.encoder.validate();
  if (model.decoder.width < 1) throw ConfigError("model.decoder_width: must be positive");
  train.validate();
  for (const auto& [name, s] : {std::pair{"data.synth", data.synth}, std::pair{"data.heldout", data.heldout}}) {
    if (s.count < 1) throw ConfigError(std::string(name) + ".count: must be positive");
    if (s.height < 8 || s.width < 8) throw ConfigError(std::string(name) + ": extents must be at least 8");
  }
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

RunConfig default_run_config(const std::string& profile) {
  RunConfig cfg;
  cfg.profile = profile;
  if (profile == "toy") {
    cfg.preset = "toy";
    cfg.model = model_preset("toy", 4);
    cfg.train = TrainConfig::toy();
    cfg.out_dir = "runs/toy";
  } else if (profile == "paper") {
    cfg.preset = "tiny";
    cfg.model = model_preset("tiny", 150);
    cfg.train = TrainConfig::paper();
    cfg.data.synth = {16, 512, 512, 7};
    cfg.data.heldout = {16, 512, 512, 1007};
    cfg.out_dir = "runs/paper";
  } else {
    throw ConfigError("profile: expected \"toy\" or \"paper\", got \"" + profile + "\"");
  }
  return cfg;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": parse error at " + location(text, e.byte) + ": " + e.what());
  }
  check_keys(doc, "", {"profile", "model", "train", "data", "out_dir"});
  std::string profile = "toy";
  read(doc, "profile", "", profile);
  RunConfig cfg = default_run_config(profile);

  if (const auto m = doc.find("model"); m != doc.end()) {
    check_keys(*m, "model",
               {"preset", "num_classes", "decoder_width", "window", "embed_dims", "depths",
                "heads", "semantic_depths", "mlp_ratio", "chain_semantic_query", "lambda_init"});
    Index k = cfg.model.encoder.num_classes;
    read(*m, "num_classes", "model", k);
    if (k < 2) throw ConfigError("model.num_classes: must be at least 2");
    std::string preset = cfg.preset;
    read(*m, "preset", "model", preset);
    if (preset != "custom" && m->contains("preset")) {
      try {
        cfg.model = model_preset(preset, k);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model.preset: ") + e.what());
      }
    }
    cfg.model.encoder.num_classes = k;
    EncoderConfig& e = cfg.model.encoder;
    const EncoderConfig before = e;
    read(*m, "window", "model", e.window);
    read(*m, "embed_dims", "model", e.embed_dims);
    read(*m, "depths", "model", e.depths);
    read(*m, "heads", "model", e.heads);
    read(*m, "semantic_depths", "model", e.semantic_depths);
    read(*m, "mlp_ratio", "model", e.mlp_ratio);
    read(*m, "chain_semantic_query", "model", e.chain_semantic_query);
    read(*m, "lambda_init", "model", e.lambda_init);
    read(*m, "decoder_width", "model", cfg.model.decoder.width);
    if (preset == "custom" || !(e == before)) {
      preset = "custom";
      e.name = "custom";
    }
    cfg.preset = preset;
  }

  if (const auto t = doc.find("train"); t != doc.end()) {
    check_keys(*t, "train",
               {"base_lr", "weight_decay", "alpha", "total_iters", "warmup_iters", "batch_size",
                "crop_size", "scales", "jitter", "seed", "ignore_label"});
    TrainConfig& c = cfg.train;
    read(*t, "base_lr", "train", c.base_lr);
    read(*t, "weight_decay", "train", c.weight_decay);
    read(*t, "alpha", "train", c.alpha);
    read(*t, "total_iters", "train", c.total_iters);
    read(*t, "warmup_iters", "train", c.warmup_iters);
    read(*t, "batch_size", "train", c.batch_size);
    read(*t, "crop_size", "train", c.crop_size);
    read(*t, "scales", "train", c.scales);
    read(*t, "jitter", "train", c.jitter);
    read(*t, "seed", "train", c.seed);
    read(*t, "ignore_label", "train", c.ignore_label);
  }

  if (const auto d = doc.find("data"); d != doc.end()) {
    check_keys(*d, "data", {"root", "synth", "heldout"});
    read(*d, "root", "data", cfg.data.root);
    read_synth(*d, "synth", "data", cfg.data.synth);
    read_synth(*d, "heldout", "data", cfg.data.heldout);
  }
  read(doc, "out_dir", "", cfg.out_dir);

  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string serialize_config(const RunConfig& cfg) {
  const EncoderConfig& e = cfg.model.encoder;
  const TrainConfig& t = cfg.train;
  json doc = {
      {"profile", cfg.profile},
      {"model",
       {{"preset", cfg.preset},
        {"num_classes", e.num_classes},
        {"decoder_width", cfg.model.decoder.width},
        {"window", e.window},
        {"embed_dims", e.embed_dims},
        {"depths", e.depths},
        {"heads", e.heads},
        {"semantic_depths", e.semantic_depths},
        {"mlp_ratio", e.mlp_ratio},
        {"chain_semantic_query", e.chain_semantic_query},
        {"lambda_init", e.lambda_init}}},
      {"train",
       {{"base_lr", t.base_lr},
        {"weight_decay", t.weight_decay},
        {"alpha", t.alpha},
        {"total_iters", t.total_iters},
        {"warmup_iters", t.warmup_iters},
        {"batch_size", t.batch_size},
        {"crop_size", t.crop_size},
        {"scales", t.scales},
        {"jitter", t.jitter},
        {"seed", t.seed},
        {"ignore_label", t.ignore_label}}},
      {"data",
       {{"root", cfg.data.root},
        {"synth", synth_json(cfg.data.synth)},
        {"heldout", synth_json(cfg.data.heldout)}}},
      {"out_dir", cfg.out_dir},
  };
  return doc.dump(2) + "\n";
}

}  // namespace semask
