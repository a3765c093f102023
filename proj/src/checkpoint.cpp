// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace semask {

namespace {

using json = nlohmann::json;
using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'S', 'M', 'S', 'K'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<U>(v);
}

void put_floats(std::string& out, std::span<const float> values) {
  for (const float f : values) put_le(out, std::bit_cast<std::uint32_t>(f));
}

json config_json(const ModelConfig& c) {
  const EncoderConfig& e = c.encoder;
  return {{"name", e.name},
          {"patch_size", e.patch_size},
          {"in_channels", e.in_channels},
          {"window", e.window},
          {"embed_dims", e.embed_dims},
          {"depths", e.depths},
          {"heads", e.heads},
          {"semantic_depths", e.semantic_depths},
          {"num_classes", e.num_classes},
          {"mlp_ratio", e.mlp_ratio},
          {"chain_semantic_query", e.chain_semantic_query},
          {"lambda_init", e.lambda_init},
          {"decoder_width", c.decoder.width}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  EncoderConfig& e = c.encoder;
  e.name = j.at("name").get<std::string>();
  e.patch_size = j.at("patch_size").get<Index>();
  e.in_channels = j.at("in_channels").get<Index>();
  e.window = j.at("window").get<Index>();
  e.embed_dims = j.at("embed_dims").get<std::vector<Index>>();
  e.depths = j.at("depths").get<std::vector<Index>>();
  e.heads = j.at("heads").get<std::vector<Index>>();
  e.semantic_depths = j.at("semantic_depths").get<std::vector<Index>>();
  e.num_classes = j.at("num_classes").get<Index>();
  e.mlp_ratio = j.at("mlp_ratio").get<Index>();
  e.chain_semantic_query = j.at("chain_semantic_query").get<bool>();
  e.lambda_init = j.at("lambda_init").get<double>();
  c.decoder.width = j.at("decoder_width").get<Index>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const SeMaskModel<float>& model, Index iteration,
                     std::uint64_t seed, const AdamWState<float>* optimizer) {
  std::string payload;
  json directory = json::array();
  auto add = [&](const std::string& name, const Shape& shape, std::span<const float> values) {
    directory.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()}});
    put_floats(payload, values);
  };
  const std::vector<NamedTensor<float>> params = model.parameters();
  for (const auto& [name, t] : params) add(name, t.shape(), t.data());

  json header = {{"config", config_json(model.config())},
                 {"iteration", iteration},
                 {"seed", seed},
                 {"tensors", directory}};
  if (optimizer) {
    json moments = json::array();
    for (const auto& [name, t] : params) {
      const auto m = optimizer->m.find(name), v = optimizer->v.find(name);
      if (m == optimizer->m.end() || v == optimizer->v.end()) continue;
      moments.push_back({{"name", name}, {"offset", payload.size()}, {"size", m->second.size()}});
      put_floats(payload, m->second);
      put_floats(payload, v->second);
    }
    header["optimizer"] = {{"step", optimizer->step},
                           {"beta1", optimizer->beta1},
                           {"beta2", optimizer->beta2},
                           {"eps", optimizer->eps},
                           {"moments", moments}};
  }
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(Kind::kIo, "cannot write checkpoint '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(Kind::kIo, "cannot write checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError(Kind::kIo, "cannot move checkpoint into place at '" + path + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::kIo, "cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string raw = buf.str();
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());

  if (raw.size() < 4 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::kBadMagic, "'" + path + "' is not a checkpoint (bad magic)");
  }
  if (raw.size() < 16) throw CheckpointError(Kind::kTruncated, "'" + path + "': truncated header");
  const auto version = get_le<std::uint32_t>(bytes + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "'" + path + "': checkpoint version " +
                                              std::to_string(version) + ", expected " +
                                              std::to_string(kCheckpointVersion));
  }
  const auto header_len = get_le<std::uint64_t>(bytes + 8);
  if (header_len > raw.size() - 16) {
    throw CheckpointError(Kind::kTruncated, "'" + path + "': truncated header");
  }
  const std::size_t base = 16 + static_cast<std::size_t>(header_len);
  const std::size_t payload_size = raw.size() - base;

  auto floats = [&](std::size_t offset, std::size_t count, const std::string& what) {
    if (offset > payload_size || count > (payload_size - offset) / 4) {
      throw CheckpointError(Kind::kTruncated,
                            "'" + path + "': truncated tensor payload at '" + what + "'");
    }
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes + base + offset + 4 * i));
    }
    return out;
  };

  Checkpoint ck;
  try {
    const json header = json::parse(raw.substr(16, static_cast<std::size_t>(header_len)));
    ck.config = config_from_json(header.at("config"));
    ck.iteration = header.at("iteration").get<Index>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    for (const json& t : header.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const Shape shape = t.at("shape").get<Shape>();
      std::vector<float> values =
          floats(t.at("offset").get<std::size_t>(), static_cast<std::size_t>(shape_numel(shape)), name);
      ck.tensors.emplace_back(name, Tensor<float>(shape, std::move(values)));
    }
    if (const auto o = header.find("optimizer"); o != header.end()) {
      AdamWState<float> st;
      st.step = o->at("step").get<Index>();
      st.beta1 = o->at("beta1").get<double>();
      st.beta2 = o->at("beta2").get<double>();
      st.eps = o->at("eps").get<double>();
      for (const json& m : o->at("moments")) {
        const std::string name = m.at("name").get<std::string>();
        const auto size = m.at("size").get<std::size_t>();
        const auto offset = m.at("offset").get<std::size_t>();
        st.m[name] = floats(offset, size, "moments of " + name);
        st.v[name] = floats(offset + 4 * size, size, "moments of " + name);
      }
      ck.optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kHeader, "'" + path + "': malformed header: " + e.what());
  }
  return ck;
}

SeMaskModel<float> Checkpoint::model() const {
  SeMaskModel<float> out(config);
  std::map<std::string, const Tensor<float>*> stored;
  for (const auto& [name, t] : tensors) stored[name] = &t;
  for (auto& [name, p] : out.parameters()) {
    const auto it = stored.find(name);
    if (it == stored.end()) {
      throw CheckpointError(Kind::kShapeMismatch,
                            "checkpoint does not match its config: tensor '" + name + "' is missing");
    }
    if (it->second->shape() != p.shape()) {
      throw CheckpointError(Kind::kShapeMismatch,
                            "checkpoint does not match its config: tensor '" + name + "' has shape " +
                                shape_str(it->second->shape()) + ", config expects " +
                                shape_str(p.shape()));
    }
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), p.mutable_data().begin());
    stored.erase(it);
  }
  if (!stored.empty()) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint does not match its config: tensor '" +
                                                    stored.begin()->first + "' is unexpected");
  }
  return out;
}

}  // namespace semask
