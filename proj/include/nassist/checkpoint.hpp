// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container.
//
// Layout: the 8-byte magic "NASSIST1", a little-endian uint64 header length,
// a JSON header, then the raw little-endian tensor bytes. The header lists
// every tensor as {name, dtype, shape, offset, nbytes} with offsets relative
// to the start of the data section, and carries the model config, the full
// vocabulary with its hash, the step counter and free-form trainer state.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "nassist/model.hpp"
#include "nassist/optimizer.hpp"
#include "nassist/vocab.hpp"

namespace nassist {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

struct Checkpoint {
  static constexpr char kMagic[9] = "NASSIST1";

  ModelConfig config;
  std::vector<std::string> vocab;
  std::uint64_t vocab_hash = 0;
  std::uint64_t step = 0;
  nlohmann::json state = nlohmann::json::object();
  std::vector<std::pair<std::string, AnyTensor>> tensors;

  const AnyTensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
Tensor<T> convert(const AnyTensor& t) {
  return std::visit([](const auto& x) { return x.template cast<T>(); }, t);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = 1;
  header["config"] = ckpt.config;
  header["vocab"] = ckpt.vocab;
  header["vocab_hash"] = std::to_string(ckpt.vocab_hash);
  header["step"] = ckpt.step;
  header["state"] = ckpt.state;
  auto& list = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    std::visit(
        [&](const auto& x) {
          using T = typename std::decay_t<decltype(x)>::value_type;
          const std::uint64_t nbytes = x.size() * sizeof(T);
          list.push_back({{"name", name},
                          {"dtype", detail::dtype_name<T>()},
                          {"shape", {x.rows(), x.cols()}},
                          {"offset", offset},
                          {"nbytes", nbytes}});
          offset += nbytes;
        },
        t);
  }
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(Checkpoint::kMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      std::visit(
          [&](const auto& x) {
            using T = typename std::decay_t<decltype(x)>::value_type;
            out.write(reinterpret_cast<const char*>(x.data().data()), static_cast<std::streamsize>(x.size() * sizeof(T)));
          },
          t);
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, Checkpoint::kMagic, 8) != 0) throw CheckpointError(path + " is not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ull << 31)) throw CheckpointError(path + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path + ": truncated header");
  const auto data_start = in.tellg();

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.vocab = header.at("vocab").get<std::vector<std::string>>();
    ckpt.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>());
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.state = header.value("state", nlohmann::json::object());
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto dtype = e.at("dtype").get<std::string>();
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (shape.size() != 2) throw CheckpointError(path + ": tensor " + name + " must have rank 2");
      auto read = [&](auto tag) {
        using T = decltype(tag);
        const std::uint64_t expected = shape[0] * shape[1] * sizeof(T);
        if (expected != nbytes) throw CheckpointError(path + ": tensor " + name + " size does not match its shape");
        Tensor<T> t(shape[0], shape[1]);
        in.seekg(data_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(nbytes));
        if (!in) throw CheckpointError(path + ": truncated data for tensor " + name);
        return t;
      };
      if (dtype == "f32") {
        ckpt.tensors.emplace_back(name, read(float{}));
      } else if (dtype == "f64") {
        ckpt.tensors.emplace_back(name, read(double{}));
      } else {
        throw CheckpointError(path + ": tensor " + name + " has unknown dtype " + dtype);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": malformed header: " + e.what());
  }
  return ckpt;
}

/// Snapshot of a model (and optionally its optimizer) under `vocab`.
template <typename T>
Checkpoint make_checkpoint(const NeuralAssistant<T>& model, const Vocabulary& vocab, std::uint64_t step,
                           const Adam<T>* optimizer = nullptr, nlohmann::json state = nlohmann::json::object()) {
  if (vocab.size() != model.config().vocab_size) {
    throw std::invalid_argument("make_checkpoint: vocabulary has " + std::to_string(vocab.size()) +
                                " tokens but the model expects " + std::to_string(model.config().vocab_size));
  }
  Checkpoint c;
  c.config = model.config();
  c.vocab.assign(vocab.tokens().begin(), vocab.tokens().end());
  c.vocab_hash = vocab.hash();
  c.step = step;
  c.state = std::move(state);
  for (const auto& p : model.params()) c.tensors.emplace_back("param/" + p->name, p->value);
  if (optimizer) {
    c.state["optimizer"] = {{"step", optimizer->step()},
                            {"beta1", optimizer->config().beta1},
                            {"beta2", optimizer->config().beta2},
                            {"epsilon", optimizer->config().epsilon},
                            {"clip_norm", optimizer->config().clip_norm},
                            {"base_rate", optimizer->schedule().base},
                            {"warmup", optimizer->schedule().warmup}};
    for (const auto& [name, mom] : optimizer->moments()) {
      c.tensors.emplace_back("adam.m/" + name, mom.m);
      c.tensors.emplace_back("adam.v/" + name, mom.v);
    }
  }
  return c;
}

/// Vocabulary stored in the checkpoint, verified against its recorded hash.
inline Vocabulary checkpoint_vocabulary(const Checkpoint& c) {
  if (c.vocab.size() < static_cast<std::size_t>(special::kCount)) throw CheckpointError("checkpoint vocabulary is truncated");
  for (TokenId i = 0; i < special::kCount; ++i) {
    if (c.vocab[i] != special::kNames[i]) throw CheckpointError("checkpoint vocabulary has unexpected special tokens");
  }
  Vocabulary v(std::span<const std::string>(c.vocab).subspan(special::kCount));
  if (v.hash() != c.vocab_hash) throw CheckpointError("checkpoint vocabulary does not match its recorded hash");
  return v;
}

/// Rebuilds the model, converting tensors to T when the stored dtype differs.
template <typename T>
NeuralAssistant<T> model_from_checkpoint(const Checkpoint& c) {
  NeuralAssistant<T> model(c.config, 0);
  for (auto& p : model.params()) {
    const auto* t = c.find("param/" + p->name);
    if (!t) throw CheckpointError("checkpoint is missing parameter " + p->name);
    auto value = detail::convert<T>(*t);
    if (!value.same_shape(p->value)) {
      throw CheckpointError("checkpoint parameter " + p->name + " has shape " + shape_string(value.shape()) +
                            ", model expects " + shape_string(p->value.shape()));
    }
    p->value = std::move(value);
  }
  return model;
}

/// Restores optimizer moments and step saved by make_checkpoint.
template <typename T>
void restore_optimizer(Adam<T>& opt, const Checkpoint& c) {
  if (!c.state.contains("optimizer")) throw CheckpointError("checkpoint has no optimizer state");
  std::map<std::string, typename Adam<T>::Moments> moments;
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("adam.m/", 0) == 0) moments[name.substr(7)].m = detail::convert<T>(t);
    if (name.rfind("adam.v/", 0) == 0) moments[name.substr(7)].v = detail::convert<T>(t);
  }
  opt.restore(c.state["optimizer"].at("step").get<std::uint64_t>(), std::move(moments));
}

}  // namespace nassist
