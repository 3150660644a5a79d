#pragma once

// Model file layout (version 1):
//
//   cellsteer-model\n
//   version 1\n
//   layers <N>\n
//   layer <i> <inputs> <outputs> <relu|identity> <dropout>\n     (N lines)
//   meta <key> <value>\n                                         (optional)
//   payload <bytes>\n
//   <payload>
//
// The payload is little-endian IEEE-754 binary64: for each layer, weights
// (outputs x inputs, row-major) followed by biases.

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cellsteer/nn.hpp"

namespace cellsteer {

inline constexpr const char *kModelMagic = "cellsteer-model";
inline constexpr int kModelVersion = 1;

using ModelMetadata = std::map<std::string, std::string>;

struct ModelFile {
  SurrogateModel model;
  ModelMetadata metadata;
};

namespace detail {

inline void put_f64(std::string &out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64(const unsigned char *p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

} // namespace detail

inline std::string serialize_model(const SurrogateModel &model, const ModelMetadata &meta = {}) {
  model.validate();
  std::ostringstream header;
  header << kModelMagic << '\n' << "version " << kModelVersion << '\n';
  header << "layers " << model.depth() << '\n';
  std::size_t payload = 0;
  for (std::size_t l = 0; l < model.depth(); ++l) {
    const auto &layer = model.layer(l);
    header << "layer " << l << ' ' << layer.inputs() << ' ' << layer.outputs() << ' '
           << to_string(layer.activation) << ' ' << csv::format_number(layer.dropout_rate) << '\n';
    payload += 8 * (layer.weights.size() + layer.bias.size());
  }
  for (const auto &[k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      fail(ErrorKind::invalid_argument, "metadata key/value not representable: " + k, "metadata");
    header << "meta " << k << ' ' << v << '\n';
  }
  header << "payload " << payload << '\n';

  std::string out = header.str();
  out.reserve(out.size() + payload);
  for (const auto &layer : model.layers()) {
    for (double w : layer.weights.data())
      detail::put_f64(out, w);
    for (double b : layer.bias)
      detail::put_f64(out, b);
  }
  return out;
}

inline ModelFile deserialize_model(const std::string &bytes, const std::string &where = "model") {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto end = bytes.find('\n', pos);
    if (end == std::string::npos)
      fail(ErrorKind::corrupt_file, where + ": truncated header");
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };

  if (next_line() != kModelMagic)
    fail(ErrorKind::corrupt_file, where + ": not a cellsteer model file");
  {
    std::istringstream ls(next_line());
    std::string tag;
    int version = 0;
    if (!(ls >> tag >> version) || tag != "version")
      fail(ErrorKind::corrupt_file, where + ": missing version line");
    if (version != kModelVersion)
      fail(ErrorKind::corrupt_file, where + ": unsupported model version " +
                                        std::to_string(version) + " (expected " +
                                        std::to_string(kModelVersion) + ")");
  }
  std::size_t n_layers = 0;
  {
    std::istringstream ls(next_line());
    std::string tag;
    if (!(ls >> tag >> n_layers) || tag != "layers" || n_layers == 0 || n_layers > 64)
      fail(ErrorKind::corrupt_file, where + ": bad layer count");
  }

  std::vector<Layer> layers(n_layers);
  std::size_t expected_payload = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::istringstream ls(next_line());
    std::string tag, act;
    std::size_t idx = 0, in = 0, out = 0;
    double dropout = 0.0;
    if (!(ls >> tag >> idx >> in >> out >> act >> dropout) || tag != "layer" || idx != l)
      fail(ErrorKind::corrupt_file, where + ": bad descriptor for layer " + std::to_string(l));
    if (in == 0 || out == 0 || in > (1u << 20) || out > (1u << 20))
      fail(ErrorKind::corrupt_file, where + ": layer " + std::to_string(l) + " has bad dimensions");
    if (l > 0 && in != layers[l - 1].outputs())
      fail(ErrorKind::shape_mismatch,
           where + ": layer " + std::to_string(l) + " expects " + std::to_string(in) +
               " inputs but layer " + std::to_string(l - 1) + " emits " +
               std::to_string(layers[l - 1].outputs()),
           "layer " + std::to_string(l));
    layers[l].weights = MatrixR(out, in);
    layers[l].bias.assign(out, 0.0);
    layers[l].activation = activation_from_string(act);
    layers[l].dropout_rate = dropout;
    expected_payload += 8 * (out * in + out);
  }

  ModelMetadata meta;
  std::size_t payload = 0;
  while (true) {
    const std::string line = next_line();
    if (line.starts_with("meta ")) {
      const auto sp = line.find(' ', 5);
      if (sp == std::string::npos)
        fail(ErrorKind::corrupt_file, where + ": bad metadata line");
      meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag >> payload) || tag != "payload")
      fail(ErrorKind::corrupt_file, where + ": missing payload line");
    break;
  }
  if (payload != expected_payload)
    fail(ErrorKind::corrupt_file, where + ": payload size " + std::to_string(payload) +
                                      " does not match layer dimensions");
  if (bytes.size() - pos < payload)
    fail(ErrorKind::corrupt_file, where + ": truncated payload (" +
                                      std::to_string(bytes.size() - pos) + " of " +
                                      std::to_string(payload) + " bytes)");
  if (bytes.size() - pos > payload)
    fail(ErrorKind::corrupt_file, where + ": trailing bytes after payload");

  const auto *p = reinterpret_cast<const unsigned char *>(bytes.data() + pos);
  for (auto &layer : layers) {
    for (auto &w : layer.weights.data()) {
      w = detail::get_f64(p);
      p += 8;
    }
    for (auto &b : layer.bias) {
      b = detail::get_f64(p);
      p += 8;
    }
    if (!layer.weights.all_finite() ||
        !std::all_of(layer.bias.begin(), layer.bias.end(), [](double v) { return std::isfinite(v); }))
      fail(ErrorKind::corrupt_file, where + ": non-finite parameter in payload");
  }
  return {SurrogateModel(std::move(layers)), std::move(meta)};
}

inline void save_model(const SurrogateModel &model, const std::filesystem::path &destination,
                       const ModelMetadata &meta = {}) {
  csv::write_text(destination, serialize_model(model, meta));
}

inline ModelFile load_model_file(const std::filesystem::path &source) {
  std::ifstream in(source, std::ios::binary);
  if (!in)
    fail(ErrorKind::io, "cannot open " + source.string(), "model");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, source.string());
}

inline SurrogateModel load_model(const std::filesystem::path &source) {
  return load_model_file(source).model;
}

/// FNV-1a over the serialized weights; identifies a model snapshot.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string model_hash(const SurrogateModel &model) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(serialize_model(model))));
  return buf;
}

} // namespace cellsteer
