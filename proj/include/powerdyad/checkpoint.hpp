#pragma once

#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "powerdyad/error.hpp"
#include "powerdyad/features.hpp"
#include "powerdyad/models.hpp"
#include "powerdyad/nn/params.hpp"

namespace powerdyad {

/// Binary model container, little-endian:
///
///     "PDYCKPT\0"  u32 version
///     u32 len, config JSON   {"model": ..., "train": ...}
///     u64 embedding fingerprint, u64 training seed
///     4 x f64 standardizer (mean_r, mean_w, std_r, std_w)
///     u32 tensor count, then per tensor: u32 len, name, u32 rows, u32 cols,
///     rows*cols f64 column-major
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  nlohmann::json train = nlohmann::json::object();
  std::uint64_t embedding_fingerprint = 0;
  std::uint64_t seed = 0;
  Standardizer standardizer;
  nn::ParameterSet params;

  std::string serialize() const {
    std::string out("PDYCKPT\0", 8);
    detail::put_le<std::uint32_t>(out, kVersion);
    const auto cfg = nlohmann::json{{"model", to_json(model)}, {"train", train}}.dump();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    detail::put_le<std::uint64_t>(out, embedding_fingerprint);
    detail::put_le<std::uint64_t>(out, seed);
    for (double v : {standardizer.mean[0], standardizer.mean[1], standardizer.stddev[0], standardizer.stddev[1]})
      put_double(out, v);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors().size()));
    for (const auto& t : params.tensors()) {
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      out += t.name;
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
      for (Eigen::Index i = 0; i < t.value.size(); ++i) put_double(out, t.value.data()[i]);
    }
    return out;
  }

  static Checkpoint parse(std::string_view bytes) {
    if (bytes.size() < 12 || bytes.substr(0, 8) != std::string_view("PDYCKPT\0", 8)) {
      throw DataError("not a model checkpoint");
    }
    std::size_t pos = 8;
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    const auto len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw DataError("truncated checkpoint");
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint config is corrupt: ") + e.what());
    }
    pos += len;
    c.model = model_config_from_json(cfg.at("model"));
    c.train = cfg.value("train", nlohmann::json::object());
    c.embedding_fingerprint = detail::get_le<std::uint64_t>(bytes, pos);
    c.seed = detail::get_le<std::uint64_t>(bytes, pos);
    c.standardizer.mean[0] = get_double(bytes, pos);
    c.standardizer.mean[1] = get_double(bytes, pos);
    c.standardizer.stddev[0] = get_double(bytes, pos);
    c.standardizer.stddev[1] = get_double(bytes, pos);
    const auto count = detail::get_le<std::uint32_t>(bytes, pos);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto nlen = detail::get_le<std::uint32_t>(bytes, pos);
      if (pos + nlen > bytes.size()) throw DataError("truncated checkpoint");
      std::string name(bytes.substr(pos, nlen));
      pos += nlen;
      const auto rows = detail::get_le<std::uint32_t>(bytes, pos);
      const auto cols = detail::get_le<std::uint32_t>(bytes, pos);
      const int idx = c.params.add(std::move(name), rows, cols);
      auto& m = c.params[idx];
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = get_double(bytes, pos);
    }
    if (pos != bytes.size()) throw DataError("trailing bytes in checkpoint");
    return c;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static Checkpoint load(const std::string& path) { return parse(read_file(path)); }

  /// Rebuilds the model; fails if the table or the tensor shapes disagree
  /// with what the checkpoint was trained with.
  PowerModel instantiate(std::shared_ptr<const EmbeddingTable> table) const {
    if (table->fingerprint() != embedding_fingerprint) {
      throw DataError("embedding table fingerprint " + hex64(table->fingerprint()) +
                      " does not match checkpoint " + hex64(embedding_fingerprint));
    }
    return PowerModel(model, std::move(table), params);
  }

 private:
  static void put_double(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    detail::put_le<std::uint64_t>(out, bits);
  }
  static double get_double(std::string_view in, std::size_t& pos) {
    const auto bits = detail::get_le<std::uint64_t>(in, pos);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
};

}  // namespace powerdyad
