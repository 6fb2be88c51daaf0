#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mpcg/core/errors.hpp"
#include "mpcg/nn/mpcgnet.hpp"

namespace mpcg::nn {

/// One serialized tensor from a checkpoint file.
struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
  // the build targets little-endian hosts; raw writes are the wire format
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace detail

/// Serializes the registry in order. Format: magic "MPCG", u32 version = 1,
/// u32 tensor count; per tensor u16 name length, UTF-8 name, u8 rank,
/// u32 extents, raw little-endian float32 payload.
inline void save_checkpoint(const std::string& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
  os.write("MPCG", 4);
  detail::write_le<std::uint32_t>(os, 1);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_le<std::uint8_t>(os, 4);
    const Shape& s = p.tensor.shape();
    for (int e : {s.n, s.c, s.h, s.w}) {
      detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    }
    os.write(reinterpret_cast<const char*>(p.tensor.data()),
             static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
  }
  if (!os) throw DataError("checkpoint: write failed: " + path);
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MPCG", 4) != 0) {
    throw DataError("checkpoint: bad magic, expected MPCG: " + path);
  }
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != 1) {
    throw DataError("checkpoint: unsupported format version " +
                    std::to_string(version));
  }
  const auto count = detail::read_le<std::uint32_t>(is, "tensor count");
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto name_len = detail::read_le<std::uint16_t>(is, "name length");
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    if (!is) throw DataError("checkpoint: truncated while reading name");
    const auto rank = detail::read_le<std::uint8_t>(is, "rank");
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto e = detail::read_le<std::uint32_t>(is, "extent");
      r.extents.push_back(e);
      numel *= e;
    }
    r.values.resize(numel);
    is.read(reinterpret_cast<char*>(r.values.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw DataError("checkpoint: truncated while reading payload of " + r.name);
    records.push_back(std::move(r));
  }
  return records;
}

/// Copies checkpoint values into the registry; names and shapes must match
/// the model exactly.
inline void apply_checkpoint(const std::vector<CheckpointRecord>& records,
                             ParamList& params) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw DataError("checkpoint: missing tensor " + p.name);
    }
    const CheckpointRecord& r = *it->second;
    if (static_cast<std::int64_t>(r.values.size()) != p.tensor.numel()) {
      throw DataError("checkpoint: tensor " + p.name + " has " +
                      std::to_string(r.values.size()) + " values, model expects " +
                      std::to_string(p.tensor.numel()));
    }
    std::copy(r.values.begin(), r.values.end(), p.tensor.data());
  }
  if (by_name.size() != params.size()) {
    throw DataError("checkpoint: file has " + std::to_string(by_name.size()) +
                    " tensors, model expects " + std::to_string(params.size()));
  }
}

/// Reconstructs the network configuration from checkpoint tensor names and
/// shapes, so `eval` and `info` can rebuild the exact model that was trained
/// (including ablation bypasses). Window/head counts are not recoverable from
/// shapes and keep their defaults.
inline NetConfig infer_config(const std::vector<CheckpointRecord>& records) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto has = [&](const std::string& n) { return by_name.count(n) > 0; };
  auto extent = [&](const std::string& n, int axis) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw DataError("checkpoint: missing tensor " + n);
    return static_cast<int>(it->second->extents.at(static_cast<size_t>(axis)));
  };

  NetConfig cfg;
  for (int s = 0; s < 4; ++s) {
    cfg.encoder.widths[static_cast<size_t>(s)] =
        extent("encoder.stage" + std::to_string(s + 1) + ".entry.weight", 0);
  }
  cfg.ablation.no_cgmfe = has("cgmfe1.bypass.weight");
  cfg.ablation.no_wcad = has("wcad3.bypass.weight");
  cfg.ablation.no_dfa = has("dfa1.bypass.weight");
  if (!cfg.ablation.no_cgmfe) {
    cfg.ablation.no_gates = !has("cgmfe1.gates.logits");
    cfg.expansion = extent("cgmfe1.fuse.pwc_in.weight", 0) /
                    (4 * cfg.encoder.widths[0]);
  } else if (!cfg.ablation.no_dfa) {
    cfg.ablation.no_gates = !has("dfa1.gates.logits");
  }
  if (!cfg.ablation.no_dfa) {
    cfg.decoder_width = extent("dfa1.agg.weight", 0) / 3;
  } else if (!cfg.ablation.no_wcad) {
    cfg.decoder_width = extent("wcad3.ffn.pwc_out.weight", 0);
  } else {
    cfg.decoder_width = extent("wcad3.bypass.weight", 0);
  }
  return cfg;
}

}  // namespace mpcg::nn
