#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "titan/common.hpp"
#include "titan/network.hpp"

namespace titan::ck {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

/// A named value block: shape plus flat float32 storage (row-major over the
/// trailing dimensions, matching the tensor layout used everywhere else).
struct TensorBlob {
  std::vector<int> shape;
  ArrayX<float> data;
};

/// Self-describing training snapshot.
///
/// On disk:
///   bytes 0-7    magic "TITANCK1"
///   bytes 8-15   uint64 little-endian JSON header length L
///   bytes 16-    UTF-8 JSON header:
///                  {"meta": {...free-form run metadata...},
///                   "tensors": {name: {"shape": [...], "offset": O, "size": N}}}
///                offsets and sizes count float32 elements in the payload
///   remainder    payload of little-endian IEEE-754 binary32 values
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, TensorBlob> tensors;

  /// Copies current parameter values out of a network's registry.
  template <typename S>
  void store(const std::string& prefix, const std::vector<nn::ParamRef<S>>& refs) {
    for (const auto& r : refs) {
      TensorBlob blob;
      blob.shape = r.tensor->shape();
      blob.data = r.tensor->value().template cast<float>();
      tensors[prefix + r.name] = std::move(blob);
    }
  }

  /// Writes stored values back into a network's registry, shape-checked.
  template <typename S>
  void restore(const std::string& prefix, const std::vector<nn::ParamRef<S>>& refs) const {
    for (const auto& r : refs) {
      const auto it = tensors.find(prefix + r.name);
      if (it == tensors.end())
        throw InvalidInput("checkpoint: missing tensor '" + prefix + r.name + "'");
      if (it->second.shape != r.tensor->shape())
        throw InvalidInput("checkpoint: tensor '" + prefix + r.name + "' has shape " +
                           ad::shape_str(it->second.shape) + ", model expects " +
                           ad::shape_str(r.tensor->shape()));
      r.tensor->raw() = it->second.data.template cast<S>();
    }
  }

  /// Flat-array convenience for optimizer state and similar bookkeeping.
  template <typename S>
  void store_array(const std::string& name, const ArrayX<S>& a) {
    tensors[name] = TensorBlob{{static_cast<int>(a.size())}, a.template cast<float>()};
  }

  template <typename S>
  ArrayX<S> load_array(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw InvalidInput("checkpoint: missing tensor '" + name + "'");
    return it->second.data.template cast<S>();
  }
};

namespace detail {

inline std::int64_t blob_elems(const TensorBlob& b) {
  std::int64_t n = 1;
  for (int d : b.shape) n *= d;
  return n;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'T', 'I', 'T', 'A', 'N', 'C', 'K', '1'};

/// Atomic save: the file appears under its final name only once fully written.
inline void save(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["meta"] = ck.meta;
  nlohmann::json tens = nlohmann::json::object();
  std::int64_t offset = 0;
  for (const auto& [name, blob] : ck.tensors) {
    const std::int64_t n = detail::blob_elems(blob);
    if (n != blob.data.size())
      throw InvalidInput("checkpoint: tensor '" + name + "' shape/size mismatch");
    tens[name] = {{"shape", blob.shape}, {"offset", offset}, {"size", n}};
    offset += n;
  }
  header["tensors"] = std::move(tens);
  const std::string htext = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out.write(kCheckpointMagic, 8);
    const std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, blob] : ck.tensors)
      out.write(reinterpret_cast<const char*>(blob.data.data()),
               static_cast<std::streamsize>(blob.data.size()) * 4);
    if (!out) throw IoError(tmp.string() + ": write failure");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw IoError(path.string() + ": not a checkpoint file (bad magic)", 0);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (in.gcount() != 8) throw IoError(path.string() + ": truncated header length", 8);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::uint64_t>(in.gcount()) != hlen)
    throw IoError(path.string() + ": truncated JSON header", 16 + in.gcount());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": header is not valid JSON: " + e.what(),
                  16 + static_cast<std::int64_t>(e.byte));
  }
  if (!header.contains("meta") || !header.contains("tensors"))
    throw IoError(path.string() + ": header missing 'meta' or 'tensors'");

  Checkpoint ck;
  ck.meta = header["meta"];
  const std::int64_t payload_base = 16 + static_cast<std::int64_t>(hlen);
  for (const auto& [name, entry] : header["tensors"].items()) {
    if (!entry.contains("shape") || !entry.contains("offset") || !entry.contains("size"))
      throw IoError(path.string() + ": tensor entry '" + name + "' malformed");
    TensorBlob blob;
    blob.shape = entry["shape"].get<std::vector<int>>();
    const std::int64_t off = entry["offset"].get<std::int64_t>();
    const std::int64_t n = entry["size"].get<std::int64_t>();
    if (n != detail::blob_elems(blob))
      throw IoError(path.string() + ": tensor '" + name + "' size disagrees with shape");
    blob.data.resize(n);
    in.seekg(payload_base + off * 4);
    in.read(reinterpret_cast<char*>(blob.data.data()), n * 4);
    if (in.gcount() != n * 4)
      throw IoError(path.string() + ": truncated payload for tensor '" + name + "'",
                    payload_base + off * 4 + in.gcount());
    ck.tensors.emplace(name, std::move(blob));
  }
  return ck;
}

}  // namespace titan::ck
