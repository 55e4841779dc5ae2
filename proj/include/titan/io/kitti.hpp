#pragma once

// KITTI-style on-disk layout for paired samples:
//
//   <root>/velodyne/<name>.bin    float32 little-endian (x, y, z, intensity) records
//   <root>/labels/<name>.label    uint32 little-endian per point; class id in the low 16 bits
//   <root>/segments/<name>.png    8-bit indexed camera segment map (palette = class colors)
//   <root>/depth/<name>.png       16-bit grayscale camera depth, value * scale = meters,
//                                 scale stored in the "depth_scale" text chunk
//   <root>/image_2/<name>.png     8-bit RGB painted preview
//   <root>/manifest.json          split -> sample-name lists, class count, palette
//
// Cloud and label round trips are bit-exact; depth quantizes to 16 bits, so the
// round-trip error is at most scale/2 per pixel. Malformed files raise IoError
// with the byte offset where parsing stopped; the path in the message names the
// offending field directory.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "titan/common.hpp"
#include "titan/io/png.hpp"
#include "titan/projection.hpp"
#include "titan/synthdata.hpp"

static_assert(std::endian::native == std::endian::little,
              "sample I/O assumes a little-endian host");

namespace titan::io {

namespace fs = std::filesystem;

inline void write_cloud(const std::string& path, const PointCloud<float>& cloud) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  std::vector<float> buf(static_cast<std::size_t>(cloud.size()) * 4);
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    for (int k = 0; k < 4; ++k) buf[static_cast<std::size_t>(i) * 4 + k] = cloud.pts(i, k);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError(path + ": short write");
}

inline PointCloud<float> read_cloud(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError(path + ": cannot open for reading");
  const std::int64_t size = static_cast<std::int64_t>(f.tellg());
  constexpr std::int64_t rec = 4 * sizeof(float);
  if (size % rec != 0)
    throw IoError(path + ": truncated point record (each point is 16 bytes: x, y, z, intensity)",
                  size - size % rec);
  f.seekg(0);
  std::vector<float> buf(static_cast<std::size_t>(size) / sizeof(float));
  f.read(reinterpret_cast<char*>(buf.data()), size);
  if (!f) throw IoError(path + ": read failed", static_cast<std::int64_t>(f.gcount()));
  PointCloud<float> cloud;
  cloud.pts.resize(size / rec, 4);
  for (Eigen::Index i = 0; i < cloud.pts.rows(); ++i)
    for (int k = 0; k < 4; ++k) cloud.pts(i, k) = buf[static_cast<std::size_t>(i) * 4 + k];
  return cloud;
}

inline void write_labels(const std::string& path, const std::vector<std::uint32_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size() * sizeof(std::uint32_t)));
  if (!f) throw IoError(path + ": short write");
}

// Returns the class ids (low 16 bits of each stored record).
inline std::vector<std::uint32_t> read_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError(path + ": cannot open for reading");
  const std::int64_t size = static_cast<std::int64_t>(f.tellg());
  constexpr std::int64_t rec = sizeof(std::uint32_t);
  if (size % rec != 0)
    throw IoError(path + ": truncated label record (each label is a 4-byte integer)",
                  size - size % rec);
  f.seekg(0);
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(size / rec));
  f.read(reinterpret_cast<char*>(raw.data()), size);
  if (!f) throw IoError(path + ": read failed", static_cast<std::int64_t>(f.gcount()));
  for (auto& v : raw) v &= 0xffffu;
  return raw;
}

// Quantizes depth to 16 bits with a per-image scale (meters per step) stored in
// the PNG "depth_scale" text chunk. Zero stays exactly zero.
inline double write_depth_png(const std::string& path, const ArrayXX<float>& depth) {
  if (depth.size() == 0) throw InvalidInput("write_depth_png: empty depth map");
  if (!depth.isFinite().all() || (depth < 0).any())
    throw InvalidInput("write_depth_png: depth must be finite and non-negative");
  const double max_depth = static_cast<double>(depth.maxCoeff());
  const double scale = (max_depth > 0 ? max_depth : 1.0) / 65535.0;
  ArrayXX<std::uint16_t> q(depth.rows(), depth.cols());
  for (Eigen::Index r = 0; r < depth.rows(); ++r)
    for (Eigen::Index c = 0; c < depth.cols(); ++c) {
      const double steps = std::floor(static_cast<double>(depth(r, c)) / scale + 0.5);
      q(r, c) = static_cast<std::uint16_t>(std::min(steps, 65535.0));
    }
  char scale_str[64];
  std::snprintf(scale_str, sizeof(scale_str), "%.17g", scale);
  write_png_gray16(path, q, {{"depth_scale", scale_str}});
  return scale;
}

inline ArrayXX<float> read_depth_png(const std::string& path, double* scale_out = nullptr) {
  const Gray16Png png = read_png_gray16(path);
  const auto it = png.text.find("depth_scale");
  if (it == png.text.end())
    throw IoError(path + ": missing depth_scale text chunk");
  double scale = 0;
  try {
    scale = std::stod(it->second);
  } catch (const std::exception&) {
    throw IoError(path + ": unparseable depth_scale value '" + it->second + "'");
  }
  if (!(scale > 0) || !std::isfinite(scale))
    throw IoError(path + ": depth_scale must be a positive finite number");
  if (scale_out) *scale_out = scale;
  ArrayXX<float> depth(png.img.rows(), png.img.cols());
  for (Eigen::Index r = 0; r < depth.rows(); ++r)
    for (Eigen::Index c = 0; c < depth.cols(); ++c)
      depth(r, c) = static_cast<float>(png.img(r, c) * scale);
  return depth;
}

inline void write_sample(const std::string& root, const std::string& name,
                         const synth::PairedSample& sample, const synth::Palette& palette) {
  const fs::path base(root);
  for (const char* sub : {"velodyne", "labels", "segments", "depth", "image_2"})
    fs::create_directories(base / sub);
  if (sample.lidar_labels.size() != static_cast<std::size_t>(sample.cloud.size()))
    throw InvalidInput("write_sample: label count does not match point count");
  write_cloud((base / "velodyne" / (name + ".bin")).string(), sample.cloud);
  write_labels((base / "labels" / (name + ".label")).string(), sample.lidar_labels);
  write_png_indexed8((base / "segments" / (name + ".png")).string(), sample.cam_segments, palette);
  write_depth_png((base / "depth" / (name + ".png")).string(), sample.cam_depth);
  const synth::RgbImage rgb =
      sample.cam_rgb ? *sample.cam_rgb : synth::paint_segments(sample.cam_segments, palette);
  write_png_rgb8((base / "image_2" / (name + ".png")).string(), rgb);
}

inline synth::PairedSample read_sample(const std::string& root, const std::string& name,
                                       synth::Palette* palette_out = nullptr) {
  const fs::path base(root);
  synth::PairedSample s;
  s.cloud = read_cloud((base / "velodyne" / (name + ".bin")).string());
  s.lidar_labels = read_labels((base / "labels" / (name + ".label")).string());
  if (s.lidar_labels.size() != static_cast<std::size_t>(s.cloud.size()))
    throw IoError(root + "/" + name + ": label count " + std::to_string(s.lidar_labels.size()) +
                  " does not match point count " + std::to_string(s.cloud.size()));
  IndexedPng seg = read_png_indexed8((base / "segments" / (name + ".png")).string());
  s.cam_segments = std::move(seg.idx);
  if (palette_out) *palette_out = seg.palette;
  s.cam_depth = read_depth_png((base / "depth" / (name + ".png")).string());
  if (s.cam_depth.rows() != s.cam_segments.rows() || s.cam_depth.cols() != s.cam_segments.cols())
    throw IoError(root + "/" + name + ": depth and segment image sizes differ");
  s.cam_rgb = read_png_rgb8((base / "image_2" / (name + ".png")).string());
  return s;
}

struct Manifest {
  int num_classes = 0;
  synth::Palette palette;
  std::map<std::string, std::vector<std::string>> splits;  // split name -> sample names

  const std::vector<std::string>& split(const std::string& name) const {
    const auto it = splits.find(name);
    if (it == splits.end()) throw InvalidInput("manifest has no split named '" + name + "'");
    return it->second;
  }
};

inline void save_manifest(const std::string& root, const Manifest& m) {
  nlohmann::json j;
  j["num_classes"] = m.num_classes;
  j["palette"] = nlohmann::json::array();
  for (const auto& c : m.palette) j["palette"].push_back({c[0], c[1], c[2]});
  j["splits"] = nlohmann::json::object();
  for (const auto& [k, v] : m.splits) j["splits"][k] = v;
  const fs::path final_path = fs::path(root) / "manifest.json";
  const fs::path tmp_path = fs::path(root) / "manifest.json.tmp";
  fs::create_directories(root);
  {
    std::ofstream f(tmp_path);
    if (!f) throw IoError(tmp_path.string() + ": cannot open for writing");
    f << j.dump(2) << "\n";
  }
  fs::rename(tmp_path, final_path);
}

inline Manifest load_manifest(const std::string& root) {
  const fs::path path = fs::path(root) / "manifest.json";
  std::ifstream f(path);
  if (!f) throw IoError(path.string() + ": cannot open for reading");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what(), static_cast<std::int64_t>(e.byte));
  }
  Manifest m;
  try {
    m.num_classes = j.at("num_classes").get<int>();
    for (const auto& c : j.at("palette")) {
      if (!c.is_array() || c.size() != 3) throw InvalidInput("palette entries must be [r,g,b]");
      m.palette.push_back({c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(),
                           c[2].get<std::uint8_t>()});
    }
    for (const auto& [k, v] : j.at("splits").items())
      m.splits[k] = v.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return m;
}

inline std::vector<synth::PairedSample> load_split(const std::string& root,
                                                   const Manifest& manifest,
                                                   const std::string& split) {
  std::vector<synth::PairedSample> out;
  out.reserve(manifest.split(split).size());
  for (const std::string& name : manifest.split(split)) out.push_back(read_sample(root, name));
  return out;
}

}  // namespace titan::io
