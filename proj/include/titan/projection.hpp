#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "titan/common.hpp"
#include "titan/rng.hpp"

namespace titan {

/// Unstructured LiDAR sample: one row per point, columns (x, y, z, intensity).
template <typename S>
struct PointCloud {
  ArrayXX<S> pts;  // n x 4

  std::int64_t size() const { return pts.rows(); }
  static PointCloud empty() { return {ArrayXX<S>(0, 4)}; }
};

struct ProjectionConfig {
  int width = 512;
  int height = 64;
  double fov_up = 3.0;    // degrees above horizon
  double fov_down = -25.0;  // degrees, negative below horizon

  void validate() const {
    if (width <= 0 || height <= 0)
      throw InvalidInput("projection config: image extents must be positive");
    if (!(fov_up > fov_down))
      throw InvalidInput("projection config: fov_up must exceed fov_down");
  }

  friend bool operator==(const ProjectionConfig&, const ProjectionConfig&) = default;
};

/// Structured projection: five real channels plus validity. Invalid pixels
/// hold the sentinel -1 in every channel. `point_index` records which cloud
/// point won each pixel (-1 where invalid) so per-point labels can be carried
/// into image space.
template <typename S>
struct RangeImage {
  int width = 0;
  int height = 0;
  ArrayXX<S> x, y, z, intensity, range;  // height x width each
  ArrayXXb mask;
  ArrayXXi point_index;

  static RangeImage invalid(int w, int h) {
    RangeImage img;
    img.width = w;
    img.height = h;
    img.x = ArrayXX<S>::Constant(h, w, S(-1));
    img.y = ArrayXX<S>::Constant(h, w, S(-1));
    img.z = ArrayXX<S>::Constant(h, w, S(-1));
    img.intensity = ArrayXX<S>::Constant(h, w, S(-1));
    img.range = ArrayXX<S>::Constant(h, w, S(-1));
    img.mask = ArrayXXb::Constant(h, w, false);
    img.point_index = ArrayXXi::Constant(h, w, -1);
    return img;
  }
};

/// Maps an azimuth (radians) to the fractional column under the convention
/// u = (1 - az/pi) / 2 * width: forward (az 0) is the center column, the seam
/// (az +/-pi) is at the left/right edge.
inline double azimuth_to_column(double azimuth, int width) {
  return 0.5 * (1.0 - azimuth / kPi) * width;
}

/// Spherical projection of a point cloud to a range image. Each point lands at
/// u from its azimuth and v from its elevation scaled across
/// [fov_down, fov_up]; points outside the elevation window are dropped, and on
/// collisions the nearest point wins.
template <typename S>
RangeImage<S> spherical_project(const PointCloud<S>& cloud, const ProjectionConfig& cfg) {
  cfg.validate();
  if (!cloud.pts.allFinite()) throw InvalidInput("spherical_project: non-finite coordinates");
  RangeImage<S> img = RangeImage<S>::invalid(cfg.width, cfg.height);
  const double fu = deg2rad(cfg.fov_up);
  const double fd = deg2rad(cfg.fov_down);
  const double span = fu - fd;
  for (std::int64_t i = 0; i < cloud.size(); ++i) {
    const double px = cloud.pts(i, 0), py = cloud.pts(i, 1), pz = cloud.pts(i, 2);
    const double r = std::sqrt(px * px + py * py + pz * pz);
    if (r <= 0.0) continue;  // degenerate point at the sensor origin
    const double elev = std::asin(pz / r);
    if (elev < fd || elev > fu) continue;
    const double uf = azimuth_to_column(std::atan2(py, px), cfg.width);
    const double vf = (1.0 - (elev - fd) / span) * cfg.height;
    int u = static_cast<int>(std::floor(uf));
    int v = static_cast<int>(std::floor(vf));
    u = std::min(std::max(u, 0), cfg.width - 1);
    v = std::min(std::max(v, 0), cfg.height - 1);
    if (!img.mask(v, u) || r < static_cast<double>(img.range(v, u))) {
      img.x(v, u) = static_cast<S>(px);
      img.y(v, u) = static_cast<S>(py);
      img.z(v, u) = static_cast<S>(pz);
      img.intensity(v, u) = cloud.pts(i, 3);
      img.range(v, u) = static_cast<S>(r);
      img.mask(v, u) = true;
      img.point_index(v, u) = static_cast<int>(i);
    }
  }
  return img;
}

/// Mirror across the x-z plane (y -> -y). An involution; intensity unchanged.
template <typename S>
PointCloud<S> flip_cloud(const PointCloud<S>& cloud) {
  PointCloud<S> out = cloud;
  out.pts.col(1) = -out.pts.col(1);
  return out;
}

/// Independent Bernoulli(1 - fraction) subsample, deterministic given seed.
template <typename S>
PointCloud<S> drop_points(const PointCloud<S>& cloud, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw InvalidInput("drop_points: fraction must lie in [0,1]");
  if (fraction == 0.0) return cloud;
  Rng rng(seed);
  std::vector<std::int64_t> keep;
  keep.reserve(cloud.size());
  for (std::int64_t i = 0; i < cloud.size(); ++i)
    if (!rng.bernoulli(fraction)) keep.push_back(i);
  PointCloud<S> out;
  out.pts.resize(static_cast<std::int64_t>(keep.size()), 4);
  for (std::size_t j = 0; j < keep.size(); ++j) out.pts.row(j) = cloud.pts.row(keep[j]);
  return out;
}

/// Column slice of a range image covering [azimuth_lo, azimuth_hi] degrees,
/// used to align the LiDAR projection with a camera's field of view.
template <typename S>
RangeImage<S> crop_to_camera_fov(const RangeImage<S>& img, double azimuth_lo_deg,
                                 double azimuth_hi_deg) {
  if (!(azimuth_lo_deg < azimuth_hi_deg))
    throw InvalidInput("crop_to_camera_fov: empty azimuth window");
  if (azimuth_lo_deg < -180.0 || azimuth_hi_deg > 180.0)
    throw InvalidInput("crop_to_camera_fov: window must lie within [-180, 180] degrees");
  // Columns decrease with azimuth, so the window's high edge is the left column.
  const long c0 = std::lround(azimuth_to_column(deg2rad(azimuth_hi_deg), img.width));
  const long c1 = std::lround(azimuth_to_column(deg2rad(azimuth_lo_deg), img.width));
  if (c1 <= c0) throw InvalidInput("crop_to_camera_fov: window narrower than one column");
  const int w = static_cast<int>(c1 - c0);
  RangeImage<S> out;
  out.width = w;
  out.height = img.height;
  out.x = img.x.middleCols(c0, w);
  out.y = img.y.middleCols(c0, w);
  out.z = img.z.middleCols(c0, w);
  out.intensity = img.intensity.middleCols(c0, w);
  out.range = img.range.middleCols(c0, w);
  out.mask = img.mask.middleCols(c0, w);
  out.point_index = img.point_index.middleCols(c0, w);
  return out;
}

/// Per-pixel class ids from per-point labels via the projection's point_index.
/// Invalid pixels get class 0 (void).
template <typename S>
ArrayXXi project_labels(const RangeImage<S>& img, const std::vector<std::uint32_t>& labels) {
  ArrayXXi out = ArrayXXi::Zero(img.height, img.width);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const int pi = img.point_index(v, u);
      if (pi < 0) continue;
      if (pi >= static_cast<int>(labels.size()))
        throw InvalidInput("project_labels: point index exceeds label count");
      out(v, u) = static_cast<int>(labels[pi] & 0xFFFFu);
    }
  return out;
}

}  // namespace titan
