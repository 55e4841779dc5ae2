#pragma once

// Parametric toy world: a ground plane with an optional road strip, axis-aligned
// boxes (cars, buildings, barriers) and vertical cylinders (poles, trunks),
// observed by a spinning LiDAR and a colocated forward-facing pinhole camera.
// One analytic ray caster serves both sensors, so the LiDAR ranges and the
// camera depth map are geometrically consistent by construction.
//
// Conventions: x forward, y left, z up; the sensor sits at (0, 0, sensor_height)
// on a ground plane at z = 0. Scene geometry is described in world coordinates,
// but the emitted point cloud lives in the sensor frame (sensor at the origin),
// matching the on-disk convention and the spherical projection. Camera depth
// stores the Euclidean distance from the sensor to the surface along each pixel
// ray (zero where nothing is hit), which keeps it directly comparable with
// LiDAR ranges along shared rays.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "titan/common.hpp"
#include "titan/projection.hpp"
#include "titan/rng.hpp"

namespace titan::synth {

using Vec3 = Eigen::Vector3d;
using Palette = std::vector<std::array<std::uint8_t, 3>>;

// Interleaved 8-bit RGB image, row-major, top-left origin.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // size = 3 * width * height

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(3) * w * h, 0) {}

  std::uint8_t* at(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  bool operator==(const RgbImage& o) const {
    return width == o.width && height == o.height && rgb == o.rgb;
  }
};

// Axis-aligned box resting on the ground: x in [cx-hx, cx+hx], y in [cy-hy, cy+hy],
// z in [0, height].
struct Box {
  double cx = 0, cy = 0;
  double hx = 1, hy = 1;
  double height = 1;
  std::uint16_t cls = 2;
  double albedo = 0.6;
};

// Vertical cylinder resting on the ground (lateral surface only; the cap is not
// rendered, matching a thin-structure idealization).
struct Cylinder {
  double cx = 0, cy = 0;
  double radius = 0.1;
  double height = 4;
  std::uint16_t cls = 5;
  double albedo = 0.7;
};

// Straight strip on the ground plane passing through the origin with the given
// heading; pixels/returns on the strip take the strip's class and albedo.
struct RoadStrip {
  bool present = false;
  double half_width = 3.0;
  double heading_rad = 0.0;
  std::uint16_t cls = 1;
  double albedo = 0.85;
};

// Sensor rig shared by every scene: LiDAR elevation/azimuth grid plus the
// pinhole camera. The camera looks along +x with a symmetric horizontal FOV;
// square pixels (fy = fx).
struct SensorRig {
  double sensor_height = 1.73;
  int lidar_width = 256;
  int lidar_height = 16;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  double max_range = 80.0;
  int cam_width = 128;
  int cam_height = 32;
  double cam_hfov_deg = 90.0;

  friend bool operator==(const SensorRig&, const SensorRig&) = default;
};

struct SceneSpec {
  std::uint16_t ground_cls = 1;
  double ground_albedo = 0.35;
  RoadStrip road;
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
  Palette palette;  // index = class id; index 0 is the void/no-return class
  std::uint64_t seed = 0;
  SensorRig rig;

  int num_classes() const { return static_cast<int>(palette.size()); }

  void validate() const {
    if (palette.size() < 2 || palette.size() > 256)
      throw InvalidInput("SceneSpec: palette must map between 2 and 256 classes");
    const auto check_cls = [&](std::uint16_t c, const char* what) {
      if (c == 0 || c >= palette.size())
        throw InvalidInput(std::string("SceneSpec: ") + what + " class id out of palette range");
    };
    check_cls(ground_cls, "ground");
    if (!(ground_albedo > 0.0 && ground_albedo <= 1.0))
      throw InvalidInput("SceneSpec: ground albedo must lie in (0, 1]");
    if (road.present) {
      check_cls(road.cls, "road");
      if (!(road.half_width > 0.0)) throw InvalidInput("SceneSpec: road half_width must be positive");
      if (!(road.albedo > 0.0 && road.albedo <= 1.0))
        throw InvalidInput("SceneSpec: road albedo must lie in (0, 1]");
    }
    for (const Box& b : boxes) {
      check_cls(b.cls, "box");
      if (!(b.hx > 0.0 && b.hy > 0.0 && b.height > 0.0))
        throw InvalidInput("SceneSpec: degenerate box (all extents must be positive)");
      if (!(b.albedo > 0.0 && b.albedo <= 1.0))
        throw InvalidInput("SceneSpec: box albedo must lie in (0, 1]");
    }
    for (const Cylinder& c : cylinders) {
      check_cls(c.cls, "cylinder");
      if (!(c.radius > 0.0 && c.height > 0.0))
        throw InvalidInput("SceneSpec: degenerate cylinder (radius and height must be positive)");
      if (!(c.albedo > 0.0 && c.albedo <= 1.0))
        throw InvalidInput("SceneSpec: cylinder albedo must lie in (0, 1]");
    }
    if (rig.lidar_width < 1 || rig.lidar_height < 1)
      throw InvalidInput("SceneSpec: LiDAR grid must be at least 1x1");
    if (!(rig.fov_up_deg > rig.fov_down_deg))
      throw InvalidInput("SceneSpec: fov_up must exceed fov_down");
    if (!(rig.sensor_height > 0.0)) throw InvalidInput("SceneSpec: sensor height must be positive");
    if (!(rig.max_range > 0.0)) throw InvalidInput("SceneSpec: max range must be positive");
    if (rig.cam_width < 1 || rig.cam_height < 1)
      throw InvalidInput("SceneSpec: camera resolution must be at least 1x1");
    if (!(rig.cam_hfov_deg > 0.0 && rig.cam_hfov_deg < 180.0))
      throw InvalidInput("SceneSpec: camera horizontal FOV must lie in (0, 180) degrees");
  }
};

// One LiDAR/camera training pair. The cloud is stored in float32 so that the
// on-disk round trip (float32 records) is exact.
struct PairedSample {
  PointCloud<float> cloud;                   // n x 4: x, y, z, intensity (sensor frame)
  std::vector<std::uint32_t> lidar_labels;   // per-point class ids
  ArrayXXi cam_segments;                     // cam_height x cam_width class ids, 0 = void
  ArrayXX<float> cam_depth;                  // ray distance in meters, 0 where void
  std::optional<RgbImage> cam_rgb;           // palette-painted segments
};

struct Hit {
  bool hit = false;
  double t = std::numeric_limits<double>::infinity();
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  std::uint16_t cls = 0;
  double albedo = 0.0;
};

namespace detail {

inline void consider_ground(const SceneSpec& spec, const Vec3& o, const Vec3& d, Hit& best) {
  if (d.z() >= -1e-12) return;  // parallel to or away from the plane
  const double t = -o.z() / d.z();
  if (t <= 1e-9 || t >= best.t) return;
  Hit h;
  h.hit = true;
  h.t = t;
  h.point = o + t * d;
  h.normal = Vec3(0, 0, 1);
  h.cls = spec.ground_cls;
  h.albedo = spec.ground_albedo;
  if (spec.road.present) {
    const double s = std::sin(spec.road.heading_rad), c = std::cos(spec.road.heading_rad);
    const double lateral = -s * h.point.x() + c * h.point.y();
    if (std::abs(lateral) <= spec.road.half_width) {
      h.cls = spec.road.cls;
      h.albedo = spec.road.albedo;
    }
  }
  best = h;
}

inline void consider_box(const Box& b, const Vec3& o, const Vec3& d, Hit& best) {
  const double lo[3] = {b.cx - b.hx, b.cy - b.hy, 0.0};
  const double hi[3] = {b.cx + b.hx, b.cy + b.hy, b.height};
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int enter_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-14) {
      if (o[a] < lo[a] || o[a] > hi[a]) return;  // parallel and outside the slab
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = a;
    }
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return;
  }
  if (enter_axis < 0 || t_enter <= 1e-9 || t_enter >= best.t) return;
  Hit h;
  h.hit = true;
  h.t = t_enter;
  h.point = o + t_enter * d;
  h.normal = Vec3::Zero();
  h.normal[enter_axis] = d[enter_axis] > 0 ? -1.0 : 1.0;
  h.cls = b.cls;
  h.albedo = b.albedo;
  best = h;
}

inline void consider_cylinder(const Cylinder& c, const Vec3& o, const Vec3& d, Hit& best) {
  const double ox = o.x() - c.cx, oy = o.y() - c.cy;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-16) return;  // ray parallel to the axis never crosses the lateral surface
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double q = ox * ox + oy * oy - c.radius * c.radius;
  const double disc = b * b - 4.0 * a * q;
  if (disc < 0.0) return;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);  // nearer root: entry from outside
  if (t <= 1e-9 || t >= best.t) return;
  const Vec3 p = o + t * d;
  if (p.z() < 0.0 || p.z() > c.height) return;
  Hit h;
  h.hit = true;
  h.t = t;
  h.point = p;
  h.normal = Vec3((p.x() - c.cx) / c.radius, (p.y() - c.cy) / c.radius, 0.0);
  h.cls = c.cls;
  h.albedo = c.albedo;
  best = h;
}

}  // namespace detail

// Nearest intersection of a unit-direction ray with the scene, limited to the
// rig's maximum range. Returns a non-hit when nothing lies in front of the ray.
inline Hit cast_ray(const SceneSpec& spec, const Vec3& origin, const Vec3& dir) {
  Hit best;
  best.t = spec.rig.max_range;
  detail::consider_ground(spec, origin, dir, best);
  for (const Box& b : spec.boxes) detail::consider_box(b, origin, dir, best);
  for (const Cylinder& c : spec.cylinders) detail::consider_cylinder(c, origin, dir, best);
  if (!best.hit) return Hit{};
  return best;
}

// Pinhole intrinsics implied by the rig: principal point at the image center,
// square pixels, fx chosen so the horizontal FOV matches cam_hfov_deg.
struct CameraModel {
  double fx, fy, cx, cy;

  explicit CameraModel(const SensorRig& rig)
      : fx(0.5 * rig.cam_width / std::tan(0.5 * deg2rad(rig.cam_hfov_deg))),
        fy(0.5 * rig.cam_width / std::tan(0.5 * deg2rad(rig.cam_hfov_deg))),
        cx(0.5 * rig.cam_width),
        cy(0.5 * rig.cam_height) {}

  // Unit ray through the center of pixel (u, v). +x forward, u grows to the
  // right (-y), v grows downward (-z).
  Vec3 pixel_ray(int u, int v) const {
    const Vec3 d(1.0, -((u + 0.5) - cx) / fx, -((v + 0.5) - cy) / fy);
    return d.normalized();
  }

  // Pixel containing the projection of a world point (sensor at `origin`),
  // or (-1, -1) when the point lies outside the image or behind the camera.
  std::pair<int, int> project(const Vec3& origin, const Vec3& p, int w, int h) const {
    const Vec3 q = p - origin;
    if (q.x() <= 1e-9) return {-1, -1};
    const double u = cx - fx * q.y() / q.x();
    const double v = cy - fy * q.z() / q.x();
    const int ui = static_cast<int>(std::floor(u));
    const int vi = static_cast<int>(std::floor(v));
    if (ui < 0 || ui >= w || vi < 0 || vi >= h) return {-1, -1};
    return {ui, vi};
  }
};

// Per-pixel palette lookup. Class ids outside the palette are rejected.
inline RgbImage paint_segments(const ArrayXXi& seg, const Palette& palette) {
  RgbImage img(static_cast<int>(seg.cols()), static_cast<int>(seg.rows()));
  for (int y = 0; y < seg.rows(); ++y) {
    for (int x = 0; x < seg.cols(); ++x) {
      const int id = seg(y, x);
      if (id < 0 || id >= static_cast<int>(palette.size()))
        throw InvalidInput("paint_segments: class id " + std::to_string(id) +
                           " not covered by the palette");
      std::uint8_t* px = img.at(x, y);
      px[0] = palette[id][0];
      px[1] = palette[id][1];
      px[2] = palette[id][2];
    }
  }
  return img;
}

// Casts the LiDAR grid and renders the camera analytically from the same
// geometry. Rays are cast through cell centers: LiDAR row v gets elevation
// fov_down + span*(1-(v+0.5)/H) and column u gets azimuth pi*(1-2(u+0.5)/W),
// the exact inverse of the spherical projection's pixel mapping, so each
// return projects back into its originating cell. Misses produce no return.
// The function is a pure function of the spec (bit-identical per spec).
inline PairedSample generate_scene(const SceneSpec& spec) {
  spec.validate();
  const SensorRig& rig = spec.rig;
  const Vec3 origin(0, 0, rig.sensor_height);

  PairedSample out;
  const int w = rig.lidar_width, h = rig.lidar_height;
  const double span = deg2rad(rig.fov_up_deg - rig.fov_down_deg);
  const double fov_down = deg2rad(rig.fov_down_deg);

  std::vector<std::array<float, 4>> pts;
  std::vector<std::uint32_t> labels;
  pts.reserve(static_cast<std::size_t>(w) * h);
  for (int v = 0; v < h; ++v) {
    const double elev = fov_down + span * (1.0 - (v + 0.5) / h);
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int u = 0; u < w; ++u) {
      const double az = kPi * (1.0 - 2.0 * (u + 0.5) / w);
      const Vec3 dir(std::cos(az) * ce, std::sin(az) * ce, se);
      const Hit hit = cast_ray(spec, origin, dir);
      if (!hit.hit) continue;
      const double intensity = hit.albedo * std::abs(dir.dot(hit.normal));
      const Vec3 rel = hit.point - origin;  // sensor frame
      pts.push_back({static_cast<float>(rel.x()), static_cast<float>(rel.y()),
                     static_cast<float>(rel.z()), static_cast<float>(intensity)});
      labels.push_back(hit.cls);
    }
  }
  out.cloud.pts.resize(static_cast<Eigen::Index>(pts.size()), 4);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 4; ++k) out.cloud.pts(static_cast<Eigen::Index>(i), k) = pts[i][k];
  out.lidar_labels = std::move(labels);

  const CameraModel cam(rig);
  out.cam_segments = ArrayXXi::Zero(rig.cam_height, rig.cam_width);
  out.cam_depth = ArrayXX<float>::Zero(rig.cam_height, rig.cam_width);
  for (int v = 0; v < rig.cam_height; ++v) {
    for (int u = 0; u < rig.cam_width; ++u) {
      const Hit hit = cast_ray(spec, origin, cam.pixel_ray(u, v));
      if (!hit.hit) continue;
      out.cam_segments(v, u) = hit.cls;
      out.cam_depth(v, u) = static_cast<float>(hit.t);
    }
  }
  out.cam_rgb = paint_segments(out.cam_segments, spec.palette);
  return out;
}

// Fixed color table for the toy class set (index 0 is void). Classes beyond
// the built-in list get evenly spaced fallback hues.
inline Palette default_palette(int num_classes) {
  if (num_classes < 2 || num_classes > 256)
    throw InvalidInput("default_palette: class count must lie in [2, 256]");
  static const Palette base = {
      {0, 0, 0},        // 0 void
      {81, 0, 81},      // 1 ground
      {0, 0, 142},      // 2 car
      {70, 70, 70},     // 3 building
      {128, 64, 128},   // 4 road
      {153, 153, 153},  // 5 pole
      {140, 100, 60},   // 6 trunk
      {190, 153, 153},  // 7 barrier
  };
  Palette p;
  p.reserve(num_classes);
  for (int i = 0; i < num_classes; ++i) {
    if (i < static_cast<int>(base.size())) {
      p.push_back(base[i]);
    } else {
      const std::uint8_t hue = static_cast<std::uint8_t>(37 * i % 256);
      p.push_back({hue, static_cast<std::uint8_t>(255 - hue), 128});
    }
  }
  return p;
}

// Samples a random scene with the given class count (4 to 8 toy classes).
// Class ids: 1 ground, 2 car, 3 building, then road/pole/trunk/barrier as the
// class count allows. With fewer than 5 classes the road strip still exists
// for intensity structure but is labeled as ground. Deterministic per seed.
inline SceneSpec random_scene(std::uint64_t seed, int num_classes = 4, const SensorRig& rig = {}) {
  if (num_classes < 4 || num_classes > 8)
    throw InvalidInput("random_scene: class count must lie in [4, 8]");
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.rig = rig;
  spec.palette = default_palette(num_classes);
  spec.ground_cls = 1;
  spec.ground_albedo = 0.35;

  spec.road.present = true;
  spec.road.cls = num_classes >= 5 ? 4 : 1;
  spec.road.half_width = rng.uniform(2.5, 4.0);
  spec.road.heading_rad = rng.uniform(-0.35, 0.35);
  spec.road.albedo = 0.85;

  const int n_cars = rng.uniform_int(1, 3);
  for (int i = 0; i < n_cars; ++i) {
    Box b;
    b.cx = rng.uniform(5.0, 16.0);
    b.cy = rng.uniform(-6.0, 6.0);
    b.hx = rng.uniform(0.9, 1.25);
    b.hy = rng.uniform(0.7, 0.9);
    b.height = rng.uniform(1.3, 1.7);
    b.cls = 2;
    b.albedo = rng.uniform(0.55, 0.85);
    spec.boxes.push_back(b);
  }
  const int n_buildings = rng.uniform_int(1, 2);
  for (int i = 0; i < n_buildings; ++i) {
    Box b;
    b.cx = rng.uniform(8.0, 20.0);
    b.cy = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(6.0, 14.0);
    b.hx = rng.uniform(2.0, 5.0);
    b.hy = rng.uniform(1.5, 4.0);
    b.height = rng.uniform(3.0, 8.0);
    b.cls = 3;
    b.albedo = rng.uniform(0.25, 0.45);
    spec.boxes.push_back(b);
  }
  if (num_classes >= 6) {
    const int n_poles = rng.uniform_int(1, 3);
    for (int i = 0; i < n_poles; ++i) {
      Cylinder c;
      c.cx = rng.uniform(4.0, 15.0);
      c.cy = rng.uniform(-8.0, 8.0);
      c.radius = rng.uniform(0.05, 0.12);
      c.height = rng.uniform(3.0, 6.0);
      c.cls = 5;
      c.albedo = rng.uniform(0.6, 0.9);
      spec.cylinders.push_back(c);
    }
  }
  if (num_classes >= 7) {
    const int n_trunks = rng.uniform_int(1, 2);
    for (int i = 0; i < n_trunks; ++i) {
      Cylinder c;
      c.cx = rng.uniform(4.0, 15.0);
      c.cy = rng.uniform(-8.0, 8.0);
      c.radius = rng.uniform(0.15, 0.35);
      c.height = rng.uniform(2.0, 4.0);
      c.cls = 6;
      c.albedo = rng.uniform(0.3, 0.5);
      spec.cylinders.push_back(c);
    }
  }
  if (num_classes >= 8) {
    const int n_barriers = rng.uniform_int(1, 2);
    for (int i = 0; i < n_barriers; ++i) {
      Box b;
      b.cx = rng.uniform(5.0, 14.0);
      b.cy = rng.uniform(-7.0, 7.0);
      b.hx = rng.uniform(1.5, 3.0);
      b.hy = rng.uniform(0.1, 0.2);
      b.height = rng.uniform(0.5, 0.9);
      b.cls = 7;
      b.albedo = rng.uniform(0.5, 0.7);
      spec.boxes.push_back(b);
    }
  }
  spec.validate();
  return spec;
}

}  // namespace titan::synth
