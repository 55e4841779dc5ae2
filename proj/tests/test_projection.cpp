#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "titan/projection.hpp"
#include "titan/rng.hpp"

namespace {

using titan::ArrayXX;
using titan::PointCloud;
using titan::ProjectionConfig;
using titan::RangeImage;
using titan::Rng;

PointCloud<double> make_cloud(const std::vector<std::array<double, 4>>& pts) {
  PointCloud<double> c;
  c.pts.resize(static_cast<std::int64_t>(pts.size()), 4);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int j = 0; j < 4; ++j) c.pts(static_cast<std::int64_t>(i), j) = pts[i][j];
  return c;
}

PointCloud<double> random_cloud(int n, Rng& rng, double max_elev_deg = 20.0) {
  PointCloud<double> c;
  c.pts.resize(n, 4);
  for (int i = 0; i < n; ++i) {
    const double az = rng.uniform(-titan::kPi, titan::kPi);
    const double el = titan::deg2rad(rng.uniform(-max_elev_deg, max_elev_deg));
    const double r = rng.uniform(2.0, 50.0);
    c.pts(i, 0) = r * std::cos(el) * std::cos(az);
    c.pts(i, 1) = r * std::cos(el) * std::sin(az);
    c.pts(i, 2) = r * std::sin(el);
    c.pts(i, 3) = rng.uniform(0.0, 1.0);
  }
  return c;
}

}  // namespace

TEST_SUITE("projection") {

TEST_CASE("forward point lands on the center column with its range") {
  ProjectionConfig cfg{64, 16, 10.0, -10.0};
  auto img = titan::spherical_project(make_cloud({{10, 0, 0, 0.5}}), cfg);
  int found_u = -1, found_v = -1;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      if (img.mask(v, u)) {
        found_u = u;
        found_v = v;
      }
  CHECK(found_u == cfg.width / 2);
  CHECK(img.range(found_v, found_u) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(img.intensity(found_v, found_u) == doctest::Approx(0.5));
}

TEST_CASE("range channel is the Euclidean norm") {
  ProjectionConfig cfg{64, 16, 45.0, -45.0};
  auto img = titan::spherical_project(make_cloud({{1, 1, 1, 0}}), cfg);
  double stored = -1;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      if (img.mask(v, u)) stored = img.range(v, u);
  CHECK(stored == doctest::Approx(1.7320508).epsilon(1e-6));
}

TEST_CASE("nearest point wins pixel collisions") {
  ProjectionConfig cfg{64, 16, 10.0, -10.0};
  // Same direction, ranges 9 then 5: order must not matter.
  auto img = titan::spherical_project(make_cloud({{9, 0, 0, 0.1}, {5, 0, 0, 0.9}}), cfg);
  double stored = -1, inten = -1;
  int pidx = -1;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      if (img.mask(v, u)) {
        stored = img.range(v, u);
        inten = img.intensity(v, u);
        pidx = img.point_index(v, u);
      }
  CHECK(stored == doctest::Approx(5.0));
  CHECK(inten == doctest::Approx(0.9));
  CHECK(pidx == 1);
  auto img2 = titan::spherical_project(make_cloud({{5, 0, 0, 0.9}, {9, 0, 0, 0.1}}), cfg);
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      if (img2.mask(v, u)) CHECK(img2.range(v, u) == doctest::Approx(5.0));
}

TEST_CASE("stored range equals the norm of stored coordinates everywhere") {
  Rng rng(31);
  auto cloud = random_cloud(5000, rng);
  ProjectionConfig cfg{128, 32, 25.0, -25.0};
  auto img = titan::spherical_project(cloud, cfg);
  int valid = 0;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u) {
      if (!img.mask(v, u)) {
        CHECK(img.range(v, u) == -1.0);
        CHECK(img.point_index(v, u) == -1);
        continue;
      }
      ++valid;
      const double n = std::sqrt(img.x(v, u) * img.x(v, u) + img.y(v, u) * img.y(v, u) +
                                 img.z(v, u) * img.z(v, u));
      CHECK(std::abs(img.range(v, u) - n) <= 1e-5 * n);
    }
  CHECK(valid > 1000);
}

TEST_CASE("nearest-wins holds against brute force on a small cloud") {
  Rng rng(32);
  auto cloud = random_cloud(400, rng);
  ProjectionConfig cfg{32, 8, 25.0, -25.0};
  auto img = titan::spherical_project(cloud, cfg);
  // Recompute the winning range per pixel directly from the formula.
  ArrayXX<double> best = ArrayXX<double>::Constant(cfg.height, cfg.width, -1.0);
  const double fu = titan::deg2rad(25.0), fd = titan::deg2rad(-25.0);
  for (int i = 0; i < 400; ++i) {
    const double x = cloud.pts(i, 0), y = cloud.pts(i, 1), z = cloud.pts(i, 2);
    const double r = std::sqrt(x * x + y * y + z * z);
    const double el = std::asin(z / r);
    if (el < fd || el > fu) continue;
    int u = static_cast<int>(std::floor(0.5 * (1.0 - std::atan2(y, x) / titan::kPi) * cfg.width));
    int v = static_cast<int>(std::floor((1.0 - (el - fd) / (fu - fd)) * cfg.height));
    u = std::min(std::max(u, 0), cfg.width - 1);
    v = std::min(std::max(v, 0), cfg.height - 1);
    if (best(v, u) < 0 || r < best(v, u)) best(v, u) = r;
  }
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      CHECK(img.range(v, u) == doctest::Approx(best(v, u)).epsilon(1e-12));
}

TEST_CASE("points outside the elevation window are dropped") {
  ProjectionConfig cfg{64, 16, 3.0, -25.0};
  // Elevation +45 degrees, above fov_up.
  auto img = titan::spherical_project(make_cloud({{10, 0, 10, 0.5}}), cfg);
  CHECK_FALSE(img.mask.any());
  // On-boundary elevations stay.
  const double e = titan::deg2rad(3.0);
  auto img2 = titan::spherical_project(
      make_cloud({{10 * std::cos(e), 0, 10 * std::sin(e), 0.5}}), cfg);
  CHECK(img2.mask.any());
  int v_at = -1;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      if (img2.mask(v, u)) v_at = v;
  CHECK(v_at == 0);  // top row corresponds to fov_up
}

TEST_CASE("empty cloud gives an all-invalid image, bad values are rejected") {
  ProjectionConfig cfg{16, 4, 3.0, -25.0};
  auto img = titan::spherical_project(PointCloud<double>::empty(), cfg);
  CHECK_FALSE(img.mask.any());
  CHECK((img.range == -1.0).all());
  auto bad = make_cloud({{1, 2, std::numeric_limits<double>::quiet_NaN(), 0}});
  CHECK_THROWS_AS(titan::spherical_project(bad, cfg), titan::InvalidInput);
  ProjectionConfig badcfg{16, 4, -25.0, 3.0};
  CHECK_THROWS_AS(titan::spherical_project(PointCloud<double>::empty(), badcfg),
                  titan::InvalidInput);
}

TEST_CASE("flip negates y only and is an involution") {
  auto cloud = make_cloud({{1, 2, 3, 0.4}, {-5, 0.5, 2, 0.9}});
  auto f = titan::flip_cloud(cloud);
  CHECK(f.pts(0, 0) == 1.0);
  CHECK(f.pts(0, 1) == -2.0);
  CHECK(f.pts(0, 2) == 3.0);
  CHECK(f.pts(0, 3) == 0.4);
  auto ff = titan::flip_cloud(f);
  CHECK((ff.pts == cloud.pts).all());
}

TEST_CASE("projection of a flipped cloud mirrors the projection horizontally") {
  Rng rng(33);
  // Collision-free: one point per azimuth bucket at a fixed elevation.
  std::vector<std::array<double, 4>> pts;
  for (int k = 0; k < 48; ++k) {
    const double az = (k + 0.37) / 48.0 * 2.0 * titan::kPi - titan::kPi;
    const double r = rng.uniform(5.0, 20.0);
    pts.push_back({r * std::cos(az), r * std::sin(az), 0.2, rng.uniform(0.0, 1.0)});
  }
  auto cloud = make_cloud(pts);
  ProjectionConfig cfg{48, 4, 10.0, -10.0};
  auto a = titan::spherical_project(cloud, cfg);
  auto b = titan::spherical_project(titan::flip_cloud(cloud), cfg);
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u) {
      CHECK(a.mask(v, u) == b.mask(v, cfg.width - 1 - u));
      if (a.mask(v, u))
        CHECK(a.range(v, u) == doctest::Approx(b.range(v, cfg.width - 1 - u)).epsilon(1e-12));
    }
}

TEST_CASE("drop_points endpoints, statistics, and determinism") {
  Rng rng(34);
  auto cloud = random_cloud(10000, rng);
  auto same = titan::drop_points(cloud, 0.0, 7);
  CHECK(same.size() == cloud.size());
  CHECK((same.pts == cloud.pts).all());
  auto none = titan::drop_points(cloud, 1.0, 7);
  CHECK(none.size() == 0);
  auto half = titan::drop_points(cloud, 0.5, 7);
  CHECK(half.size() >= 4700);
  CHECK(half.size() <= 5300);
  auto half2 = titan::drop_points(cloud, 0.5, 7);
  CHECK((half.pts == half2.pts).all());
  auto other = titan::drop_points(cloud, 0.5, 8);
  CHECK(half.size() != other.size());  // overwhelmingly likely under distinct seeds
  CHECK_THROWS_AS(titan::drop_points(cloud, 1.5, 7), titan::InvalidInput);
}

TEST_CASE("crop_to_camera_fov column arithmetic") {
  Rng rng(35);
  auto cloud = random_cloud(4000, rng);
  ProjectionConfig cfg{512, 16, 25.0, -25.0};
  auto img = titan::spherical_project(cloud, cfg);

  auto full = titan::crop_to_camera_fov(img, -180.0, 180.0);
  CHECK(full.width == 512);
  CHECK((full.range == img.range).all());

  auto half = titan::crop_to_camera_fov(img, -90.0, 90.0);
  CHECK(half.width == 256);

  auto fwd = titan::crop_to_camera_fov(img, -45.0, 45.0);
  CHECK(fwd.width == 128);
  // Forward direction (center of the original) sits at the crop's center.
  for (int v = 0; v < cfg.height; ++v) {
    CHECK(fwd.range(v, 64) == img.range(v, 256));
    CHECK(fwd.mask(v, 0) == img.mask(v, 192));
    CHECK(fwd.mask(v, 127) == img.mask(v, 319));
  }

  CHECK_THROWS_AS(titan::crop_to_camera_fov(img, 45.0, -45.0), titan::InvalidInput);
  CHECK_THROWS_AS(titan::crop_to_camera_fov(img, -200.0, 0.0), titan::InvalidInput);
}

TEST_CASE("labels ride along through point_index") {
  ProjectionConfig cfg{64, 16, 10.0, -10.0};
  auto img = titan::spherical_project(make_cloud({{9, 0, 0, 0.1}, {5, 0, 0, 0.9}}), cfg);
  std::vector<std::uint32_t> labels = {0x00010003u, 0x00020007u};  // low 16 bits: 3 and 7
  auto seg = titan::project_labels(img, labels);
  int nonzero = 0;
  for (int v = 0; v < cfg.height; ++v)
    for (int u = 0; u < cfg.width; ++u)
      if (seg(v, u) != 0) {
        ++nonzero;
        CHECK(seg(v, u) == 7);  // nearer point's label
      }
  CHECK(nonzero == 1);
  std::vector<std::uint32_t> short_labels = {1u};
  CHECK_THROWS_AS(titan::project_labels(img, short_labels), titan::InvalidInput);
}

}  // TEST_SUITE
