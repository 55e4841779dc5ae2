#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "titan/metrics.hpp"

namespace {

using titan::ArrayX;
using titan::ArrayXX;
using titan::ArrayXXb;
using titan::ArrayXXi;
using titan::MatrixX;
using titan::Rng;
using titan::VectorX;

ArrayXX<double> random_image(int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  ArrayXX<double> img(h, w);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) img(v, u) = rng.uniform(lo, hi);
  return img;
}

// Smoothly varying test image so pyramid levels carry structure.
ArrayXX<double> wavy_image(int h, int w, double phase) {
  ArrayXX<double> img(h, w);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      img(v, u) = 0.5 + 0.25 * std::sin(0.3 * u + phase) + 0.25 * std::cos(0.2 * v - phase);
  return img;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion counts pixel pairs") {
  ArrayXXi gt(1, 4), pred(1, 4);
  gt << 0, 0, 1, 1;    // A A B B
  pred << 0, 1, 1, 1;  // A B B B
  auto cm = titan::confusion(pred, gt, 2);
  CHECK(cm(0, 0) == 1);
  CHECK(cm(0, 1) == 1);
  CHECK(cm(1, 0) == 0);
  CHECK(cm(1, 1) == 2);
  CHECK(cm.sum() == 4);

  auto diag = titan::confusion(gt, gt, 2);
  CHECK(diag(0, 1) == 0);
  CHECK(diag(1, 0) == 0);
  CHECK(diag.sum() == 4);

  Rng rng(61);
  ArrayXXi a(8, 8), b(8, 8);
  for (int i = 0; i < 64; ++i) {
    a(i / 8, i % 8) = static_cast<int>(rng.uniform_int(0, 4));
    b(i / 8, i % 8) = static_cast<int>(rng.uniform_int(0, 4));
  }
  CHECK(titan::confusion(a, b, 5).sum() == 64);

  ArrayXXi wrong(2, 2);
  wrong << 0, 0, 0, 0;
  CHECK_THROWS_AS(titan::confusion(wrong, gt, 2), titan::InvalidInput);
  ArrayXXi oob(1, 4);
  oob << 0, 0, 0, 5;
  CHECK_THROWS_AS(titan::confusion(oob, gt, 2), titan::InvalidInput);
}

TEST_CASE("iou per class and mean") {
  ArrayXXi gt(1, 4), pred(1, 4);
  gt << 0, 0, 1, 1;
  pred << 0, 1, 1, 1;
  auto r = titan::iou(titan::confusion(pred, gt, 2));
  CHECK(r.per_class[0] == doctest::Approx(0.5));
  CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r.miou == doctest::Approx(7.0 / 12.0));

  auto perfect = titan::iou(titan::confusion(gt, gt, 2));
  CHECK(perfect.miou == doctest::Approx(1.0));
  CHECK(perfect.per_class[0] == doctest::Approx(1.0));

  // A class absent from both sides is excluded, not averaged as zero.
  auto partial = titan::iou(titan::confusion(pred, gt, 3));
  CHECK(std::isnan(partial.per_class[2]));
  CHECK(partial.miou == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("miou is invariant under class relabeling") {
  Rng rng(62);
  ArrayXXi gt(6, 6), pred(6, 6);
  for (int i = 0; i < 36; ++i) {
    gt(i / 6, i % 6) = static_cast<int>(rng.uniform_int(0, 2));
    pred(i / 6, i % 6) = static_cast<int>(rng.uniform_int(0, 2));
  }
  const int perm[3] = {2, 0, 1};
  ArrayXXi gt2 = gt, pred2 = pred;
  for (int i = 0; i < 36; ++i) {
    gt2(i / 6, i % 6) = perm[gt(i / 6, i % 6)];
    pred2(i / 6, i % 6) = perm[pred(i / 6, i % 6)];
  }
  const double a = titan::iou(titan::confusion(pred, gt, 3)).miou;
  const double b = titan::iou(titan::confusion(pred2, gt2, 3)).miou;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("laplacian pyramid structure and reconstruction") {
  Rng rng(63);
  auto img = random_image(256, 256, rng);
  auto pyr = titan::laplacian_pyramid(img, 16);
  REQUIRE(pyr.size() == 5);  // 16, 32, 64, 128, 256
  for (std::size_t k = 0; k < pyr.size(); ++k) CHECK(pyr[k].rows() == 16 << k);

  // Upsample-and-add reconstructs the input.
  ArrayXX<double> recon = pyr[0];
  for (std::size_t k = 1; k < pyr.size(); ++k)
    recon = titan::resize_bilinear(recon, static_cast<int>(pyr[k].rows()),
                                   static_cast<int>(pyr[k].cols())) +
            pyr[k];
  CHECK((recon - img).abs().maxCoeff() <= 1e-5);

  auto big = titan::laplacian_pyramid(random_image(1024, 1024, rng), 16);
  CHECK(big.size() == 7);

  ArrayXX<double> flat = ArrayXX<double>::Constant(64, 64, 0.37);
  auto fp = titan::laplacian_pyramid(flat, 16);
  for (std::size_t k = 1; k < fp.size(); ++k) CHECK(fp[k].abs().maxCoeff() <= 1e-12);
  CHECK((fp[0] - 0.37).abs().maxCoeff() <= 1e-12);

  ArrayXX<double> rect = ArrayXX<double>::Zero(64, 32);
  CHECK_THROWS_AS(titan::laplacian_pyramid(rect, 16), titan::InvalidInput);
  ArrayXX<double> odd = ArrayXX<double>::Zero(48, 48);
  CHECK_THROWS_AS(titan::laplacian_pyramid(odd, 16), titan::InvalidInput);
}

TEST_CASE("sliced distance: paired zero and the singleton formula") {
  Rng rng(64);
  MatrixX<double> a(5, 6);
  for (int i = 0; i < 30; ++i) a(i / 6, i % 6) = rng.uniform(-1, 1);
  Rng r1(9), r2(9);
  CHECK(titan::sliced_distance(a, a, 32, r1) == 0.0);

  // Singletons {a},{b}: distance = E_u |<u, a-b>| over random unit directions.
  MatrixX<double> sa(1, 8), sb(1, 8);
  for (int i = 0; i < 8; ++i) {
    sa(0, i) = rng.uniform(-1, 1);
    sb(0, i) = rng.uniform(-1, 1);
  }
  const double got = titan::sliced_distance(sa, sb, 20000, r2);
  // Independent Monte-Carlo estimate of E|u_1| for d = 8.
  Rng mc(777);
  double e_abs = 0;
  for (int rep = 0; rep < 20000; ++rep) {
    VectorX<double> u(8);
    for (int i = 0; i < 8; ++i) u[i] = mc.normal();
    e_abs += std::abs(u[0]) / u.norm();
  }
  e_abs /= 20000;
  const double expect = (sa - sb).norm() * e_abs;
  CHECK(got == doctest::Approx(expect).epsilon(0.02));

  MatrixX<double> wrong(2, 8);
  CHECK_THROWS_AS(titan::sliced_distance(sa, wrong, 4, r2), titan::InvalidInput);
}

TEST_CASE("swd is zero on identical sets and grows with noise") {
  std::vector<ArrayXX<double>> base = {wavy_image(32, 48, 0.0), wavy_image(32, 48, 1.3)};
  titan::SwdConfig cfg;
  cfg.full_res = 64;
  cfg.min_res = 16;
  cfg.patches_per_level = 64;
  cfg.num_projections = 64;
  cfg.seed = 5;

  auto same = titan::swd(base, base, cfg);
  CHECK(same.level_res == std::vector<int>{16, 32, 64});
  CHECK(same.average_x1e3 == 0.0);
  for (double v : same.per_level_x1e3) CHECK(v == 0.0);

  Rng noise(65);
  auto noisy = [&](double sigma) {
    std::vector<ArrayXX<double>> out = base;
    for (auto& img : out)
      for (int v = 0; v < img.rows(); ++v)
        for (int u = 0; u < img.cols(); ++u) img(v, u) += sigma * noise.normal();
    return out;
  };
  const double s0 = titan::swd(base, noisy(0.0), cfg).average_x1e3;
  const double s1 = titan::swd(base, noisy(0.1), cfg).average_x1e3;
  const double s2 = titan::swd(base, noisy(0.3), cfg).average_x1e3;
  CHECK(s0 == 0.0);
  CHECK(s1 > s0);
  CHECK(s2 > s1);
}

TEST_CASE("swd default pyramid reaches 1024 and flags patch resampling") {
  std::vector<ArrayXX<double>> a = {wavy_image(64, 64, 0.2)};
  std::vector<ArrayXX<double>> b = {wavy_image(64, 64, 2.0)};
  titan::SwdConfig cfg;  // full_res 1024, min_res 16, 128 patches
  cfg.num_projections = 8;
  auto rep = titan::swd(a, b, cfg);
  REQUIRE(rep.level_res.size() == 7);
  CHECK(rep.level_res.front() == 16);
  CHECK(rep.level_res.back() == 1024);
  // 16x16 level has only 100 distinct 7x7 positions < 128 requested.
  CHECK(rep.resampled);
  CHECK(rep.average_x1e3 >= 0.0);
}

TEST_CASE("frechet distance: identity, symmetry, Gaussian closed form") {
  Rng rng(66);
  MatrixX<double> a(64, 4), b(64, 4);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 4; ++j) {
      a(i, j) = rng.normal();
      b(i, j) = rng.normal() + (j == 0 ? 0.5 : 0.0);
    }
  CHECK(titan::frechet_distance(a, a) <= 1e-6);
  CHECK(titan::frechet_distance(a, b) ==
        doctest::Approx(titan::frechet_distance(b, a)).epsilon(1e-8));
  CHECK(titan::frechet_distance(a, b) >= 0.0);

  // Unit Gaussians with means 0 and m: FD -> ||m||^2.
  const int n = 8000;
  MatrixX<double> g1(n, 3), g2(n, 3);
  const double m[3] = {1.0, 0.5, 0.0};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) {
      g1(i, j) = rng.normal();
      g2(i, j) = rng.normal() + m[j];
    }
  CHECK(titan::frechet_distance(g1, g2) == doctest::Approx(1.25).epsilon(0.1));

  MatrixX<double> tiny(1, 3);
  CHECK_THROWS_AS(titan::frechet_distance(tiny, g1), titan::InvalidInput);
  MatrixX<double> bad = a;
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(titan::frechet_distance(bad, b), titan::NumericError);
}

TEST_CASE("depth metrics hand values") {
  Rng rng(67);
  ArrayXX<double> gt = random_image(4, 5, rng, 1.0, 10.0);
  ArrayXXb mask = ArrayXXb::Constant(4, 5, true);

  auto ident = titan::depth_metrics(gt, gt, mask);
  CHECK(ident.absrel == 0.0);
  CHECK(ident.sqrel == 0.0);
  CHECK(ident.rms == 0.0);
  CHECK(ident.rmslog10 == 0.0);
  CHECK(ident.d1 == 1.0);
  CHECK(ident.d3 == 1.0);

  auto twice = titan::depth_metrics(ArrayXX<double>(2.0 * gt), gt, mask);
  CHECK(twice.absrel == doctest::Approx(1.0));
  CHECK(twice.d1 == 0.0);
  CHECK(twice.d2 == 0.0);
  CHECK(twice.d3 == 0.0);  // ratio 2 > 1.25^3 = 1.953125

  auto close = titan::depth_metrics(ArrayXX<double>(1.2 * gt), gt, mask);
  CHECK(close.absrel == doctest::Approx(0.2));
  CHECK(close.d1 == 1.0);
}

TEST_CASE("depth metrics: masking, monotone deltas, and errors") {
  Rng rng(68);
  ArrayXX<double> gt = random_image(6, 6, rng, 0.5, 8.0);
  ArrayXX<double> pred = gt;
  for (int i = 0; i < 36; ++i) pred(i / 6, i % 6) *= std::exp(0.5 * rng.normal());
  ArrayXXb mask = ArrayXXb::Constant(6, 6, true);
  auto m = titan::depth_metrics(pred, gt, mask);
  CHECK(m.d1 <= m.d2);
  CHECK(m.d2 <= m.d3);

  // Off-mask pixels must not affect the result, even if absurd.
  ArrayXXb half = mask;
  ArrayXX<double> pred2 = pred, gt2 = gt;
  for (int u = 0; u < 6; ++u) {
    half(0, u) = false;
    pred2(0, u) = -999.0;
    gt2(0, u) = 1.0;
  }
  ArrayXX<double> pred3 = pred;
  auto mhalf = titan::depth_metrics(pred2, gt2, half);
  auto mhalf_ref = titan::depth_metrics(pred3, gt, half);
  CHECK(mhalf.absrel == doctest::Approx(mhalf_ref.absrel));
  CHECK(mhalf.rms == doctest::Approx(mhalf_ref.rms));

  ArrayXXb none = ArrayXXb::Constant(6, 6, false);
  CHECK_THROWS_AS(titan::depth_metrics(pred, gt, none), titan::InvalidInput);
  ArrayXX<double> zero_gt = gt;
  zero_gt(2, 2) = 0.0;
  CHECK_THROWS_AS(titan::depth_metrics(pred, zero_gt, mask), titan::InvalidInput);
  ArrayXX<double> small(2, 2);
  CHECK_THROWS_AS(titan::depth_metrics(small, gt, mask), titan::InvalidInput);
}

}  // TEST_SUITE
