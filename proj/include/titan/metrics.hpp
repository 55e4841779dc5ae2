#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "titan/common.hpp"
#include "titan/rng.hpp"

namespace titan {

// ---------------------------------------------------------------------------
// Segmentation metrics
// ---------------------------------------------------------------------------

/// Rows index the ground-truth class, columns the predicted class.
using Confusion = Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

inline Confusion confusion(const ArrayXXi& pred, const ArrayXXi& gt, int num_classes) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw InvalidInput("confusion: prediction and ground truth differ in shape");
  Confusion cm = Confusion::Zero(num_classes, num_classes);
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    const int g = gt(i), p = pred(i);
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes)
      throw InvalidInput("confusion: label outside [0," + std::to_string(num_classes) + ")");
    ++cm(g, p);
  }
  return cm;
}

struct IouReport {
  ArrayX<double> per_class;  // NaN for classes absent from both gt and prediction
  double miou = 0.0;
};

/// IoU_c = TP/(TP+FP+FN); classes absent from both sides are excluded from the
/// mean (their entry is NaN).
inline IouReport iou(const Confusion& cm) {
  const auto c = cm.rows();
  IouReport r;
  r.per_class = ArrayX<double>::Constant(c, std::nan(""));
  double sum = 0;
  int counted = 0;
  for (Eigen::Index k = 0; k < c; ++k) {
    const std::int64_t tp = cm(k, k);
    const std::int64_t fn = cm.row(k).sum() - tp;
    const std::int64_t fp = cm.col(k).sum() - tp;
    if (tp + fp + fn == 0) continue;
    r.per_class[k] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    sum += r.per_class[k];
    ++counted;
  }
  r.miou = counted ? sum / counted : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Raw image helpers (replicate-border, half-pixel conventions)
// ---------------------------------------------------------------------------

namespace detail {

inline double sample_clamped(const ArrayXX<double>& img, Eigen::Index v, Eigen::Index u) {
  v = std::min(std::max<Eigen::Index>(v, 0), img.rows() - 1);
  u = std::min(std::max<Eigen::Index>(u, 0), img.cols() - 1);
  return img(v, u);
}

}  // namespace detail

/// Bilinear resize with half-pixel centers and replicated borders.
inline ArrayXX<double> resize_bilinear(const ArrayXX<double>& img, int ho, int wo) {
  if (img.rows() == ho && img.cols() == wo) return img;
  ArrayXX<double> out(ho, wo);
  const double sy = static_cast<double>(img.rows()) / ho;
  const double sx = static_cast<double>(img.cols()) / wo;
  for (int v = 0; v < ho; ++v) {
    const double fy = (v + 0.5) * sy - 0.5;
    const auto y0 = static_cast<Eigen::Index>(std::floor(fy));
    const double ay = fy - static_cast<double>(y0);
    for (int u = 0; u < wo; ++u) {
      const double fx = (u + 0.5) * sx - 0.5;
      const auto x0 = static_cast<Eigen::Index>(std::floor(fx));
      const double ax = fx - static_cast<double>(x0);
      out(v, u) = (1 - ay) * ((1 - ax) * detail::sample_clamped(img, y0, x0) +
                              ax * detail::sample_clamped(img, y0, x0 + 1)) +
                  ay * ((1 - ax) * detail::sample_clamped(img, y0 + 1, x0) +
                        ax * detail::sample_clamped(img, y0 + 1, x0 + 1));
    }
  }
  return out;
}

namespace detail {

/// Separable 5-tap binomial blur with replicated borders.
inline ArrayXX<double> binomial_blur(const ArrayXX<double>& img) {
  static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const auto h = img.rows(), w = img.cols();
  ArrayXX<double> tmp(h, w), out(h, w);
  for (Eigen::Index v = 0; v < h; ++v)
    for (Eigen::Index u = 0; u < w; ++u) {
      double s = 0;
      for (int t = -2; t <= 2; ++t) s += k[t + 2] * sample_clamped(img, v, u + t);
      tmp(v, u) = s;
    }
  for (Eigen::Index v = 0; v < h; ++v)
    for (Eigen::Index u = 0; u < w; ++u) {
      double s = 0;
      for (int t = -2; t <= 2; ++t) s += k[t + 2] * sample_clamped(tmp, v + t, u);
      out(v, u) = s;
    }
  return out;
}

inline ArrayXX<double> downsample2(const ArrayXX<double>& img) {
  ArrayXX<double> out(img.rows() / 2, img.cols() / 2);
  for (Eigen::Index v = 0; v < out.rows(); ++v)
    for (Eigen::Index u = 0; u < out.cols(); ++u) out(v, u) = img(2 * v, 2 * u);
  return out;
}

}  // namespace detail

/// Gaussian/Laplacian difference pyramid of a square image whose side is
/// min_res * 2^k. Returned ascending: levels[0] is the min_res Gaussian base,
/// each later level the band-pass difference at twice the resolution.
inline std::vector<ArrayXX<double>> laplacian_pyramid(const ArrayXX<double>& img,
                                                      int min_res = 16) {
  if (img.rows() != img.cols())
    throw InvalidInput("laplacian_pyramid: image must be square, got " +
                       std::to_string(img.rows()) + "x" + std::to_string(img.cols()));
  int side = static_cast<int>(img.rows());
  int levels = 1;
  while (side > min_res && side % 2 == 0) {
    side /= 2;
    ++levels;
  }
  if (side != min_res)
    throw InvalidInput("laplacian_pyramid: side " + std::to_string(img.rows()) +
                       " is not min_res * 2^k for min_res " + std::to_string(min_res));

  std::vector<ArrayXX<double>> out(static_cast<std::size_t>(levels));
  ArrayXX<double> g = img;
  for (int k = levels - 1; k >= 1; --k) {
    ArrayXX<double> next = detail::downsample2(detail::binomial_blur(g));
    out[static_cast<std::size_t>(k)] =
        g - resize_bilinear(next, static_cast<int>(g.rows()), static_cast<int>(g.cols()));
    g = std::move(next);
  }
  out[0] = std::move(g);
  return out;
}

// ---------------------------------------------------------------------------
// Sliced Wasserstein distance
// ---------------------------------------------------------------------------

/// Sliced distance between two equally sized descriptor sets (rows are
/// descriptors): project both onto shared random unit directions, sort, and
/// average the absolute differences of the sorted projections.
inline double sliced_distance(const MatrixX<double>& a, const MatrixX<double>& b,
                              int num_projections, Rng& rng) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput("sliced_distance: descriptor sets must match in shape");
  if (a.rows() == 0) throw InvalidInput("sliced_distance: empty descriptor sets");
  const auto n = a.rows();
  const auto d = a.cols();
  std::vector<double> pa(static_cast<std::size_t>(n)), pb(static_cast<std::size_t>(n));
  double total = 0;
  for (int rep = 0; rep < num_projections; ++rep) {
    VectorX<double> dir(d);
    double nrm = 0;
    do {
      for (Eigen::Index i = 0; i < d; ++i) dir[i] = rng.normal();
      nrm = dir.norm();
    } while (nrm < 1e-12);
    dir /= nrm;
    Eigen::Map<VectorX<double>>(pa.data(), n) = a * dir;
    Eigen::Map<VectorX<double>>(pb.data(), n) = b * dir;
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double acc = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) acc += std::abs(pa[i] - pb[i]);
    total += acc / static_cast<double>(n);
  }
  return total / num_projections;
}

struct SwdConfig {
  int full_res = 1024;        // images are resized to full_res x full_res first
  int min_res = 16;           // coarsest pyramid level
  int patch = 7;              // square descriptor patch side
  int patches_per_level = 128;  // per image
  int num_projections = 512;
  std::uint64_t seed = 0;

  friend bool operator==(const SwdConfig&, const SwdConfig&) = default;
};

struct SwdReport {
  std::vector<int> level_res;          // ascending, min_res..full_res
  std::vector<double> per_level_x1e3;  // sliced distances, reported x 10^3
  double average_x1e3 = 0.0;
  bool resampled = false;  // true when unique patch positions < requested count
};

namespace detail {

/// Per-channel (single channel here) mean/std normalization of a patch set.
inline void normalize_descriptors(MatrixX<double>& m) {
  const double mean = m.mean();
  const double var = (m.array() - mean).square().mean();
  const double sd = std::sqrt(var) + 1e-8;
  m.array() = (m.array() - mean) / sd;
}

}  // namespace detail

/// Laplacian-pyramid sliced Wasserstein distance between two image sets.
/// Patch positions and projection directions are seeded and shared between the
/// two sets, so identical sets score exactly zero.
inline SwdReport swd(const std::vector<ArrayXX<double>>& real,
                     const std::vector<ArrayXX<double>>& fake, const SwdConfig& cfg = {}) {
  if (real.empty() || fake.empty()) throw InvalidInput("swd: image sets must be nonempty");
  int levels = 1;
  for (int side = cfg.full_res; side > cfg.min_res; side /= 2) ++levels;

  // Pyramids for every image, built once.
  auto build = [&](const std::vector<ArrayXX<double>>& imgs) {
    std::vector<std::vector<ArrayXX<double>>> out;
    out.reserve(imgs.size());
    for (const auto& img : imgs)
      out.push_back(laplacian_pyramid(resize_bilinear(img, cfg.full_res, cfg.full_res),
                                      cfg.min_res));
    return out;
  };
  const auto pyr_real = build(real);
  const auto pyr_fake = build(fake);

  SwdReport rep;
  Rng root(cfg.seed);
  double sum = 0;
  for (int lv = 0; lv < levels; ++lv) {
    const int res = cfg.min_res << lv;
    rep.level_res.push_back(res);
    const int span = res - cfg.patch + 1;
    if (span <= 0) throw InvalidInput("swd: patch larger than the coarsest level");
    Rng pos_rng = root.stream(0x100 + static_cast<std::uint64_t>(lv));

    const int d = cfg.patch * cfg.patch;
    auto extract = [&](const std::vector<std::vector<ArrayXX<double>>>& pyr, Rng rng) {
      MatrixX<double> m(static_cast<Eigen::Index>(pyr.size()) * cfg.patches_per_level, d);
      Eigen::Index row = 0;
      for (const auto& levels_of_img : pyr) {
        const ArrayXX<double>& lvl = levels_of_img[static_cast<std::size_t>(lv)];
        for (int k = 0; k < cfg.patches_per_level; ++k, ++row) {
          const auto y = static_cast<Eigen::Index>(rng.uniform_int(0, span - 1));
          const auto x = static_cast<Eigen::Index>(rng.uniform_int(0, span - 1));
          for (int i = 0; i < cfg.patch; ++i)
            for (int j = 0; j < cfg.patch; ++j)
              m(row, i * cfg.patch + j) = lvl(y + i, x + j);
        }
      }
      return m;
    };
    if (static_cast<std::int64_t>(span) * span < cfg.patches_per_level) rep.resampled = true;

    MatrixX<double> da = extract(pyr_real, pos_rng);
    MatrixX<double> db = extract(pyr_fake, pos_rng);  // same positions per image index
    detail::normalize_descriptors(da);
    detail::normalize_descriptors(db);

    // The two sets may differ in image count; equalize by resampling rows.
    if (da.rows() != db.rows()) {
      rep.resampled = true;
      const auto target = std::min(da.rows(), db.rows());
      auto shrink = [&](MatrixX<double>& m) {
        if (m.rows() == target) return;
        Rng pick = root.stream(0x200 + static_cast<std::uint64_t>(lv));
        MatrixX<double> s(target, m.cols());
        for (Eigen::Index i = 0; i < target; ++i)
          s.row(i) = m.row(pick.uniform_int(0, m.rows() - 1));
        m = std::move(s);
      };
      shrink(da);
      shrink(db);
    }

    Rng proj_rng = root.stream(0x300 + static_cast<std::uint64_t>(lv));
    const double dist = sliced_distance(da, db, cfg.num_projections, proj_rng);
    rep.per_level_x1e3.push_back(dist * 1e3);
    sum += dist * 1e3;
  }
  rep.average_x1e3 = sum / levels;
  return rep;
}

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

namespace detail {

inline MatrixX<double> sqrt_psd(const MatrixX<double>& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<MatrixX<double>> es(m);
  if (es.info() != Eigen::Success)
    throw NumericError(std::string("frechet_distance: eigendecomposition failed for ") + what);
  ArrayX<double> ev = es.eigenvalues().array().max(0.0).sqrt();
  return es.eigenvectors() * ev.matrix().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Frechet distance ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}) between
/// the Gaussians fitted to two feature sets (rows are samples). The matrix
/// square root is computed symmetrically with a small diagonal jitter.
inline double frechet_distance(const MatrixX<double>& real, const MatrixX<double>& fake) {
  if (real.rows() < 2 || fake.rows() < 2)
    throw InvalidInput("frechet_distance: need at least two samples per set");
  if (real.cols() != fake.cols())
    throw InvalidInput("frechet_distance: feature dimensions differ");
  if (!real.allFinite() || !fake.allFinite())
    throw NumericError("frechet_distance: non-finite features");

  auto moments = [](const MatrixX<double>& m, VectorX<double>& mu, MatrixX<double>& cov) {
    mu = m.colwise().mean();
    MatrixX<double> c = m.rowwise() - mu.transpose();
    cov = c.transpose() * c / static_cast<double>(m.rows() - 1);
  };
  VectorX<double> mu1, mu2;
  MatrixX<double> s1, s2;
  moments(real, mu1, s1);
  moments(fake, mu2, s2);

  const auto d = s1.rows();
  const double jitter = 1e-10 * std::max(1.0, (s1.trace() + s2.trace()) / (2.0 * d));
  s1.diagonal().array() += jitter;
  s2.diagonal().array() += jitter;

  MatrixX<double> a = detail::sqrt_psd(s1, "S1");
  MatrixX<double> inner = a * s2 * a;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize numerically
  Eigen::SelfAdjointEigenSolver<MatrixX<double>> es(inner);
  if (es.info() != Eigen::Success)
    throw NumericError("frechet_distance: eigendecomposition failed for S1^1/2 S2 S1^1/2");
  const double tr_sqrt = es.eigenvalues().array().max(0.0).sqrt().sum();

  const double fd = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(fd))
    throw NumericError("frechet_distance: non-finite result (trace sqrt " +
                       std::to_string(tr_sqrt) + ")");
  return fd;
}

// ---------------------------------------------------------------------------
// Depth metrics
// ---------------------------------------------------------------------------

struct DepthMetrics {
  double absrel = 0, sqrel = 0, rms = 0, rmslog10 = 0;
  double d1 = 0, d2 = 0, d3 = 0;  // delta < 1.25, 1.25^2, 1.25^3
};

/// The five standard depth errors over masked pixels. Ground truth must be
/// strictly positive on the mask; predictions are clamped at 1e-6 inside the
/// log-RMS term only.
inline DepthMetrics depth_metrics(const ArrayXX<double>& pred, const ArrayXX<double>& gt,
                                  const ArrayXXb& mask) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || mask.rows() != gt.rows() ||
      mask.cols() != gt.cols())
    throw InvalidInput("depth_metrics: shape mismatch");
  DepthMetrics m;
  std::int64_t n = 0;
  double se = 0, selog = 0;
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    if (!mask(i)) continue;
    const double y = gt(i);
    if (!(y > 0)) throw InvalidInput("depth_metrics: non-positive ground truth on the mask");
    const double p = pred(i);
    const double diff = p - y;
    m.absrel += std::abs(diff) / y;
    m.sqrel += diff * diff / y;
    se += diff * diff;
    const double dl = std::log10(std::max(p, 1e-6)) - std::log10(y);
    selog += dl * dl;
    const double ratio = std::max(p / y, y / p);
    m.d1 += ratio < 1.25;
    m.d2 += ratio < 1.25 * 1.25;
    m.d3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw InvalidInput("depth_metrics: empty mask leaves the result undefined");
  const double dn = static_cast<double>(n);
  m.absrel /= dn;
  m.sqrel /= dn;
  m.rms = std::sqrt(se / dn);
  m.rmslog10 = std::sqrt(selog / dn);
  m.d1 /= dn;
  m.d2 /= dn;
  m.d3 /= dn;
  return m;
}

}  // namespace titan
