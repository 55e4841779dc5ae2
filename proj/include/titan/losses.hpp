#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "titan/ad/ops.hpp"
#include "titan/common.hpp"
#include "titan/rng.hpp"

namespace titan {

/// Per-class appearance frequencies and the derived cross-entropy weights
/// alpha_i = 1/sqrt(f_i).
template <typename S>
struct ClassFrequencies {
  ArrayX<S> freq;

  void validate() const {
    for (std::int64_t i = 0; i < freq.size(); ++i)
      if (!(freq[i] > S(0)) || !(freq[i] <= S(1)))
        throw InvalidInput("class frequencies: f[" + std::to_string(i) + "] outside (0,1]");
  }

  ArrayX<S> weights() const {
    validate();
    return freq.sqrt().inverse();
  }

  /// Frequencies counted over a set of label images.
  static ClassFrequencies from_labels(const std::vector<ArrayXXi>& labels, int num_classes) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
    std::int64_t total = 0;
    for (const auto& img : labels)
      for (std::int64_t i = 0; i < img.size(); ++i) {
        const int c = img(i);
        if (c < 0 || c >= num_classes)
          throw InvalidInput("class frequencies: label " + std::to_string(c) + " out of range");
        ++counts[c];
        ++total;
      }
    if (total == 0) throw InvalidInput("class frequencies: no label pixels");
    ClassFrequencies out;
    out.freq.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) out.freq[c] = static_cast<S>(counts[c]) / total;
    return out;
  }
};

template <typename S>
struct LossReport {
  S wce = 0, ls = 0, ids = 0, mae = 0, ssim_loss = 0;
  S d_adv = 0, g_adv = 0;
  S seg_total = 0, depth_total = 0, grand_total = 0;
};

/// Fills the composed totals and returns the grand total
/// L = L_seg + L_depth + L_adv with unit weights.
template <typename S>
S total_loss(LossReport<S>& r) {
  r.seg_total = r.wce + r.ls;
  r.depth_total = r.ids + r.mae + r.ssim_loss;
  r.grand_total = r.seg_total + r.depth_total + r.g_adv;
  return r.grand_total;
}

namespace detail {

inline void check_labels(const ArrayXXi& labels, int num_classes) {
  for (std::int64_t i = 0; i < labels.size(); ++i)
    if (labels(i) < 0 || labels(i) >= num_classes)
      throw InvalidInput("labels: class " + std::to_string(labels(i)) + " out of [0," +
                         std::to_string(num_classes) + ")");
}

/// Jaccard-loss weights of the Lovasz extension for one class, given the
/// ground-truth indicator sorted by descending error.
template <typename S>
ArrayX<S> lovasz_grad(const ArrayX<S>& gt_sorted) {
  const std::int64_t n = gt_sorted.size();
  const S gts = gt_sorted.sum();
  ArrayX<S> jac(n);
  S cum_gt = 0, cum_not = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    cum_gt += gt_sorted[i];
    cum_not += S(1) - gt_sorted[i];
    jac[i] = S(1) - (gts - cum_gt) / (gts + cum_not);
  }
  for (std::int64_t i = n - 1; i >= 1; --i) jac[i] -= jac[i - 1];
  return jac;
}

/// Gather map selecting, for every interior pixel, the neighbour at
/// (dy, dx) from a flat h x w image.
inline ad::IndexMap interior_shift_map(int h, int w, int dy, int dx) {
  const std::string key = "ids|" + std::to_string(h) + "|" + std::to_string(w) + "|" +
                          std::to_string(dy) + "|" + std::to_string(dx);
  if (auto hit = ad::detail::cache_lookup(key)) return hit;
  auto m = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(h - 2) * (w - 2));
  std::size_t o = 0;
  for (int v = 1; v < h - 1; ++v)
    for (int u = 1; u < w - 1; ++u) (*m)[o++] = static_cast<std::int32_t>((v + dy) * w + u + dx);
  ad::IndexMap out = m;
  ad::detail::cache_store(key, out);
  return out;
}

}  // namespace detail

/// Weighted cross-entropy over all pixels: mean of -alpha_y log p_y, with
/// probabilities clamped at 1e-12 before the log. `probs` is [C,H,W].
template <typename S>
ad::Tensor<S> weighted_cross_entropy(const ad::Tensor<S>& probs, const ArrayXXi& labels,
                                     const ClassFrequencies<S>& freqs) {
  const auto& sh = probs.shape();
  if (sh.size() != 3) throw InvalidInput("weighted_cross_entropy: probs must be [C,H,W]");
  const int c = sh[0], h = sh[1], w = sh[2];
  if (labels.rows() != h || labels.cols() != w)
    throw InvalidInput("weighted_cross_entropy: label shape mismatch");
  if (freqs.freq.size() != c)
    throw InvalidInput("weighted_cross_entropy: frequency count differs from class count");
  detail::check_labels(labels, c);
  const ArrayX<S> alpha = freqs.weights();

  const int hw = h * w;
  auto pick = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(hw));
  ArrayX<S> wts(hw);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const int y = labels(v, u);
      const int p = v * w + u;
      (*pick)[p] = static_cast<std::int32_t>(y * hw + p);
      wts[p] = alpha[y];
    }
  ad::Tensor<S> picked = ad::gather(probs, ad::IndexMap(pick), {1, h, w});
  ad::Tensor<S> logp = ad::log_(ad::clamp_min(picked, S(1e-12)));
  ad::Tensor<S> weighted = ad::mul(logp, ad::Tensor<S>::constant(std::move(wts), {1, h, w}));
  return ad::neg(ad::mean_all(weighted));
}

/// Lovasz-Softmax loss: per-class errors m_i(c) sorted descending, weighted by
/// the Lovasz extension of the Jaccard loss, averaged over ground-truth
/// classes. Pixels labelled `ignore_label` are excluded; if everything is
/// excluded the loss is 0.
template <typename S>
ad::Tensor<S> lovasz_softmax(const ad::Tensor<S>& probs, const ArrayXXi& labels,
                             int ignore_label = -1) {
  const auto& sh = probs.shape();
  if (sh.size() != 3) throw InvalidInput("lovasz_softmax: probs must be [C,H,W]");
  const int c = sh[0], h = sh[1], w = sh[2];
  if (labels.rows() != h || labels.cols() != w)
    throw InvalidInput("lovasz_softmax: label shape mismatch");
  const int hw = h * w;

  std::vector<std::int32_t> kept;  // flat pixel indices that participate
  kept.reserve(static_cast<std::size_t>(hw));
  std::vector<bool> present(static_cast<std::size_t>(c), false);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const int y = labels(v, u);
      if (y == ignore_label) continue;
      if (y < 0 || y >= c)
        throw InvalidInput("lovasz_softmax: label " + std::to_string(y) + " out of range");
      kept.push_back(static_cast<std::int32_t>(v * w + u));
      present[y] = true;
    }
  if (kept.empty()) return ad::Tensor<S>::scalar(S(0));
  const auto n = static_cast<std::int64_t>(kept.size());

  ad::Tensor<S> acc;
  int n_present = 0;
  for (int cls = 0; cls < c; ++cls) {
    if (!present[cls]) continue;
    ++n_present;
    // Errors are linear in the probabilities: m = fg + (1 - 2 fg) * p.
    auto pick = std::make_shared<std::vector<std::int32_t>>();
    pick->reserve(kept.size());
    ArrayX<S> fg(n), sign(n);
    for (std::int64_t i = 0; i < n; ++i) {
      pick->push_back(static_cast<std::int32_t>(cls * hw + kept[i]));
      const bool is_fg = labels(kept[i] / w, kept[i] % w) == cls;
      fg[i] = is_fg ? S(1) : S(0);
      sign[i] = is_fg ? S(-1) : S(1);
    }
    ad::Tensor<S> p = ad::gather(probs, ad::IndexMap(pick), {static_cast<int>(n)});
    ad::Tensor<S> m = ad::add(ad::Tensor<S>::constant(fg, {static_cast<int>(n)}),
                              ad::mul(ad::Tensor<S>::constant(sign, {static_cast<int>(n)}), p));

    // Sort descending by error; the permutation is constant at non-tie points.
    std::vector<std::int32_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    const auto& mv = m.value();
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::int32_t a, std::int32_t b) { return mv[a] > mv[b]; });
    ArrayX<S> gt_sorted(n);
    for (std::int64_t i = 0; i < n; ++i) gt_sorted[i] = fg[perm[i]];
    ArrayX<S> coeffs = detail::lovasz_grad<S>(gt_sorted);

    ad::Tensor<S> m_sorted =
        ad::gather(m, std::make_shared<const std::vector<std::int32_t>>(std::move(perm)),
                   {static_cast<int>(n)});
    ad::Tensor<S> term = ad::sum_all(
        ad::mul(m_sorted, ad::Tensor<S>::constant(std::move(coeffs), {static_cast<int>(n)})));
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  return ad::scale(acc, S(1) / static_cast<S>(n_present));
}

/// Edge-aware inverse depth smoothness: mean over interior pixels of
/// e^{-|lap(I)|} * (|d_xx| + |d_xy| + |d_yy|) with central second differences.
/// `depth` is [1,H,W]; `guide` is the conditioning intensity image.
template <typename S>
ad::Tensor<S> inverse_depth_smoothness(const ad::Tensor<S>& depth, const ArrayXX<S>& guide) {
  const auto& sh = depth.shape();
  if (sh.size() != 3 || sh[0] != 1)
    throw InvalidInput("inverse_depth_smoothness: depth must be [1,H,W]");
  const int h = sh[1], w = sh[2];
  if (guide.rows() != h || guide.cols() != w)
    throw InvalidInput("inverse_depth_smoothness: guide shape mismatch");
  if (h < 3 || w < 3) throw InvalidInput("inverse_depth_smoothness: image smaller than 3x3");

  const std::vector<int> ish = {1, h - 2, w - 2};
  auto shifted = [&](int dy, int dx) {
    return ad::gather(depth, detail::interior_shift_map(h, w, dy, dx), ish);
  };
  ad::Tensor<S> ctr = shifted(0, 0);
  ad::Tensor<S> dxx = ad::add(ad::sub(ad::add(shifted(0, -1), shifted(0, 1)), ctr), ad::neg(ctr));
  ad::Tensor<S> dyy = ad::add(ad::sub(ad::add(shifted(-1, 0), shifted(1, 0)), ctr), ad::neg(ctr));
  ad::Tensor<S> dxy = ad::scale(
      ad::sub(ad::add(shifted(1, 1), shifted(-1, -1)), ad::add(shifted(1, -1), shifted(-1, 1))),
      S(0.25));
  ad::Tensor<S> curv = ad::add(ad::add(ad::abs_(dxx), ad::abs_(dxy)), ad::abs_(dyy));

  ArrayX<S> wts(static_cast<std::int64_t>(h - 2) * (w - 2));
  std::int64_t o = 0;
  for (int v = 1; v < h - 1; ++v)
    for (int u = 1; u < w - 1; ++u) {
      const S lap = guide(v - 1, u) + guide(v + 1, u) + guide(v, u - 1) + guide(v, u + 1) -
                    S(4) * guide(v, u);
      wts[o++] = std::exp(-std::abs(lap));
    }
  return ad::mean_all(ad::mul(curv, ad::Tensor<S>::constant(std::move(wts), ish)));
}

/// Mean absolute error over all pixels.
template <typename S>
ad::Tensor<S> mae(const ad::Tensor<S>& pred, const ad::Tensor<S>& target) {
  if (pred.shape() != target.shape()) throw InvalidInput("mae: shape mismatch");
  return ad::mean_all(ad::abs_(ad::sub(pred, target)));
}

/// Mean local SSIM over valid sliding windows of a [1,H,W] pair, using a
/// uniform window for the local statistics. Symmetric in its arguments.
template <typename S>
ad::Tensor<S> ssim(const ad::Tensor<S>& x, const ad::Tensor<S>& y, int window, S c1, S c2) {
  if (x.shape() != y.shape()) throw InvalidInput("ssim: shape mismatch");
  const auto& sh = x.shape();
  if (sh.size() != 3 || sh[0] != 1) throw InvalidInput("ssim: images must be [1,H,W]");
  if (window < 3 || window % 2 == 0) throw InvalidInput("ssim: window must be odd and >= 3");
  if (sh[1] < window || sh[2] < window)
    throw InvalidInput("ssim: image smaller than the window");

  // Separable uniform filter as two constant-weight convolutions.
  ad::Tensor<S> krow = ad::Tensor<S>::constant(
      ArrayX<S>::Constant(window, S(1) / static_cast<S>(window)), {1, window});
  auto box = [&](const ad::Tensor<S>& img) {
    ad::Tensor<S> a = ad::conv2d(img, krow, ad::Tensor<S>(), 1, window, 1, 0);
    return ad::conv2d(a, krow, ad::Tensor<S>(), window, 1, 1, 0);
  };

  ad::Tensor<S> mx = box(x), my = box(y);
  ad::Tensor<S> mxy = ad::mul(mx, my);
  ad::Tensor<S> mx2 = ad::square(mx), my2 = ad::square(my);
  ad::Tensor<S> vx = ad::sub(box(ad::square(x)), mx2);
  ad::Tensor<S> vy = ad::sub(box(ad::square(y)), my2);
  ad::Tensor<S> cov = ad::sub(box(ad::mul(x, y)), mxy);

  ad::Tensor<S> num = ad::mul(ad::add_scalar(ad::scale(mxy, S(2)), c1),
                              ad::add_scalar(ad::scale(cov, S(2)), c2));
  ad::Tensor<S> den = ad::mul(ad::add_scalar(ad::add(mx2, my2), c1),
                              ad::add_scalar(ad::add(vx, vy), c2));
  return ad::mean_all(ad::div(num, den));
}

/// (1 - ssim)/2 with the conventional constants c1 = (0.01 R)^2,
/// c2 = (0.03 R)^2, R taken from the target's dynamic range.
template <typename S>
ad::Tensor<S> ssim_loss(const ad::Tensor<S>& pred, const ad::Tensor<S>& target, int window = 11) {
  const S r = std::max(target.value().maxCoeff() - target.value().minCoeff(), S(1e-6));
  const S c1 = S(0.0001) * r * r;  // (0.01 R)^2
  const S c2 = S(0.0009) * r * r;  // (0.03 R)^2
  ad::Tensor<S> s = ssim(pred, target, window, c1, c2);
  return ad::scale(ad::add_scalar(ad::neg(s), S(1)), S(0.5));
}

namespace detail {

template <typename S>
void check_finite_score(const ad::Tensor<S>& s, const char* what) {
  if (!std::isfinite(static_cast<double>(s.value()[0]))) throw TrainingDivergence(what);
}

}  // namespace detail

/// A paired sample for the joint critic: a one-hot segment map and a depth map.
template <typename S>
struct CriticPair {
  ad::Tensor<S> seg;
  ad::Tensor<S> depth;
};

/// WGAN-GP critic loss: E[D(fake)] - E[D(real)] + lambda E[(||grad|| - 1)^2].
/// One uniform interpolation coefficient per sample mixes real and fake; the
/// penalty gradient is taken with respect to the interpolated pair only (the
/// condition is fixed). `disc(seg, depth, condition)` must return a scalar.
template <typename S, typename Critic>
ad::Tensor<S> wgan_gp_d_loss(Critic&& disc, const std::vector<CriticPair<S>>& real,
                             const std::vector<CriticPair<S>>& fake,
                             const std::vector<ad::Tensor<S>>& condition, Rng& rng,
                             S lambda = S(10)) {
  if (real.empty() || real.size() != fake.size() || real.size() != condition.size())
    throw InvalidInput("wgan_gp_d_loss: batch lists must be nonempty and equally sized");
  const auto n = real.size();
  const S inv_n = S(1) / static_cast<S>(n);

  ad::Tensor<S> score_gap, penalty;
  for (std::size_t i = 0; i < n; ++i) {
    ad::Tensor<S> sf = disc(fake[i].seg, fake[i].depth, condition[i]);
    ad::Tensor<S> sr = disc(real[i].seg, real[i].depth, condition[i]);
    detail::check_finite_score(sf, "discriminator score (fake)");
    detail::check_finite_score(sr, "discriminator score (real)");
    ad::Tensor<S> gap = ad::sub(sf, sr);
    score_gap = score_gap.defined() ? ad::add(score_gap, gap) : gap;

    const S eps = static_cast<S>(rng.uniform());
    ad::Tensor<S> iseg = ad::Tensor<S>::leaf(
        eps * real[i].seg.value() + (S(1) - eps) * fake[i].seg.value(), real[i].seg.shape());
    ad::Tensor<S> idep = ad::Tensor<S>::leaf(
        eps * real[i].depth.value() + (S(1) - eps) * fake[i].depth.value(),
        real[i].depth.shape());
    ad::Tensor<S> si = disc(iseg, idep, condition[i]);
    detail::check_finite_score(si, "discriminator score (interpolated)");
    auto gs = ad::grad(si, {iseg, idep}, /*create_graph=*/true);
    ad::Tensor<S> sumsq =
        ad::add(ad::sum_all(ad::square(gs[0])), ad::sum_all(ad::square(gs[1])));
    ad::Tensor<S> nrm = ad::pow_guard(sumsq, S(0.5));
    ad::Tensor<S> pen = ad::square(ad::add_scalar(nrm, S(-1)));
    penalty = penalty.defined() ? ad::add(penalty, pen) : pen;
  }
  return ad::add(ad::scale(score_gap, inv_n), ad::scale(penalty, lambda * inv_n));
}

/// WGAN generator loss: -E[D(fake)].
template <typename S, typename Critic>
ad::Tensor<S> wgan_gp_g_loss(Critic&& disc, const std::vector<CriticPair<S>>& fake,
                             const std::vector<ad::Tensor<S>>& condition) {
  if (fake.empty() || fake.size() != condition.size())
    throw InvalidInput("wgan_gp_g_loss: batch lists must be nonempty and equally sized");
  ad::Tensor<S> acc;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    ad::Tensor<S> s = disc(fake[i].seg, fake[i].depth, condition[i]);
    detail::check_finite_score(s, "discriminator score (generator step)");
    acc = acc.defined() ? ad::add(acc, s) : s;
  }
  return ad::neg(ad::scale(acc, S(1) / static_cast<S>(fake.size())));
}

}  // namespace titan
