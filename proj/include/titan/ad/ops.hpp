#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "titan/ad/tensor.hpp"
#include "titan/rng.hpp"

namespace titan::ad {

/// Shared immutable index map. Entries of -1 read as zero in gather and are
/// skipped in scatter_sum, which doubles as zero padding.
using IndexMap = std::shared_ptr<const std::vector<std::int32_t>>;

namespace detail {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidInput(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  return make_op<S>(a.value() + b.value(), a.shape(), {a, b},
                    [](const Tensor<S>& g) { return std::vector<Tensor<S>>{g, g}; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return make_op<S>(-a.value(), a.shape(), {a},
                    [](const Tensor<S>& g) { return std::vector<Tensor<S>>{neg(g)}; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  return make_op<S>(a.value() - b.value(), a.shape(), {a, b}, [](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{g, neg(g)};
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  return make_op<S>(a.value() * b.value(), a.shape(), {a, b}, [a, b](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{mul(g, b), mul(g, a)};
  });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "div");
  return make_op<S>(a.value() / b.value(), a.shape(), {a, b}, [a, b](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{div(g, b), neg(div(mul(g, a), mul(b, b)))};
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  return make_op<S>(a.value() * s, a.shape(), {a},
                    [s](const Tensor<S>& g) { return std::vector<Tensor<S>>{scale(g, s)}; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return make_op<S>(a.value() + c, a.shape(), {a},
                    [](const Tensor<S>& g) { return std::vector<Tensor<S>>{g}; });
}

template <typename S>
Tensor<S> exp_(const Tensor<S>& a) {
  return make_op<S>(a.value().exp(), a.shape(), {a}, [a](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{mul(g, exp_(a))};
  });
}

template <typename S>
Tensor<S> log_(const Tensor<S>& a) {
  return make_op<S>(a.value().log(), a.shape(), {a}, [a](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{div(g, a)};
  });
}

template <typename S>
Tensor<S> abs_(const Tensor<S>& a) {
  return make_op<S>(a.value().abs(), a.shape(), {a}, [a](const Tensor<S>& g) {
    ArrayX<S> sg(a.numel());
    const auto& v = a.value();
    for (std::int64_t i = 0; i < v.size(); ++i) sg[i] = v[i] > S(0) ? S(1) : (v[i] < S(0) ? S(-1) : S(0));
    return std::vector<Tensor<S>>{mul(g, Tensor<S>::constant(std::move(sg), a.shape()))};
  });
}

/// x^p on the positive domain, exactly zero elsewhere. The derivative uses the
/// same guard, so e.g. pow_guard(x, 0.5) has gradient 0 (not inf) at x == 0 --
/// the behaviour wanted when x is a sum of squares that can vanish.
template <typename S>
Tensor<S> pow_guard(const Tensor<S>& a, S p) {
  ArrayX<S> out(a.numel());
  const auto& v = a.value();
  for (std::int64_t i = 0; i < v.size(); ++i) out[i] = v[i] > S(0) ? std::pow(v[i], p) : S(0);
  return make_op<S>(std::move(out), a.shape(), {a}, [a, p](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{scale(mul(g, pow_guard(a, p - S(1))), p)};
  });
}

template <typename S>
Tensor<S> clamp_min(const Tensor<S>& a, S lo) {
  return make_op<S>(a.value().max(lo), a.shape(), {a}, [a, lo](const Tensor<S>& g) {
    ArrayX<S> m(a.numel());
    const auto& v = a.value();
    for (std::int64_t i = 0; i < v.size(); ++i) m[i] = v[i] > lo ? S(1) : S(0);
    return std::vector<Tensor<S>>{mul(g, Tensor<S>::constant(std::move(m), a.shape()))};
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return clamp_min(a, S(0));
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& a, S slope) {
  ArrayX<S> out(a.numel());
  const auto& v = a.value();
  for (std::int64_t i = 0; i < v.size(); ++i) out[i] = v[i] > S(0) ? v[i] : slope * v[i];
  return make_op<S>(std::move(out), a.shape(), {a}, [a, slope](const Tensor<S>& g) {
    ArrayX<S> m(a.numel());
    const auto& v = a.value();
    for (std::int64_t i = 0; i < v.size(); ++i) m[i] = v[i] > S(0) ? S(1) : slope;
    return std::vector<Tensor<S>>{mul(g, Tensor<S>::constant(std::move(m), a.shape()))};
  });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  return mul(a, a);
}

/// Numerically stable softplus ln(1 + e^x) = max(x, 0) + log1p(e^-|x|); the
/// gradient is sigmoid(x). Used as a smooth non-negativity activation.
template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
  ArrayX<S> out(a.numel());
  const auto& v = a.value();
  for (std::int64_t i = 0; i < v.size(); ++i)
    out[i] = std::max(v[i], S(0)) + std::log1p(std::exp(-std::abs(v[i])));
  return make_op<S>(std::move(out), a.shape(), {a}, [a](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{mul(g, sigmoid(a))};
  });
}

/// Numerically stable sigmoid.
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  // 1 / (1 + exp(-x)) via exp of the negative magnitude only.
  Tensor<S> en = exp_(neg(abs_(a)));
  Tensor<S> denom = add_scalar(en, S(1));
  Tensor<S> pos = div(Tensor<S>::ones(a.shape()), denom);  // for x >= 0
  Tensor<S> negv = div(en, denom);                         // for x < 0
  ArrayX<S> m(a.numel());
  const auto& v = a.value();
  for (std::int64_t i = 0; i < v.size(); ++i) m[i] = v[i] >= S(0) ? S(1) : S(0);
  Tensor<S> mask = Tensor<S>::constant(std::move(m), a.shape());
  Tensor<S> inv = sub(Tensor<S>::ones(a.shape()), mask);
  return add(mul(mask, pos), mul(inv, negv));
}

// ---------------------------------------------------------------------------
// Reductions and broadcast
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> broadcast_from_scalar(const Tensor<S>& s, std::vector<int> shape);

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  ArrayX<S> out(1);
  out[0] = a.value().sum();
  auto in_shape = a.shape();
  return make_op<S>(std::move(out), {1}, {a}, [in_shape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{broadcast_from_scalar(g, in_shape)};
  });
}

template <typename S>
Tensor<S> broadcast_from_scalar(const Tensor<S>& s, std::vector<int> shape) {
  if (s.numel() != 1) throw InvalidInput("broadcast_from_scalar: source must be a scalar");
  const auto n = shape_numel(shape);
  return make_op<S>(ArrayX<S>::Constant(n, s.value()[0]), std::move(shape), {s},
                    [](const Tensor<S>& g) { return std::vector<Tensor<S>>{sum_all(g)}; });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw InvalidInput("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto old_shape = a.shape();
  return make_op<S>(a.value(), std::move(shape), {a}, [old_shape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{reshape(g, old_shape)};
  });
}

template <typename S>
Tensor<S> slice_ch(const Tensor<S>& a, int c0, int c1);

template <typename S>
Tensor<S> channel_pad(const Tensor<S>& a, int c0, int total_ch);

/// Concatenates two [C,H,W] tensors along the channel axis.
template <typename S>
Tensor<S> concat_ch(const Tensor<S>& a, const Tensor<S>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[1] != sb[1] || sa[2] != sb[2])
    throw InvalidInput("concat_ch: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  const int ca = sa[0], cb = sb[0], hw = sa[1] * sa[2];
  ArrayX<S> out(static_cast<std::int64_t>(ca + cb) * hw);
  out.head(static_cast<std::int64_t>(ca) * hw) = a.value();
  out.tail(static_cast<std::int64_t>(cb) * hw) = b.value();
  return make_op<S>(std::move(out), {ca + cb, sa[1], sa[2]}, {a, b},
                    [ca, cb](const Tensor<S>& g) {
                      return std::vector<Tensor<S>>{slice_ch(g, 0, ca), slice_ch(g, ca, ca + cb)};
                    });
}

template <typename S>
Tensor<S> concat_ch(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw InvalidInput("concat_ch: empty input list");
  Tensor<S> out = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) out = concat_ch(out, xs[i]);
  return out;
}

/// Channels [c0, c1) of a [C,H,W] tensor.
template <typename S>
Tensor<S> slice_ch(const Tensor<S>& a, int c0, int c1) {
  const auto& s = a.shape();
  if (s.size() != 3 || c0 < 0 || c1 > s[0] || c0 >= c1)
    throw InvalidInput("slice_ch: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") for " + shape_str(s));
  const int hw = s[1] * s[2], total = s[0];
  ArrayX<S> out = a.value().segment(static_cast<std::int64_t>(c0) * hw,
                                    static_cast<std::int64_t>(c1 - c0) * hw);
  return make_op<S>(std::move(out), {c1 - c0, s[1], s[2]}, {a},
                    [c0, total](const Tensor<S>& g) {
                      return std::vector<Tensor<S>>{channel_pad(g, c0, total)};
                    });
}

/// Embeds a [C,H,W] tensor as channels [c0, c0+C) of a zero [total,H,W] tensor.
template <typename S>
Tensor<S> channel_pad(const Tensor<S>& a, int c0, int total_ch) {
  const auto& s = a.shape();
  if (s.size() != 3 || c0 < 0 || c0 + s[0] > total_ch)
    throw InvalidInput("channel_pad: block [" + std::to_string(c0) + "," +
                       std::to_string(c0 + s[0]) + ") outside " + std::to_string(total_ch) +
                       " channels");
  const int hw = s[1] * s[2], cx = s[0];
  ArrayX<S> out = ArrayX<S>::Zero(static_cast<std::int64_t>(total_ch) * hw);
  out.segment(static_cast<std::int64_t>(c0) * hw, static_cast<std::int64_t>(cx) * hw) = a.value();
  return make_op<S>(std::move(out), {total_ch, s[1], s[2]}, {a}, [c0, cx](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{slice_ch(g, c0, c0 + cx)};
  });
}

// ---------------------------------------------------------------------------
// Index ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> scatter_sum(const Tensor<S>& a, const IndexMap& idx, std::vector<int> out_shape);

/// out[i] = a[idx[i]] with idx[i] == -1 reading zero.
template <typename S>
Tensor<S> gather(const Tensor<S>& a, const IndexMap& idx, std::vector<int> out_shape) {
  if (static_cast<std::int64_t>(idx->size()) != shape_numel(out_shape))
    throw InvalidInput("gather: index map size does not match output shape");
  ArrayX<S> out(static_cast<std::int64_t>(idx->size()));
  const auto& v = a.value();
  const auto& ix = *idx;
  for (std::size_t i = 0; i < ix.size(); ++i) out[i] = ix[i] >= 0 ? v[ix[i]] : S(0);
  auto in_shape = a.shape();
  return make_op<S>(std::move(out), std::move(out_shape), {a}, [idx, in_shape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{scatter_sum(g, idx, in_shape)};
  });
}

/// out[idx[i]] += a[i]; entries with idx[i] == -1 are dropped.
template <typename S>
Tensor<S> scatter_sum(const Tensor<S>& a, const IndexMap& idx, std::vector<int> out_shape) {
  if (static_cast<std::int64_t>(idx->size()) != a.numel())
    throw InvalidInput("scatter_sum: index map size does not match input shape");
  ArrayX<S> out = ArrayX<S>::Zero(shape_numel(out_shape));
  const auto& v = a.value();
  const auto& ix = *idx;
  for (std::size_t i = 0; i < ix.size(); ++i)
    if (ix[i] >= 0) out[ix[i]] += v[i];
  auto in_shape = a.shape();
  return make_op<S>(std::move(out), std::move(out_shape), {a}, [idx, in_shape](const Tensor<S>& g) {
    return std::vector<Tensor<S>>{gather(g, idx, in_shape)};
  });
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 2-D matrix product with optional transposes, row-major layout.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool ta = false, bool tb = false) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2)
    throw InvalidInput("matmul: operands must be 2-D, got " + shape_str(sa) + " and " +
                       shape_str(sb));
  const int m = ta ? sa[1] : sa[0];
  const int k = ta ? sa[0] : sa[1];
  const int k2 = tb ? sb[1] : sb[0];
  const int n = tb ? sb[0] : sb[1];
  if (k != k2)
    throw InvalidInput("matmul: inner dimensions differ, " + shape_str(sa) + (ta ? "^T" : "") +
                       " * " + shape_str(sb) + (tb ? "^T" : ""));
  Eigen::Map<const RowMat<S>> ma(a.value().data(), sa[0], sa[1]);
  Eigen::Map<const RowMat<S>> mb(b.value().data(), sb[0], sb[1]);
  RowMat<S> c(m, n);
  if (!ta && !tb)
    c.noalias() = ma * mb;
  else if (ta && !tb)
    c.noalias() = ma.transpose() * mb;
  else if (!ta && tb)
    c.noalias() = ma * mb.transpose();
  else
    c.noalias() = ma.transpose() * mb.transpose();
  ArrayX<S> out = Eigen::Map<const ArrayX<S>>(c.data(), c.size());
  return make_op<S>(std::move(out), {m, n}, {a, b}, [a, b, ta, tb](const Tensor<S>& g) {
    Tensor<S> ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
    Tensor<S> gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
    return std::vector<Tensor<S>>{ga, gb};
  });
}

// ---------------------------------------------------------------------------
// Channel helpers (built on matmul so gradients come for free)
// ---------------------------------------------------------------------------

/// [C,H,W] -> [1,H,W] sum over channels.
template <typename S>
Tensor<S> channel_sum(const Tensor<S>& a) {
  const auto& s = a.shape();
  if (s.size() != 3) throw InvalidInput("channel_sum: expected [C,H,W], got " + shape_str(s));
  Tensor<S> flat = reshape(a, {s[0], s[1] * s[2]});
  Tensor<S> r = matmul(Tensor<S>::ones({1, s[0]}), flat);
  return reshape(r, {1, s[1], s[2]});
}

/// [1,H,W] -> [C,H,W] replication over channels.
template <typename S>
Tensor<S> channel_broadcast(const Tensor<S>& a, int c) {
  const auto& s = a.shape();
  if (s.size() != 3 || s[0] != 1)
    throw InvalidInput("channel_broadcast: expected [1,H,W], got " + shape_str(s));
  Tensor<S> flat = reshape(a, {1, s[1] * s[2]});
  Tensor<S> r = matmul(Tensor<S>::ones({c, 1}), flat);
  return reshape(r, {c, s[1], s[2]});
}

/// [C,H,W] -> [C,1,1] sum over the spatial extent.
template <typename S>
Tensor<S> spatial_sum(const Tensor<S>& a) {
  const auto& s = a.shape();
  if (s.size() != 3) throw InvalidInput("spatial_sum: expected [C,H,W], got " + shape_str(s));
  Tensor<S> flat = reshape(a, {s[0], s[1] * s[2]});
  Tensor<S> r = matmul(flat, Tensor<S>::ones({s[1] * s[2], 1}));
  return reshape(r, {s[0], 1, 1});
}

/// Per-pixel softmax over the channel axis of a [C,H,W] tensor.
template <typename S>
Tensor<S> softmax_ch(const Tensor<S>& a) {
  const auto& s = a.shape();
  if (s.size() != 3) throw InvalidInput("softmax_ch: expected [C,H,W], got " + shape_str(s));
  const int c = s[0], hw = s[1] * s[2];
  // Constant per-pixel max shift: softmax is invariant to it, and treating it
  // as constant leaves the Jacobian unchanged.
  ArrayX<S> mx(static_cast<std::int64_t>(c) * hw);
  const auto& v = a.value();
  for (int p = 0; p < hw; ++p) {
    S m = v[p];
    for (int ci = 1; ci < c; ++ci) m = std::max(m, v[static_cast<std::int64_t>(ci) * hw + p]);
    for (int ci = 0; ci < c; ++ci) mx[static_cast<std::int64_t>(ci) * hw + p] = m;
  }
  Tensor<S> shifted = sub(a, Tensor<S>::constant(std::move(mx), s));
  Tensor<S> e = exp_(shifted);
  Tensor<S> z = channel_broadcast(channel_sum(e), c);
  return div(e, z);
}

/// Per-pixel log-softmax over the channel axis of a [C,H,W] tensor.
template <typename S>
Tensor<S> log_softmax_ch(const Tensor<S>& a) {
  const auto& s = a.shape();
  if (s.size() != 3) throw InvalidInput("log_softmax_ch: expected [C,H,W], got " + shape_str(s));
  const int c = s[0], hw = s[1] * s[2];
  ArrayX<S> mx(static_cast<std::int64_t>(c) * hw);
  const auto& v = a.value();
  for (int p = 0; p < hw; ++p) {
    S m = v[p];
    for (int ci = 1; ci < c; ++ci) m = std::max(m, v[static_cast<std::int64_t>(ci) * hw + p]);
    for (int ci = 0; ci < c; ++ci) mx[static_cast<std::int64_t>(ci) * hw + p] = m;
  }
  Tensor<S> shifted = sub(a, Tensor<S>::constant(std::move(mx), s));
  Tensor<S> lz = log_(channel_sum(exp_(shifted)));
  return sub(shifted, channel_broadcast(lz, c));
}

// ---------------------------------------------------------------------------
// Cached index maps
// ---------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

inline std::unordered_map<std::string, IndexMap>& map_cache() {
  static std::unordered_map<std::string, IndexMap> cache;
  return cache;
}

inline std::mutex& map_cache_mutex() {
  static std::mutex m;
  return m;
}

inline IndexMap cache_lookup(const std::string& key) {
  std::lock_guard<std::mutex> lock(map_cache_mutex());
  auto it = map_cache().find(key);
  return it == map_cache().end() ? nullptr : it->second;
}

inline void cache_store(const std::string& key, IndexMap m) {
  std::lock_guard<std::mutex> lock(map_cache_mutex());
  map_cache().emplace(key, std::move(m));
}

}  // namespace detail

/// Index map for im2col: rows index (ci,ki,kj), columns index output pixels.
inline IndexMap im2col_map(int c, int h, int w, int kh, int kw, int stride, int pad) {
  const std::string key = "i2c|" + std::to_string(c) + "|" + std::to_string(h) + "|" +
                          std::to_string(w) + "|" + std::to_string(kh) + "|" + std::to_string(kw) +
                          "|" + std::to_string(stride) + "|" + std::to_string(pad);
  if (auto hit = detail::cache_lookup(key)) return hit;
  const int ho = conv_out_dim(h, kh, stride, pad);
  const int wo = conv_out_dim(w, kw, stride, pad);
  auto m = std::make_shared<std::vector<std::int32_t>>();
  m->resize(static_cast<std::size_t>(c) * kh * kw * ho * wo);
  std::size_t r = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const int iy = oy * stride - pad + ki;
            const int ix = ox * stride - pad + kj;
            (*m)[r++] = (iy < 0 || iy >= h || ix < 0 || ix >= w)
                            ? -1
                            : static_cast<std::int32_t>((static_cast<std::int64_t>(ci) * h + iy) * w + ix);
          }
  IndexMap out = m;
  detail::cache_store(key, out);
  return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution on a [Cin,H,W] tensor. Weight is [Cout, Cin*kh*kw], bias is
/// [Cout] (pass an undefined tensor to skip). Zero padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int kh,
                 int kw, int stride = 1, int pad = 0) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  if (sx.size() != 3) throw InvalidInput("conv2d: input must be [C,H,W], got " + shape_str(sx));
  if (sw.size() != 2 || sw[1] != sx[0] * kh * kw)
    throw InvalidInput("conv2d: weight " + shape_str(sw) + " incompatible with input " +
                       shape_str(sx) + " and kernel " + std::to_string(kh) + "x" +
                       std::to_string(kw));
  const int cin = sx[0], h = sx[1], w = sx[2], cout = sw[0];
  const int ho = conv_out_dim(h, kh, stride, pad);
  const int wo = conv_out_dim(w, kw, stride, pad);
  if (ho <= 0 || wo <= 0) throw InvalidInput("conv2d: empty output for input " + shape_str(sx));
  IndexMap idx = im2col_map(cin, h, w, kh, kw, stride, pad);
  Tensor<S> cols = gather(x, idx, {cin * kh * kw, ho * wo});
  Tensor<S> y = matmul(weight, cols);
  if (bias.defined()) {
    Tensor<S> b2 = reshape(bias, {cout, 1});
    y = add(y, matmul(b2, Tensor<S>::ones({1, ho * wo})));
  }
  return reshape(y, {cout, ho, wo});
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
struct BilinearPlan {
  IndexMap idx[4];
  std::shared_ptr<const ArrayX<S>> w[4];
};

template <typename S>
const BilinearPlan<S>& bilinear_plan(int c, int h, int w, int ho, int wo) {
  static std::unordered_map<std::string, BilinearPlan<S>> cache;
  static std::mutex mu;
  const std::string key = std::to_string(c) + "|" + std::to_string(h) + "|" + std::to_string(w) +
                          "|" + std::to_string(ho) + "|" + std::to_string(wo);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  BilinearPlan<S> plan;
  const std::int64_t n = static_cast<std::int64_t>(c) * ho * wo;
  std::vector<std::int32_t> idx[4];
  ArrayX<S> wt[4];
  for (int k = 0; k < 4; ++k) {
    idx[k].resize(n);
    wt[k].resize(n);
  }
  const double sy = static_cast<double>(h) / ho;
  const double sx = static_cast<double>(w) / wo;
  for (int oy = 0; oy < ho; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double ay = fy - y0;
    int y1 = y0 + 1;
    y0 = std::min(std::max(y0, 0), h - 1);
    y1 = std::min(std::max(y1, 0), h - 1);
    for (int ox = 0; ox < wo; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double ax = fx - x0;
      int x1 = x0 + 1;
      x0 = std::min(std::max(x0, 0), w - 1);
      x1 = std::min(std::max(x1, 0), w - 1);
      const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
      const int ys[4] = {y0, y0, y1, y1};
      const int xs[4] = {x0, x1, x0, x1};
      for (int ci = 0; ci < c; ++ci) {
        const std::int64_t o = (static_cast<std::int64_t>(ci) * ho + oy) * wo + ox;
        for (int k = 0; k < 4; ++k) {
          idx[k][o] = static_cast<std::int32_t>((static_cast<std::int64_t>(ci) * h + ys[k]) * w + xs[k]);
          wt[k][o] = static_cast<S>(wts[k]);
        }
      }
    }
  }
  for (int k = 0; k < 4; ++k) {
    plan.idx[k] = std::make_shared<const std::vector<std::int32_t>>(std::move(idx[k]));
    plan.w[k] = std::make_shared<const ArrayX<S>>(std::move(wt[k]));
  }
  return cache.emplace(key, std::move(plan)).first->second;
}

}  // namespace detail

/// Bilinear resize of a [C,H,W] tensor to [C,ho,wo] (half-pixel centers).
template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& x, int ho, int wo) {
  const auto& s = x.shape();
  if (s.size() != 3) throw InvalidInput("bilinear_resize: expected [C,H,W], got " + shape_str(s));
  if (s[1] == ho && s[2] == wo) return x;
  const auto& plan = detail::bilinear_plan<S>(s[0], s[1], s[2], ho, wo);
  std::vector<int> out_shape = {s[0], ho, wo};
  Tensor<S> acc;
  for (int k = 0; k < 4; ++k) {
    Tensor<S> term = mul(gather(x, plan.idx[k], out_shape),
                         Tensor<S>::constant(*plan.w[k], out_shape));
    acc = k == 0 ? term : add(acc, term);
  }
  return acc;
}

/// Nearest-neighbour resize of a [C,H,W] tensor (half-pixel centers).
template <typename S>
Tensor<S> nearest_resize(const Tensor<S>& x, int ho, int wo) {
  const auto& s = x.shape();
  if (s.size() != 3) throw InvalidInput("nearest_resize: expected [C,H,W], got " + shape_str(s));
  if (s[1] == ho && s[2] == wo) return x;
  const int c = s[0], h = s[1], w = s[2];
  const std::string key = "nn|" + std::to_string(c) + "|" + std::to_string(h) + "|" +
                          std::to_string(w) + "|" + std::to_string(ho) + "|" + std::to_string(wo);
  IndexMap idx = detail::cache_lookup(key);
  if (!idx) {
    auto m = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(c) * ho * wo);
    for (int oy = 0; oy < ho; ++oy) {
      int iy = std::min(static_cast<int>((oy + 0.5) * h / ho), h - 1);
      for (int ox = 0; ox < wo; ++ox) {
        int ix = std::min(static_cast<int>((ox + 0.5) * w / wo), w - 1);
        for (int ci = 0; ci < c; ++ci)
          (*m)[(static_cast<std::size_t>(ci) * ho + oy) * wo + ox] =
              static_cast<std::int32_t>((static_cast<std::int64_t>(ci) * h + iy) * w + ix);
      }
    }
    idx = m;
    detail::cache_store(key, idx);
  }
  return gather(x, idx, {c, ho, wo});
}

// ---------------------------------------------------------------------------
// Regularization
// ---------------------------------------------------------------------------

/// Inverted dropout: scales kept activations by 1/(1-p) so the expectation is
/// unchanged. Pass p = 0 for identity.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw InvalidInput("dropout: rate must be < 1");
  ArrayX<S> m(x.numel());
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(p) ? S(0) : keep;
  return mul(x, Tensor<S>::constant(std::move(m), x.shape()));
}

}  // namespace titan::ad
