#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "titan/ad/ops.hpp"
#include "titan/rng.hpp"

namespace {

using testutil::gradcheck;
using testutil::random_array;
using titan::ArrayX;
using titan::Rng;
namespace ad = titan::ad;
using T = ad::Tensor<double>;

// Direct convolution, written independently of the library's im2col path.
ArrayX<double> conv2d_naive(const ArrayX<double>& x, int cin, int h, int w,
                            const ArrayX<double>& wt, int cout, int kh, int kw,
                            const ArrayX<double>& b, int stride, int pad) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  ArrayX<double> out(static_cast<std::int64_t>(cout) * ho * wo);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b.size() ? b[co] : 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<std::int64_t>(ci) * h + iy) * w + ix] *
                     wt[(static_cast<std::int64_t>(co) * cin + ci) * kh * kw + ky * kw + kx];
            }
        out[(static_cast<std::int64_t>(co) * ho + oy) * wo + ox] = acc;
      }
  return out;
}

// Direct bilinear resize with half-pixel centers and edge clamping.
ArrayX<double> bilinear_naive(const ArrayX<double>& x, int c, int h, int w, int ho, int wo) {
  ArrayX<double> out(static_cast<std::int64_t>(c) * ho * wo);
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const double fy = (oy + 0.5) * h / ho - 0.5;
        const double fx = (ox + 0.5) * w / wo - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        int x0 = static_cast<int>(std::floor(fx));
        const double ay = fy - y0, ax = fx - x0;
        const auto at = [&](int y, int xx) {
          y = std::min(std::max(y, 0), h - 1);
          xx = std::min(std::max(xx, 0), w - 1);
          return x[(static_cast<std::int64_t>(ci) * h + y) * w + xx];
        };
        out[(static_cast<std::int64_t>(ci) * ho + oy) * wo + ox] =
            (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
            ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
      }
  return out;
}

}  // namespace

TEST_SUITE("ad") {

TEST_CASE("elementwise arithmetic values and gradients") {
  Rng rng(11);
  T a = T::leaf(random_array(12, rng, 0.5, 2.0), {3, 4});
  T b = T::leaf(random_array(12, rng, 0.5, 2.0), {3, 4});
  auto f = [&] {
    T u = ad::add(ad::mul(a, b), ad::div(a, ad::add_scalar(b, 3.0)));
    T v = ad::sub(ad::exp_(ad::scale(a, 0.3)), ad::log_(ad::add_scalar(ad::mul(b, b), 1.0)));
    return ad::mean_all(ad::add(u, ad::neg(v)));
  };
  gradcheck(f, {a, b});
}

TEST_CASE("unary kinked ops away from their kinks") {
  Rng rng(12);
  ArrayX<double> av = random_array(20, rng, -2.0, 2.0);
  for (auto& v : av) if (std::abs(v) < 0.2) v += 0.5;  // keep clear of 0
  T a = T::leaf(av, {20});
  auto f = [&] {
    T u = ad::abs_(a);
    T v = ad::leaky_relu(a, 0.2);
    T w = ad::clamp_min(a, -0.5);
    return ad::sum_all(ad::add(ad::mul(u, v), ad::square(w)));
  };
  gradcheck(f, {a});
}

TEST_CASE("pow_guard matches pow on the positive domain") {
  Rng rng(13);
  T a = T::leaf(random_array(10, rng, 0.5, 3.0), {10});
  auto f = [&] { return ad::sum_all(ad::pow_guard(a, 0.5)); };
  gradcheck(f, {a});
  T y = ad::pow_guard(a, 1.7);
  for (std::int64_t i = 0; i < a.numel(); ++i)
    CHECK(y.value()[i] == doctest::Approx(std::pow(a.value()[i], 1.7)).epsilon(1e-12));
}

TEST_CASE("pow_guard is exactly zero at zero with zero gradient") {
  T a = T::leaf(ArrayX<double>::Zero(3), {3});
  T y = ad::pow_guard(a, 0.5);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[2] == 0.0);
  auto g = ad::grad(ad::sum_all(y), {a});
  CHECK(g[0].value()[0] == 0.0);
  CHECK(std::isfinite(g[0].value()[1]));
}

TEST_CASE("softplus is stable at extreme inputs and differentiable") {
  Rng rng(14);
  T a = T::leaf(random_array(20, rng, -3.0, 3.0), {20});
  T y = ad::softplus(a);
  for (std::int64_t i = 0; i < a.numel(); ++i)
    CHECK(y.value()[i] == doctest::Approx(std::log1p(std::exp(a.value()[i]))).epsilon(1e-12));
  auto f = [&] { return ad::sum_all(ad::square(ad::softplus(a))); };
  gradcheck(f, {a});

  T big = T::leaf((ArrayX<double>(3) << 800.0, -800.0, 0.0).finished(), {3});
  T yb = ad::softplus(big);
  CHECK(yb.value()[0] == 800.0);  // no overflow: softplus(x) -> x for large x
  CHECK(yb.value()[1] == 0.0);
  CHECK(yb.value()[2] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  auto g = ad::grad(ad::sum_all(yb), {big});
  CHECK(g[0].value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g[0].value()[1] == 0.0);
}

TEST_CASE("matmul all transpose combinations") {
  Rng rng(14);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const int m = 3, k = 4, n = 2;
      T a = T::leaf(random_array(m * k, rng), ta ? std::vector<int>{k, m} : std::vector<int>{m, k});
      T b = T::leaf(random_array(k * n, rng), tb ? std::vector<int>{n, k} : std::vector<int>{k, n});
      T c = T::constant(random_array(m * n, rng), {m, n});
      auto f = [&] { return ad::sum_all(ad::mul(ad::matmul(a, b, ta, tb), c)); };
      CAPTURE(ta);
      CAPTURE(tb);
      gradcheck(f, {a, b});
    }
}

TEST_CASE("matmul value against a hand-computed product") {
  ArrayX<double> av(6);
  av << 1, 2, 3, 4, 5, 6;  // [[1,2,3],[4,5,6]]
  ArrayX<double> bv(3);
  bv << 1, -1, 2;  // [3,1] column
  T y = ad::matmul(T::constant(av, {2, 3}), T::constant(bv, {3, 1}));
  CHECK(y.value()[0] == doctest::Approx(1 - 2 + 6));
  CHECK(y.value()[1] == doctest::Approx(4 - 5 + 12));
}

TEST_CASE("gather and scatter_sum round trip with padding entries") {
  Rng rng(15);
  T x = T::leaf(random_array(8, rng), {8});
  auto idx = std::make_shared<std::vector<std::int32_t>>(
      std::vector<std::int32_t>{3, -1, 0, 3, 7, -1, 2, 2, 5, 1});
  ad::IndexMap im = idx;
  T g = ad::gather(x, im, {10});
  CHECK(g.value()[0] == x.value()[3]);
  CHECK(g.value()[1] == 0.0);
  CHECK(g.value()[3] == x.value()[3]);
  auto f = [&] { return ad::sum_all(ad::square(ad::gather(x, im, {10}))); };
  gradcheck(f, {x});
  auto f2 = [&] { return ad::sum_all(ad::square(ad::scatter_sum(x, std::make_shared<std::vector<std::int32_t>>(std::vector<std::int32_t>{1, 1, 0, -1, 2, 2, 2, 4}), {5}))); };
  gradcheck(f2, {x});
}

TEST_CASE("concat, slice, and pad invert each other") {
  Rng rng(16);
  T a = T::leaf(random_array(2 * 3 * 4, rng), {2, 3, 4});
  T b = T::leaf(random_array(1 * 3 * 4, rng), {1, 3, 4});
  T cat = ad::concat_ch(a, b);
  CHECK(cat.shape() == std::vector<int>{3, 3, 4});
  T back = ad::slice_ch(cat, 0, 2);
  for (std::int64_t i = 0; i < back.numel(); ++i) CHECK(back.value()[i] == a.value()[i]);
  T pad = ad::channel_pad(b, 1, 4);
  CHECK(pad.shape() == std::vector<int>{4, 3, 4});
  CHECK(pad.value()[0] == 0.0);
  CHECK(pad.value()[1 * 12 + 5] == b.value()[5]);
  auto f = [&] {
    T c = ad::concat_ch(a, b);
    T s = ad::slice_ch(c, 1, 3);
    return ad::sum_all(ad::square(ad::channel_pad(s, 2, 5)));
  };
  gradcheck(f, {a, b});
}

TEST_CASE("reductions and broadcast") {
  Rng rng(17);
  T a = T::leaf(random_array(6, rng), {2, 3});
  auto f = [&] {
    T s = ad::mean_all(ad::square(a));
    return ad::sum_all(ad::mul(ad::broadcast_from_scalar(s, {2, 3}), a));
  };
  gradcheck(f, {a});
}

TEST_CASE("channel helpers sum and broadcast correctly") {
  Rng rng(18);
  T a = T::leaf(random_array(3 * 2 * 2, rng), {3, 2, 2});
  T cs = ad::channel_sum(a);
  CHECK(cs.shape() == std::vector<int>{1, 2, 2});
  for (int p = 0; p < 4; ++p)
    CHECK(cs.value()[p] ==
          doctest::Approx(a.value()[p] + a.value()[4 + p] + a.value()[8 + p]));
  T cb = ad::channel_broadcast(cs, 3);
  CHECK(cb.shape() == std::vector<int>{3, 2, 2});
  CHECK(cb.value()[4 + 1] == doctest::Approx(cs.value()[1]));
  T sp = ad::spatial_sum(a);
  CHECK(sp.shape() == std::vector<int>{3, 1, 1});
  CHECK(sp.value()[1] ==
        doctest::Approx(a.value()[4] + a.value()[5] + a.value()[6] + a.value()[7]));
  auto f = [&] { return ad::sum_all(ad::square(ad::channel_broadcast(ad::channel_sum(a), 3))); };
  gradcheck(f, {a});
}

TEST_CASE("softmax_ch produces a distribution per pixel") {
  Rng rng(19);
  T a = T::leaf(random_array(4 * 3 * 2, rng, -5.0, 5.0), {4, 3, 2});
  T p = ad::softmax_ch(a);
  for (int px = 0; px < 6; ++px) {
    double s = 0;
    for (int c = 0; c < 4; ++c) {
      const double v = p.value()[c * 6 + px];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto f = [&] {
    T q = ad::softmax_ch(a);
    return ad::sum_all(ad::mul(q, q));
  };
  gradcheck(f, {a});
}

TEST_CASE("log_softmax_ch equals log of softmax and is stable at large logits") {
  Rng rng(20);
  ArrayX<double> big = random_array(3 * 2 * 2, rng, 500.0, 510.0);
  T a = T::leaf(big, {3, 2, 2});
  T ls = ad::log_softmax_ch(a);
  T sm = ad::softmax_ch(a);
  for (std::int64_t i = 0; i < ls.numel(); ++i) {
    CHECK(std::isfinite(ls.value()[i]));
    CHECK(ls.value()[i] == doctest::Approx(std::log(sm.value()[i])).epsilon(1e-9));
  }
  auto f = [&] { return ad::mean_all(ad::square(ad::log_softmax_ch(a))); };
  gradcheck(f, {a}, 1e-4, 5e-5);
}

TEST_CASE("conv2d matches direct convolution") {
  Rng rng(21);
  const int cin = 2, h = 5, w = 6, cout = 3, kh = 3, kw = 3;
  for (int stride : {1, 2}) {
    ArrayX<double> xv = random_array(cin * h * w, rng);
    ArrayX<double> wv = random_array(cout * cin * kh * kw, rng);
    ArrayX<double> bv = random_array(cout, rng);
    T x = T::leaf(xv, {cin, h, w});
    T wt = T::leaf(wv, {cout, cin * kh * kw});
    T b = T::leaf(bv, {cout});
    T y = ad::conv2d(x, wt, b, kh, kw, stride, 1);
    ArrayX<double> ref = conv2d_naive(xv, cin, h, w, wv, cout, kh, kw, bv, stride, 1);
    REQUIRE(y.numel() == ref.size());
    for (std::int64_t i = 0; i < ref.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    auto f = [&] { return ad::mean_all(ad::square(ad::conv2d(x, wt, b, kh, kw, stride, 1))); };
    gradcheck(f, {x, wt, b});
  }
}

TEST_CASE("conv2d 1x1 is a channel mix") {
  Rng rng(22);
  ArrayX<double> xv = random_array(3 * 2 * 2, rng);
  ArrayX<double> wv = random_array(2 * 3, rng);
  T y = ad::conv2d(T::constant(xv, {3, 2, 2}), T::constant(wv, {2, 3}), T(), 1, 1, 1, 0);
  for (int co = 0; co < 2; ++co)
    for (int p = 0; p < 4; ++p) {
      double ref = 0;
      for (int ci = 0; ci < 3; ++ci) ref += wv[co * 3 + ci] * xv[ci * 4 + p];
      CHECK(y.value()[co * 4 + p] == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("bilinear_resize matches a direct implementation") {
  Rng rng(23);
  const int c = 2, h = 4, w = 6;
  ArrayX<double> xv = random_array(c * h * w, rng);
  T x = T::leaf(xv, {c, h, w});
  for (auto [ho, wo] : {std::pair{8, 12}, std::pair{3, 5}, std::pair{4, 6}}) {
    T y = ad::bilinear_resize(x, ho, wo);
    ArrayX<double> ref = bilinear_naive(xv, c, h, w, ho, wo);
    REQUIRE(y.numel() == ref.size());
    for (std::int64_t i = 0; i < ref.size(); ++i)
      CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
  auto f = [&] { return ad::mean_all(ad::square(ad::bilinear_resize(x, 7, 9))); };
  gradcheck(f, {x});
}

TEST_CASE("nearest_resize picks the nearest source pixel") {
  ArrayX<double> xv(4);
  xv << 1, 2, 3, 4;  // [1,2,2] image rows [1,2],[3,4]
  T y = ad::nearest_resize(T::constant(xv, {1, 2, 2}), 4, 4);
  CHECK(y.value()[0] == 1.0);
  CHECK(y.value()[3] == 2.0);
  CHECK(y.value()[12] == 3.0);
  CHECK(y.value()[15] == 4.0);
}

TEST_CASE("dropout masks with inverted scaling and is reproducible") {
  Rng rng(24);
  T x = T::leaf(ArrayX<double>::Constant(1000, 1.0), {1000});
  Rng r1(99), r2(99);
  T y1 = ad::dropout(x, 0.3, r1);
  T y2 = ad::dropout(x, 0.3, r2);
  int kept = 0;
  for (std::int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(y1.value()[i] == y2.value()[i]);
    const bool zero = y1.value()[i] == 0.0;
    const bool scaled = std::abs(y1.value()[i] - 1.0 / 0.7) < 1e-12;
    CHECK((zero || scaled));
    kept += scaled;
  }
  CHECK(kept > 600);
  CHECK(kept < 800);
  Rng r3(7);
  T z = ad::dropout(x, 0.0, r3);
  CHECK(z.node() == x.node());
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  T a = T::leaf(ArrayX<double>::Constant(4, 2.0), {4});
  ad::NoGradGuard ng;
  T y = ad::sum_all(ad::square(a));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad returns zeros for unused inputs and non-grad roots") {
  T a = T::leaf(ArrayX<double>::Constant(3, 1.0), {3});
  T b = T::leaf(ArrayX<double>::Constant(3, 1.0), {3});
  T y = ad::sum_all(a);
  auto gs = ad::grad(y, {a, b});
  CHECK(gs[0].value()[0] == 1.0);
  CHECK(gs[1].value().abs().maxCoeff() == 0.0);
  T c = T::constant(ArrayX<double>::Constant(1, 5.0), {1});
  auto gz = ad::grad(c, {a});
  CHECK(gz[0].value().abs().maxCoeff() == 0.0);
}

TEST_CASE("gradient accumulates over shared subexpressions") {
  T a = T::leaf(ArrayX<double>::Constant(1, 3.0), {1});
  T sq = ad::mul(a, a);
  T y = ad::sum_all(ad::add(sq, sq));  // y = 2a^2, dy/da = 4a = 12
  auto g = ad::grad(y, {a});
  CHECK(g[0].value()[0] == doctest::Approx(12.0));
}

TEST_CASE("double backprop through a cubic") {
  Rng rng(25);
  ArrayX<double> xv = random_array(5, rng, 0.5, 1.5);
  T x = T::leaf(xv, {5});
  T y = ad::sum_all(ad::mul(ad::mul(x, x), x));  // sum x^3
  auto g = ad::grad(y, {x}, /*create_graph=*/true);
  T h = ad::sum_all(ad::square(g[0]));  // sum 9x^4
  auto g2 = ad::grad(h, {x});
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(g2[0].value()[i] == doctest::Approx(36.0 * std::pow(xv[i], 3.0)).epsilon(1e-9));
}

TEST_CASE("double backprop through conv, leaky_relu, and norm matches finite differences") {
  Rng rng(26);
  const int cin = 2, h = 4, w = 4, cout = 2;
  ArrayX<double> xv = random_array(cin * h * w, rng);
  T x = T::constant(xv, {cin, h, w});
  T wt = T::leaf(random_array(cout * cin * 9, rng, -0.4, 0.4), {cout, cin * 9});
  T b = T::leaf(random_array(cout, rng, -0.1, 0.1), {cout});

  // gp(w,b) = (||d critic / d x||_2 - 1)^2, the gradient-penalty shape.
  auto gp = [&]() -> T {
    T xl = T::leaf(xv, {cin, h, w});
    T c = ad::sum_all(ad::leaky_relu(ad::conv2d(xl, wt, b, 3, 3, 1, 1), 0.2));
    auto gx = ad::grad(c, {xl}, /*create_graph=*/true);
    T nrm = ad::pow_guard(ad::sum_all(ad::square(gx[0])), 0.5);
    T d = ad::add_scalar(nrm, -1.0);
    return ad::mul(d, d);
  };
  gradcheck(gp, {wt, b}, 1e-5, 2e-5);
}

TEST_CASE("second derivative through gather and matmul") {
  Rng rng(27);
  T x = T::leaf(random_array(6, rng, 0.5, 1.5), {6});
  auto im = std::make_shared<std::vector<std::int32_t>>(std::vector<std::int32_t>{0, 2, 4, 1, 3, 5, 0, 0});
  auto f = [&]() -> T {
    T g0 = ad::gather(x, im, {2, 4});
    T y = ad::sum_all(ad::square(ad::matmul(g0, g0, false, true)));
    auto gx = ad::grad(y, {x}, true);
    return ad::sum_all(ad::square(gx[0]));
  };
  gradcheck(f, {x}, 1e-5, 5e-5);
}

}  // TEST_SUITE
