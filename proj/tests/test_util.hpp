#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "titan/ad/ops.hpp"
#include "titan/rng.hpp"

namespace testutil {

inline titan::ArrayX<double> random_array(std::int64_t n, titan::Rng& rng, double lo = -1.0,
                                          double hi = 1.0) {
  titan::ArrayX<double> a(n);
  for (std::int64_t i = 0; i < n; ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Central-difference check of d f / d leaf for every coordinate of every leaf.
// `f` must rebuild its graph from the leaves' current values on each call.
inline void gradcheck(const std::function<titan::ad::Tensor<double>()>& f,
                      std::vector<titan::ad::Tensor<double>> leaves, double eps = 1e-5,
                      double tol = 5e-6) {
  using titan::ad::Tensor;
  Tensor<double> y = f();
  REQUIRE(y.numel() == 1);
  auto gs = titan::ad::grad(y, leaves);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::int64_t i = 0; i < leaves[li].numel(); ++i) {
      const double orig = leaves[li].raw()[i];
      leaves[li].raw()[i] = orig + eps;
      const double fp = f().item();
      leaves[li].raw()[i] = orig - eps;
      const double fm = f().item();
      leaves[li].raw()[i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = gs[li].value()[i];
      const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
      INFO("leaf ", li, " coord ", i, " fd=", fd, " analytic=", an);
      CHECK(std::abs(fd - an) <= tol * scale);
    }
  }
}

}  // namespace testutil
