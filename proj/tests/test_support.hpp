#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mmdm/autodiff.hpp"

namespace mmdm::testing {

// Central finite differences against the analytic gradient. Relative error
// uses a unit floor so near-zero gradients compare absolutely.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// loss() must rebuild the graph from the leaves' current values.
inline GradCheckResult grad_check(const std::function<ad::Var()>& loss,
                                  const std::vector<std::pair<std::string, ad::Var>>& leaves,
                                  double h = 1e-6, int64_t max_probes_per_leaf = 0) {
  GradCheckResult res;
  const ad::GradientMap grads = ad::backward(loss());
  for (const auto& [name, leaf] : leaves) {
    if (!grads.contains(leaf)) continue;
    const ad::Tensor& g = grads.at(leaf);
    const int64_t n = leaf->value.size();
    const int64_t step =
        max_probes_per_leaf > 0 ? std::max<int64_t>(1, n / max_probes_per_leaf) : 1;
    for (int64_t i = 0; i < n; i += step) {
      const double orig = leaf->value[i];
      leaf->value[i] = orig + h;
      const double lp = loss()->value[0];
      leaf->value[i] = orig - h;
      const double lm = loss()->value[0];
      leaf->value[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double err = rel_err(fd, g[i]);
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

inline ad::Tensor random_tensor(std::vector<int> shape, RandomStream& rng, double lo = -1.0,
                                double hi = 1.0) {
  ad::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace mmdm::testing
