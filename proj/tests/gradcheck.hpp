#ifndef SIMVIZ_TESTS_GRADCHECK_HPP
#define SIMVIZ_TESTS_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "simviz/autodiff.hpp"
#include "simviz/rng.hpp"

namespace simviz::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  std::string worst;  // description of the worst coordinate
};

/// Central finite-difference check of a scalar-valued graph builder.
/// `build` must construct a fresh graph from the given leaves and return the
/// scalar root. Every coordinate of every leaf marked trainable is probed
/// unless `probes > 0`, in which case that many coordinates are sampled per
/// leaf. The relative error of coordinate i is
///   |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
inline GradCheckResult grad_check(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& build,
    std::vector<Tensor> inputs, double step = 1e-5, int64_t probes = 0, uint64_t probe_seed = 1234) {
  using namespace simviz::ad;

  // Analytic gradients.
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (auto& t : inputs) leaves.push_back(leaf(t, true));
  Var root = build(leaves);
  backward(root);

  GradCheckResult res;
  RandomStream rng(probe_seed);
  for (size_t li = 0; li < inputs.size(); ++li) {
    const int64_t n = inputs[li].numel();
    std::vector<int64_t> coords;
    if (probes > 0 && probes < n) {
      for (int64_t i = 0; i < probes; ++i) coords.push_back(rng.index(n));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t ci : coords) {
      auto eval = [&](double delta) {
        std::vector<Var> probe_leaves;
        probe_leaves.reserve(inputs.size());
        for (size_t lj = 0; lj < inputs.size(); ++lj) {
          Tensor t = inputs[lj];
          if (lj == li) t[ci] += delta;
          probe_leaves.push_back(leaf(std::move(t), false));
        }
        return build(probe_leaves)->value[0];
      };
      const double fd = (eval(step) - eval(-step)) / (2.0 * step);
      const double ga = leaves[li]->has_grad() ? leaves[li]->grad[ci] : 0.0;
      const double rel = std::fabs(ga - fd) / std::max({1.0, std::fabs(ga), std::fabs(fd)});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "leaf " + std::to_string(li) + " coord " + std::to_string(ci) + " ad=" +
                    std::to_string(ga) + " fd=" + std::to_string(fd);
      }
    }
  }
  return res;
}

inline Tensor random_tensor(std::vector<int64_t> shape, RandomStream& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace simviz::testing

#endif
