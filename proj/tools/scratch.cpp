// Temporary development harness; replaced by the real CLI.
#include <cstdio>

#include "../tests/gradcheck.hpp"
#include "simviz/nn_ops.hpp"

using namespace simviz;
using namespace simviz::ad;
using simviz::testing::grad_check;
using simviz::testing::random_tensor;

static int fails = 0;

static void check(const char* name,
                  const std::function<Var(const std::vector<Var>&)>& build,
                  std::vector<Tensor> inputs, double tol = 1e-6, int64_t probes = 0) {
  auto r = grad_check(build, std::move(inputs), 1e-5, probes);
  const bool ok = r.max_rel_err < tol;
  std::printf("%-28s max_rel=%.3e (%lld coords) %s %s\n", name, r.max_rel_err,
              static_cast<long long>(r.checked), ok ? "OK" : "FAIL", ok ? "" : r.worst.c_str());
  if (!ok) ++fails;
}

int main() {
  RandomStream rng(7);

  check("dense", [](const std::vector<Var>& v) {
    return mean_all(ad::sigmoid(dense(v[0], v[1], v[2])));
  }, {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)});

  check("conv2d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(conv_nd(v[0], v[1], v[2])));
  }, {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)});

  check("conv3d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(conv_nd(v[0], v[1], v[2])));
  }, {random_tensor({2, 2, 4, 4, 4}, rng), random_tensor({3, 2, 3, 3, 3}, rng), random_tensor({3}, rng)});

  check("condconv2d", [](const std::vector<Var>& v) {
    Var alpha = ad::sigmoid(dense(append_feature(global_avg_pool(v[0]), 1.0), v[2], nullptr));
    return mean_all(ad::square(condconv_nd(v[0], v[1], alpha)));
  }, {random_tensor({2, 3, 6, 6}, rng), random_tensor({3, 4, 3, 3, 3}, rng),
      random_tensor({3, 4}, rng)});

  check("maxpool2d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(maxpool2(v[0])));
  }, {random_tensor({2, 2, 6, 6}, rng)});

  check("maxpool3d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(maxpool2(v[0])));
  }, {random_tensor({2, 2, 4, 4, 4}, rng)});

  check("upsample2d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(upsample2(v[0])));
  }, {random_tensor({2, 3, 4, 4}, rng)});

  check("upsample3d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(upsample2(v[0])));
  }, {random_tensor({1, 2, 2, 2, 2}, rng)});

  {
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng);
    check("batchnorm_train", [](const std::vector<Var>& v) {
      BatchNormState st;
      return mean_all(ad::square(batch_norm(v[0], v[1], v[2], st, true)));
    }, {random_tensor({4, 3, 5, 5}, rng), gamma, beta}, 1e-5);
  }

  check("warp2d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(warp(v[0], v[1])));
  }, {random_tensor({2, 2, 6, 6}, rng), random_tensor({2, 2, 6, 6}, rng, -1.2, 1.2)});

  check("warp3d", [](const std::vector<Var>& v) {
    return mean_all(ad::square(warp(v[0], v[1])));
  }, {random_tensor({1, 2, 5, 5, 5}, rng), random_tensor({1, 3, 5, 5, 5}, rng, -1.2, 1.2)});

  check("cycle_rmse", [](const std::vector<Var>& v) {
    return cycle_rmse(v[0], v[1]);
  }, {random_tensor({3, 10}, rng), random_tensor({3, 10}, rng)});

  check("smoothness2d", [](const std::vector<Var>& v) {
    return smoothness_penalty(v[0], 0.37);
  }, {random_tensor({2, 2, 5, 5}, rng)});

  check("smoothness3d", [](const std::vector<Var>& v) {
    return smoothness_penalty(v[0], 0.02);
  }, {random_tensor({1, 3, 4, 4, 4}, rng)});

  check("bce", [](const std::vector<Var>& v) {
    return bce_with_logits_mean(v[0], 1.0);
  }, {random_tensor({6}, rng, -2, 2)});

  check("concat+leaky+gap", [](const std::vector<Var>& v) {
    return mean_all(ad::square(global_avg_pool(leaky_relu(concat_channels(v[0], v[1]), 0.01))));
  }, {random_tensor({2, 2, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)});

  std::printf(fails ? "SCRATCH FAIL (%d)\n" : "SCRATCH ALL OK\n", fails);
  return fails ? 1 : 0;
}
