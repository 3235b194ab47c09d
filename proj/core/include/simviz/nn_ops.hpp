#ifndef SIMVIZ_NN_OPS_HPP
#define SIMVIZ_NN_OPS_HPP

#include "simviz/autodiff.hpp"

namespace simviz::ad {

// Feature maps are (N, C, H, W) for 2-d data and (N, C, D, H, W) for 3-d.
// Convolutions are stride 1 with 'same' zero padding and odd kernels.

/// x: (N, in), W: (out, in), b: (out) or null.
Var dense(const Var& x, const Var& W, const Var& b);

/// W: (OC, IC, k, k) or (OC, IC, k, k, k); b: (OC) or null.
Var conv_nd(const Var& x, const Var& W, const Var& b);

/// Mixture-of-experts convolution: experts (K, OC, IC, k^d) mixed per sample
/// by alpha (N, K) into one kernel, then convolved as usual. No bias term.
Var condconv_nd(const Var& x, const Var& experts, const Var& alpha);

/// 2x max pooling with stride 2; spatial dims must be even.
Var maxpool2(const Var& x);

/// Nearest-neighbour x2 upsampling.
Var upsample2(const Var& x);

/// Per-channel spatial mean: (N, C, spatial) -> (N, C).
Var global_avg_pool(const Var& x);

/// Appends one constant feature to every row: (N, C) -> (N, C+1).
Var append_feature(const Var& x, double t);

struct BatchNormState {
  Tensor running_mean;  // (C)
  Tensor running_var;   // (C), biased
  double momentum = 0.1;
  double eps = 1e-5;
  int64_t steps = 0;
};

/// gamma, beta: (C). In training mode normalizes by batch statistics and
/// updates `state`; in eval mode uses the frozen running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

/// Backward-warps x by the displacement field u (channel i displaces along
/// spatial axis i, in voxel units): out(v) = x(v + u(v)) with bi/trilinear
/// interpolation and border-clamped sample positions. Differentiable in both
/// arguments.
Var warp(const Var& x, const Var& u);

/// Mean over the batch of per-sample RMSE between a and b.
Var cycle_rmse(const Var& a, const Var& b);

/// Mean over the batch of lambda * sum of squared forward differences of u
/// over all displacement channels and spatial axes.
Var smoothness_penalty(const Var& u, double lambda);

/// Mean binary cross-entropy with logits against a constant target label.
Var bce_with_logits_mean(const Var& logits, double target);
/// Same with one target per logit.
Var bce_with_logits_mean(const Var& logits, const Tensor& targets);

}  // namespace simviz::ad

#endif
