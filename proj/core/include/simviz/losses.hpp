#ifndef SIMVIZ_LOSSES_HPP
#define SIMVIZ_LOSSES_HPP

#include <cstdint>
#include <vector>

#include "simviz/tensor.hpp"

namespace simviz::train {

/// Hinged logit-shift objective:
///   mean_X max(p_raw_X - p_sim_X, -delta) + mean_Y max(p_sim_Y - p_raw_Y, -delta).
/// Each term saturates at -delta once the shift exceeds delta in the intended
/// direction, so the minimum is -2*delta. Empty sides contribute zero.
double logit_shift_loss(const std::vector<double>& p_raw_x, const std::vector<double>& p_sim_x,
                        const std::vector<double>& p_raw_y, const std::vector<double>& p_sim_y,
                        double delta);

/// Cycle-consistency loss: mean over X of per-image RMSE(X_cycle, X) plus the
/// same over Y. Batches are (N, ...) tensors; an empty side contributes zero.
double cycle_loss(const Tensor& x, const Tensor& x_cycle, const Tensor& y, const Tensor& y_cycle);

/// Binary cross-entropy ablation: pushes sigmoid(p_sim_X) -> 1 and
/// sigmoid(p_sim_Y) -> 0.
double bce_loss_variant(const std::vector<double>& p_sim_x, const std::vector<double>& p_sim_y);

struct LossBreakdown {
  int64_t step = 0;
  double e_logit = 0.0;
  double e_cycle = 0.0;
  double e_phi = 0.0;
  double e_total = 0.0;
};

}  // namespace simviz::train

#endif
