#include "simviz/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simviz::train {

namespace {
double mean_hinge(const std::vector<double>& raw, const std::vector<double>& sim, double delta,
                  bool sim_minus_raw) {
  if (raw.size() != sim.size()) throw std::invalid_argument("logit_shift_loss: unpaired logits");
  if (raw.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < raw.size(); ++i) {
    const double shift = sim_minus_raw ? sim[i] - raw[i] : raw[i] - sim[i];
    s += std::max(shift, -delta);
  }
  return s / static_cast<double>(raw.size());
}

double mean_rmse(const Tensor& a, const Tensor& b) {
  if (a.empty()) return 0.0;
  if (!a.same_shape(b)) throw std::invalid_argument("cycle_loss: shape mismatch");
  const int64_t n = a.dim(0);
  const int64_t m = a.numel() / n;
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < m; ++j) {
      const double d = a[i * m + j] - b[i * m + j];
      s += d * d;
    }
    total += std::sqrt(s / static_cast<double>(m));
  }
  return total / static_cast<double>(n);
}
}  // namespace

double logit_shift_loss(const std::vector<double>& p_raw_x, const std::vector<double>& p_sim_x,
                        const std::vector<double>& p_raw_y, const std::vector<double>& p_sim_y,
                        double delta) {
  if (delta <= 0.0) throw std::invalid_argument("logit_shift_loss: delta must be positive");
  // X side penalizes insufficient increase, Y side insufficient decrease.
  return mean_hinge(p_raw_x, p_sim_x, delta, /*sim_minus_raw=*/false) +
         mean_hinge(p_raw_y, p_sim_y, delta, /*sim_minus_raw=*/true);
}

double cycle_loss(const Tensor& x, const Tensor& x_cycle, const Tensor& y, const Tensor& y_cycle) {
  return mean_rmse(x_cycle, x) + mean_rmse(y_cycle, y);
}

double bce_loss_variant(const std::vector<double>& p_sim_x, const std::vector<double>& p_sim_y) {
  auto mean_bce = [](const std::vector<double>& p, double target) {
    if (p.empty()) return 0.0;
    double s = 0.0;
    for (double v : p) s += std::max(v, 0.0) - v * target + std::log1p(std::exp(-std::fabs(v)));
    return s / static_cast<double>(p.size());
  };
  return mean_bce(p_sim_x, 1.0) + mean_bce(p_sim_y, 0.0);
}

}  // namespace simviz::train
