#include "simviz/warp.hpp"

#include <cmath>
#include <stdexcept>

#include "simviz/nn_ops.hpp"

namespace simviz::warp {

WarpField WarpField::zeros(const std::vector<int64_t>& grid) {
  std::vector<int64_t> shape;
  shape.push_back(static_cast<int64_t>(grid.size()));
  for (int64_t g : grid) shape.push_back(g);
  return WarpField{Tensor(shape)};
}

void WarpField::validate() const {
  if (u.rank() < 2) throw std::invalid_argument("warp field must be (d, spatial...)");
  if (u.dim(0) != static_cast<int64_t>(u.rank() - 1))
    throw std::invalid_argument("warp field channel count " + std::to_string(u.dim(0)) +
                                " does not match spatial rank " + std::to_string(u.rank() - 1));
  if (!u.all_finite()) throw std::invalid_argument("warp field contains non-finite values");
}

Tensor apply_warp(const Tensor& image, const WarpField& field) {
  field.validate();
  const auto g = field.grid();
  if (std::vector<int64_t>(image.shape()) != g)
    throw std::invalid_argument("apply_warp: image grid " + image.shape_str() +
                                " does not match field grid");

  // Route through the differentiable op with a batch/channel axis of one.
  std::vector<int64_t> xs{1, 1};
  xs.insert(xs.end(), g.begin(), g.end());
  std::vector<int64_t> us{1, field.dims()};
  us.insert(us.end(), g.begin(), g.end());
  auto out = ad::warp(ad::leaf(image.reshaped(xs)), ad::leaf(field.u.reshaped(us)));
  return out->value.reshaped(image.shape());
}

double smoothness_energy(const WarpField& field, double lambda_phi) {
  if (lambda_phi < 0.0) throw std::invalid_argument("smoothness_energy: lambda must be >= 0");
  field.validate();
  const auto g = field.grid();
  std::vector<int64_t> us{1, field.dims()};
  us.insert(us.end(), g.begin(), g.end());
  // Batch of one: the op's batch mean is the per-field energy.
  return ad::smoothness_penalty(ad::leaf(field.u.reshaped(us)), lambda_phi)->value[0];
}

namespace {

// d u_ch / d axis at flat voxel v: central in the interior, one-sided at the
// two border slices.
inline double axis_derivative(const double* u, int64_t v, int64_t coord, int64_t extent,
                              int64_t stride) {
  if (extent == 1) return 0.0;
  if (coord == 0) return u[v + stride] - u[v];
  if (coord == extent - 1) return u[v] - u[v - stride];
  return 0.5 * (u[v + stride] - u[v - stride]);
}

}  // namespace

LogJacobianResult log_jacobian_map(const WarpField& field, double det_floor) {
  field.validate();
  const auto grid = field.grid();
  const size_t d = grid.size();
  if (d != 2 && d != 3) throw std::invalid_argument("log_jacobian_map: grid rank must be 2 or 3");

  std::vector<int64_t> stride(d, 1);
  for (size_t i = d; i-- > 1;) stride[i - 1] = stride[i] * grid[i];
  int64_t S = 1;
  for (int64_t g : grid) S *= g;

  LogJacobianResult res{Tensor(grid), 0};
  for (int64_t v = 0; v < S; ++v) {
    double J[3][3] = {{0}};
    for (size_t ch = 0; ch < d; ++ch) {
      const double* u = field.u.data() + static_cast<int64_t>(ch) * S;
      for (size_t ax = 0; ax < d; ++ax) {
        const int64_t coord = (v / stride[ax]) % grid[ax];
        J[ch][ax] = axis_derivative(u, v, coord, grid[ax], stride[ax]);
      }
      J[ch][ch] += 1.0;
    }
    double det;
    if (d == 2) {
      det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
    } else {
      det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
            J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
            J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    }
    if (det < det_floor) {
      det = det_floor;
      ++res.clamped_voxels;
    }
    res.log_det[v] = std::log(det);
  }
  return res;
}

}  // namespace simviz::warp
