#ifndef SIMVIZ_WARP_HPP
#define SIMVIZ_WARP_HPP

#include <cstdint>
#include <vector>

#include "simviz/tensor.hpp"

namespace simviz::warp {

/// Dense displacement field over an image grid. Channel i displaces along
/// spatial axis i (axis 0 = slowest), in voxel units of the grid itself.
/// The realized map is phi(v) = v + u(v).
struct WarpField {
  Tensor u;  // (d, spatial...)

  int64_t dims() const { return u.empty() ? 0 : u.dim(0); }
  std::vector<int64_t> grid() const {
    return u.empty() ? std::vector<int64_t>{}
                     : std::vector<int64_t>(u.shape().begin() + 1, u.shape().end());
  }
  static WarpField zeros(const std::vector<int64_t>& grid);
  /// Channel count must equal the spatial rank and all values be finite.
  void validate() const;
};

/// Backward-warps a single-channel image: out(v) = X(v + u(v)) with
/// bi/trilinear interpolation; sample positions are clamped to the border.
Tensor apply_warp(const Tensor& image, const WarpField& field);

/// Diffusion energy lambda * sum_v ||grad u(v)||^2 with forward differences
/// over interior voxels, summed over all displacement channels and axes.
double smoothness_energy(const WarpField& field, double lambda_phi);

struct LogJacobianResult {
  Tensor log_det;           // same grid as the field
  int64_t clamped_voxels;   // entries that hit the determinant floor
};

/// Per-voxel log det(I + du/dv) from central differences (one-sided at the
/// borders). Negative values encode shrinkage, positive expansion.
/// Determinants below `det_floor` are clamped before the log and counted.
LogJacobianResult log_jacobian_map(const WarpField& field, double det_floor = 1e-6);

}  // namespace simviz::warp

#endif
