#ifndef SIMVIZ_EVALVIZ_HPP
#define SIMVIZ_EVALVIZ_HPP

#include <string>
#include <vector>

#include "simviz/tensor.hpp"
#include "simviz/warp.hpp"

namespace simviz::evalviz {

/// Normalized cross-correlation in [-1, 1]; invariant to positive affine
/// rescaling of either argument. Throws on shape mismatch or zero variance.
double ncc(const Tensor& a, const Tensor& b);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

double variance(const std::vector<double>& v);

struct PatternEstimate {
  Tensor values;       // signed map on the image grid
  std::string source;  // "proposed-direct", "proposed-jacobian", or a saliency tag
  int64_t subject_id = -1;
};

/// Direct mode (no field): values = raw - simulated. Warp mode: values =
/// log-Jacobian map of the field.
PatternEstimate extract_pattern(const Tensor& raw, const Tensor& simulated,
                                const warp::WarpField* field, const std::string& source);

/// Voxelwise mean over patterns sharing one grid.
Tensor group_average_map(const std::vector<PatternEstimate>& patterns);

struct ReportFiles {
  std::vector<std::string> files;  // paths relative to the run directory
};

/// Renders the run's figures (subject panels, logit trajectories, NCC bars,
/// group maps) and the summary CSV from the artifacts under `run_dir`.
/// Missing inputs raise one error itemizing everything that is absent.
ReportFiles render_report(const std::string& run_dir);

}  // namespace simviz::evalviz

#endif
