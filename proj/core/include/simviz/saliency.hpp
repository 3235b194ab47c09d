#ifndef SIMVIZ_SALIENCY_HPP
#define SIMVIZ_SALIENCY_HPP

#include <string>
#include <vector>

#include "simviz/models.hpp"
#include "simviz/synthdata.hpp"

namespace simviz::saliency {

struct SaliencyMap {
  Tensor values;  // full-resolution map over the image grid
  std::string method;
  int64_t subject_id = -1;

  // Coarse-grid extras (grad-cam target activations, occlusion drops).
  Tensor coarse;
  std::vector<int64_t> window;  // occlusion window extents
  int64_t stride = 0;           // occlusion stride
  double baseline_accuracy = 0.0;
};

/// Signed input gradient d logit / d X(v).
SaliencyMap saliency_bp(const models::LogitClassifier& classifier, const Tensor& image);

/// Like BP, but every rectifier backward additionally zeroes entries whose
/// forward activation or upstream gradient is negative.
SaliencyMap saliency_guided_bp(const models::LogitClassifier& classifier, const Tensor& image);

/// Channel-weighted target-layer activations: weights are the spatial mean of
/// d logit / d A, map = ReLU(sum_c w_c A_c) upsampled to input resolution.
/// An empty layer name selects the last convolutional stack.
SaliencyMap grad_cam(const models::LogitClassifier& classifier, const Tensor& image,
                     const std::string& layer = "");

/// Elementwise product of the upsampled grad-cam map and the guided-BP map.
SaliencyMap guided_grad_cam(const models::LogitClassifier& classifier, const Tensor& image,
                            const std::string& layer = "");

struct OcclusionParams {
  std::vector<int64_t> window;  // defaults to 8 per axis
  int64_t stride = 4;
  double fill = 0.0;
};

/// Population-level occlusion sensitivity: slides the window over a stride
/// grid, overwrites it with the fill value in every test image, and assigns
/// the balanced-accuracy drop to the window's center voxel. By construction
/// this needs a labeled multi-subject set, never a single image.
SaliencyMap occlusion_map(const models::LogitClassifier& classifier,
                          const std::vector<const synth::ImageSample*>& test_set,
                          const OcclusionParams& params = {});

double balanced_accuracy(const models::LogitClassifier& classifier,
                         const std::vector<const synth::ImageSample*>& samples);

/// Linear resampling of a coarse map whose node i along axis a sits at voxel
/// origin[a] + i * spacing[a] of the output grid; values beyond the coarse
/// extent are clamped.
Tensor resize_positioned(const Tensor& coarse, const std::vector<double>& origin,
                         const std::vector<double>& spacing, const std::vector<int64_t>& out_shape);

}  // namespace simviz::saliency

#endif
