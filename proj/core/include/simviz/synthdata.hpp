#ifndef SIMVIZ_SYNTHDATA_HPP
#define SIMVIZ_SYNTHDATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "simviz/rng.hpp"
#include "simviz/tensor.hpp"

namespace simviz::synth {

/// One isotropic Gaussian bump. `group_signal` marks the blobs whose
/// magnitude distribution differs between the two groups (the off-diagonal
/// pair in 2-d, the two designated octant blobs in 3-d).
struct BlobSpec {
  std::vector<double> center;  // pixel coordinates, one per axis
  double magnitude = 1.0;
  double width = 3.0;  // gaussian sigma in pixels
  bool group_signal = false;
};

struct ImageSample {
  Tensor pixels;  // (spatial...), single channel
  int group = 0;  // 0 or 1
  int64_t subject_id = 0;
  std::vector<BlobSpec> blobs;  // empty outside synthetic mode
};

enum class Split { kTrain, kTest };

struct SyntheticDataset {
  std::vector<ImageSample> samples;
  std::vector<Split> split;  // parallel to samples
  uint64_t rng_seed = 0;
  std::vector<int64_t> shape;

  std::vector<int64_t> indices(int group, Split s) const;
  int64_t count(int group, Split s) const { return static_cast<int64_t>(indices(group, s).size()); }
};

/// Renders sum_b magnitude_b * exp(-||v - center_b||^2 / (2 width_b^2)) plus
/// iid Normal(0, noise_sd^2) noise drawn per pixel in row-major order.
/// Rejects centers outside the grid.
Tensor render_gaussian_image(const std::vector<BlobSpec>& blobs, double noise_sd,
                             const std::vector<int64_t>& shape, RandomStream& rng);

struct DatasetParams {
  int64_t n_per_group = 512;
  std::vector<int64_t> shape = {32, 32};
  double noise_sd = 0.002;
  double blob_width = 3.0;
  double train_fraction = 0.8;
};

/// Two-group blob dataset: 4 blobs per image, one per quadrant block of the
/// grid. The two off-diagonal blob magnitudes are U(1,5) for group 0 and
/// U(4,8) for group 1; the diagonal pair is U(1,6) for both groups. Centers
/// are uniform over the central half-extent of each block. The split is
/// ceil(train_fraction * n) train per group.
SyntheticDataset generate_dataset(const DatasetParams& params, uint64_t seed);

/// Volumetric analogue: 4 blobs in 4 fixed octant blocks of the volume, two
/// of which carry the group signal with the same magnitude scheme.
SyntheticDataset generate_dataset_3d(const DatasetParams& params, uint64_t seed);

/// Noise-free unit-magnitude rendering of the sample's group-signal blobs.
/// Overall scale is irrelevant downstream (evaluation is NCC-based).
/// Throws if the sample carries no blob metadata.
Tensor ground_truth_pattern(const ImageSample& sample);

/// Voxelwise mean ground-truth pattern over the given samples.
Tensor ground_truth_group_pattern(const std::vector<const ImageSample*>& samples);

// Directory persistence: manifest.json plus samples/<subject_id>.bin as
// little-endian float32, row-major.
void save_dataset(const SyntheticDataset& ds, const std::string& dir);
SyntheticDataset load_dataset(const std::string& dir);

}  // namespace simviz::synth

#endif
