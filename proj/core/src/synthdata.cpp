#include "simviz/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "simviz/io.hpp"

namespace simviz::synth {

std::vector<int64_t> SyntheticDataset::indices(int group, Split s) const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].group == group && split[i] == s) out.push_back(static_cast<int64_t>(i));
  return out;
}

Tensor render_gaussian_image(const std::vector<BlobSpec>& blobs, double noise_sd,
                             const std::vector<int64_t>& shape, RandomStream& rng) {
  if (blobs.empty()) throw std::invalid_argument("render_gaussian_image: no blobs");
  if (noise_sd < 0.0) throw std::invalid_argument("render_gaussian_image: negative noise sd");
  const size_t d = shape.size();
  for (const auto& b : blobs) {
    if (b.center.size() != d)
      throw std::invalid_argument("blob center rank does not match grid rank");
    if (b.magnitude <= 0.0 || b.width <= 0.0)
      throw std::invalid_argument("blob magnitude and width must be positive");
    for (size_t ax = 0; ax < d; ++ax)
      if (b.center[ax] < 0.0 || b.center[ax] > static_cast<double>(shape[ax] - 1))
        throw std::invalid_argument("blob center outside the grid");
  }

  Tensor img(shape);
  std::vector<int64_t> stride(d, 1);
  for (size_t i = d; i-- > 1;) stride[i - 1] = stride[i] * shape[i];
  for (int64_t v = 0; v < img.numel(); ++v) {
    double val = 0.0;
    for (const auto& b : blobs) {
      double r2 = 0.0;
      for (size_t ax = 0; ax < d; ++ax) {
        const double c = static_cast<double>((v / stride[ax]) % shape[ax]) - b.center[ax];
        r2 += c * c;
      }
      val += b.magnitude * std::exp(-r2 / (2.0 * b.width * b.width));
    }
    img[v] = val;
  }
  if (noise_sd > 0.0) {
    for (int64_t v = 0; v < img.numel(); ++v) img[v] += rng.normal(0.0, noise_sd);
  }
  return img;
}

namespace {

// Block layout shared by the 2-d and 3-d generators. Each blob lives in one
// half-extent block; centers are drawn uniformly from the central half of
// their block so blobs never straddle block borders.
struct BlockPlan {
  std::vector<std::vector<int>> blocks;  // per blob: block index per axis
  std::vector<bool> signal;              // carries the group difference
};

BlockPlan plan_2d() {
  // Diagonal blocks (0,0), (1,1); off-diagonal (0,1), (1,0) carry the signal.
  return BlockPlan{{{0, 0}, {0, 1}, {1, 0}, {1, 1}}, {false, true, true, false}};
}

BlockPlan plan_3d() {
  // Four of the eight octants; two fixed ones carry the signal.
  return BlockPlan{{{0, 0, 0}, {0, 1, 1}, {1, 0, 1}, {1, 1, 0}}, {false, true, true, false}};
}

SyntheticDataset generate_impl(const DatasetParams& params, uint64_t seed, const BlockPlan& plan) {
  if (params.n_per_group < 2) throw std::invalid_argument("generate_dataset: n_per_group must be >= 2");
  const size_t d = params.shape.size();
  for (int64_t s : params.shape)
    if (s < 4 || s % 2 != 0)
      throw std::invalid_argument("generate_dataset: spatial extents must be even and >= 4");

  SyntheticDataset ds;
  ds.rng_seed = seed;
  ds.shape = params.shape;
  RandomStream rng(seed);

  int64_t next_id = 0;
  for (int group = 0; group < 2; ++group) {
    for (int64_t i = 0; i < params.n_per_group; ++i) {
      ImageSample s;
      s.group = group;
      s.subject_id = next_id++;
      for (size_t b = 0; b < plan.blocks.size(); ++b) {
        BlobSpec blob;
        blob.width = params.blob_width;
        blob.group_signal = plan.signal[b];
        for (size_t ax = 0; ax < d; ++ax) {
          const double block = static_cast<double>(params.shape[ax]) / 2.0;
          const double origin = plan.blocks[b][ax] * block;
          // Central half of the block along each axis.
          blob.center.push_back(origin + rng.uniform(block / 4.0, 3.0 * block / 4.0));
        }
        if (plan.signal[b]) {
          blob.magnitude = group == 0 ? rng.uniform(1.0, 5.0) : rng.uniform(4.0, 8.0);
        } else {
          blob.magnitude = rng.uniform(1.0, 6.0);
        }
        s.blobs.push_back(std::move(blob));
      }
      s.pixels = render_gaussian_image(s.blobs, params.noise_sd, params.shape, rng);
      ds.samples.push_back(std::move(s));
    }
  }

  // Exactly ceil(train_fraction * n) train samples per group.
  ds.split.assign(ds.samples.size(), Split::kTest);
  for (int group = 0; group < 2; ++group) {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < ds.samples.size(); ++i)
      if (ds.samples[i].group == group) idx.push_back(static_cast<int64_t>(i));
    rng.shuffle(idx);
    const int64_t n_train = static_cast<int64_t>(
        std::ceil(params.train_fraction * static_cast<double>(idx.size())));
    for (int64_t i = 0; i < n_train; ++i) ds.split[static_cast<size_t>(idx[i])] = Split::kTrain;
  }
  return ds;
}

}  // namespace

SyntheticDataset generate_dataset(const DatasetParams& params, uint64_t seed) {
  if (params.shape.size() != 2) throw std::invalid_argument("generate_dataset: expected a 2-d shape");
  return generate_impl(params, seed, plan_2d());
}

SyntheticDataset generate_dataset_3d(const DatasetParams& params, uint64_t seed) {
  if (params.shape.size() != 3)
    throw std::invalid_argument("generate_dataset_3d: expected a 3-d shape");
  return generate_impl(params, seed, plan_3d());
}

Tensor ground_truth_pattern(const ImageSample& sample) {
  if (sample.blobs.empty())
    throw std::invalid_argument("ground_truth_pattern: sample carries no blob metadata");
  std::vector<BlobSpec> unit;
  for (const auto& b : sample.blobs) {
    if (!b.group_signal) continue;
    BlobSpec u = b;
    u.magnitude = 1.0;
    unit.push_back(std::move(u));
  }
  if (unit.empty())
    throw std::invalid_argument("ground_truth_pattern: sample has no group-signal blobs");
  RandomStream dummy(0);  // noise-free rendering draws nothing
  return render_gaussian_image(unit, 0.0, sample.pixels.shape(), dummy);
}

Tensor ground_truth_group_pattern(const std::vector<const ImageSample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("ground_truth_group_pattern: no samples");
  Tensor mean = ground_truth_pattern(*samples[0]);
  for (size_t i = 1; i < samples.size(); ++i) {
    const Tensor p = ground_truth_pattern(*samples[i]);
    for (int64_t v = 0; v < mean.numel(); ++v) mean[v] += p[v];
  }
  for (int64_t v = 0; v < mean.numel(); ++v) mean[v] /= static_cast<double>(samples.size());
  return mean;
}

// ---- persistence ----

void save_dataset(const SyntheticDataset& ds, const std::string& dir) {
  io::ensure_dir(dir + "/samples");
  io::json manifest;
  manifest["format"] = "simviz-dataset/1";
  manifest["shape"] = ds.shape;
  manifest["rng_seed"] = ds.rng_seed;
  manifest["dtype"] = "float32-le";
  manifest["order"] = "row-major";
  io::json samples = io::json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const ImageSample& s = ds.samples[i];
    const std::string file = "samples/" + std::to_string(s.subject_id) + ".bin";
    io::write_f32_array(dir + "/" + file, s.pixels);
    io::json e;
    e["subject_id"] = s.subject_id;
    e["group"] = s.group;
    e["split"] = ds.split[i] == Split::kTrain ? "train" : "test";
    e["file"] = file;
    io::json blobs = io::json::array();
    for (const auto& b : s.blobs) {
      io::json bj;
      bj["center"] = b.center;
      bj["magnitude"] = b.magnitude;
      bj["width"] = b.width;
      bj["group_signal"] = b.group_signal;
      blobs.push_back(std::move(bj));
    }
    e["blobs"] = std::move(blobs);
    samples.push_back(std::move(e));
  }
  manifest["samples"] = std::move(samples);
  io::write_json_file(dir + "/dataset.json", manifest);
}

SyntheticDataset load_dataset(const std::string& dir) {
  const io::json manifest = io::read_json_file(dir + "/dataset.json");
  if (manifest.value("format", "") != "simviz-dataset/1")
    throw std::runtime_error("unrecognized dataset format in " + dir);
  SyntheticDataset ds;
  ds.shape = manifest.at("shape").get<std::vector<int64_t>>();
  ds.rng_seed = manifest.at("rng_seed").get<uint64_t>();
  for (const auto& e : manifest.at("samples")) {
    ImageSample s;
    s.subject_id = e.at("subject_id").get<int64_t>();
    s.group = e.at("group").get<int>();
    s.pixels = io::read_f32_array(dir + "/" + e.at("file").get<std::string>(), ds.shape);
    for (const auto& bj : e.at("blobs")) {
      BlobSpec b;
      b.center = bj.at("center").get<std::vector<double>>();
      b.magnitude = bj.at("magnitude").get<double>();
      b.width = bj.at("width").get<double>();
      b.group_signal = bj.at("group_signal").get<bool>();
      s.blobs.push_back(std::move(b));
    }
    ds.samples.push_back(std::move(s));
    ds.split.push_back(e.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kTest);
  }
  return ds;
}

}  // namespace simviz::synth
