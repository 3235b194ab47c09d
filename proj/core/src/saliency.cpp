#include "simviz/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simviz::saliency {

using models::ForwardOptions;
using models::LogitClassifier;

namespace {

std::vector<int64_t> batched(const std::vector<int64_t>& spatial) {
  std::vector<int64_t> s{1, 1};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return s;
}

struct GradientPass {
  Tensor input_grad;      // (spatial)
  Tensor captured_value;  // (C, spatial) if captured
  Tensor captured_grad;
};

GradientPass input_gradient(const LogitClassifier& cls, const Tensor& image, bool guided,
                            const std::string& capture) {
  auto x = ad::leaf(image.reshaped(batched(cls.input_spatial())), /*requires_grad=*/true);
  ForwardOptions opt;
  opt.guided_relu = guided;
  opt.capture = capture;
  auto fwd = cls.forward(x, opt);
  ad::backward(fwd.logit);

  GradientPass out;
  out.input_grad = x->grad.reshaped(image.shape());
  if (fwd.captured) {
    const auto& cs = fwd.captured->value.shape();
    std::vector<int64_t> no_batch(cs.begin() + 1, cs.end());
    out.captured_value = fwd.captured->value.reshaped(no_batch);
    out.captured_grad = fwd.captured->has_grad()
                            ? fwd.captured->grad.reshaped(no_batch)
                            : Tensor(no_batch);
  }
  return out;
}

}  // namespace

SaliencyMap saliency_bp(const LogitClassifier& cls, const Tensor& image) {
  SaliencyMap m;
  m.values = input_gradient(cls, image, false, "").input_grad;
  m.method = "bp";
  return m;
}

SaliencyMap saliency_guided_bp(const LogitClassifier& cls, const Tensor& image) {
  SaliencyMap m;
  m.values = input_gradient(cls, image, true, "").input_grad;
  m.method = "guided-bp";
  return m;
}

Tensor resize_positioned(const Tensor& coarse, const std::vector<double>& origin,
                         const std::vector<double>& spacing, const std::vector<int64_t>& out_shape) {
  const size_t d = out_shape.size();
  if (coarse.rank() != d || origin.size() != d || spacing.size() != d)
    throw std::invalid_argument("resize_positioned: rank mismatch");

  const auto& cs = coarse.shape();
  std::vector<int64_t> cstride(d, 1), ostride(d, 1);
  for (size_t i = d; i-- > 1;) {
    cstride[i - 1] = cstride[i] * cs[i];
    ostride[i - 1] = ostride[i] * out_shape[i];
  }

  Tensor out(out_shape);
  for (int64_t v = 0; v < out.numel(); ++v) {
    // Per-axis coarse coordinate, clamped to the coarse extent.
    double w[3][2];
    int64_t idx[3][2];
    for (size_t ax = 0; ax < d; ++ax) {
      const int64_t coord = (v / ostride[ax]) % out_shape[ax];
      double t = (static_cast<double>(coord) - origin[ax]) / spacing[ax];
      t = std::clamp(t, 0.0, static_cast<double>(cs[ax] - 1));
      const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(t)), cs[ax] - 1);
      const int64_t i1 = std::min<int64_t>(i0 + 1, cs[ax] - 1);
      const double f = t - static_cast<double>(i0);
      idx[ax][0] = i0;
      idx[ax][1] = i1;
      w[ax][0] = 1.0 - f;
      w[ax][1] = f;
    }
    double acc = 0.0;
    const int corners = 1 << d;
    for (int c = 0; c < corners; ++c) {
      double weight = 1.0;
      int64_t flat = 0;
      for (size_t ax = 0; ax < d; ++ax) {
        const int bit = (c >> ax) & 1;
        weight *= w[ax][bit];
        flat += idx[ax][bit] * cstride[ax];
      }
      acc += weight * coarse[flat];
    }
    out[v] = acc;
  }
  return out;
}

SaliencyMap grad_cam(const LogitClassifier& cls, const Tensor& image, const std::string& layer) {
  const std::string target = layer.empty() ? cls.default_target_layer() : layer;
  GradientPass pass = input_gradient(cls, image, false, target);
  if (pass.captured_value.empty())
    throw std::invalid_argument("grad_cam: no activations captured for layer " + target);

  const auto& as = pass.captured_value.shape();  // (C, spatial)
  const int64_t C = as[0];
  std::vector<int64_t> grid(as.begin() + 1, as.end());
  int64_t spatial = 1;
  for (int64_t g : grid) spatial *= g;

  Tensor cam(grid);
  for (int64_t c = 0; c < C; ++c) {
    double wsum = 0.0;
    const double* gp = pass.captured_grad.data() + c * spatial;
    for (int64_t i = 0; i < spatial; ++i) wsum += gp[i];
    const double w = wsum / static_cast<double>(spatial);
    const double* ap = pass.captured_value.data() + c * spatial;
    for (int64_t i = 0; i < spatial; ++i) cam[i] += w * ap[i];
  }
  for (int64_t i = 0; i < spatial; ++i) cam[i] = std::max(cam[i], 0.0);

  SaliencyMap m;
  m.method = "grad-cam";
  m.coarse = cam;
  const auto& full = image.shape();
  std::vector<double> origin(grid.size()), spacing(grid.size());
  for (size_t ax = 0; ax < grid.size(); ++ax) {
    const double f = static_cast<double>(full[ax]) / static_cast<double>(grid[ax]);
    spacing[ax] = f;
    origin[ax] = (f - 1.0) / 2.0;  // matches nearest-neighbour pixel centers
  }
  m.values = grid == full ? cam : resize_positioned(cam, origin, spacing, full);
  return m;
}

SaliencyMap guided_grad_cam(const LogitClassifier& cls, const Tensor& image,
                            const std::string& layer) {
  SaliencyMap cam = grad_cam(cls, image, layer);
  SaliencyMap gbp = saliency_guided_bp(cls, image);
  SaliencyMap m;
  m.method = "guided-grad-cam";
  m.values = cam.values;
  for (int64_t i = 0; i < m.values.numel(); ++i) m.values[i] *= gbp.values[i];
  return m;
}

double balanced_accuracy(const LogitClassifier& cls,
                         const std::vector<const synth::ImageSample*>& samples) {
  int64_t correct[2] = {0, 0}, total[2] = {0, 0};
  std::vector<const Tensor*> imgs;
  imgs.reserve(samples.size());
  for (const auto* s : samples) imgs.push_back(&s->pixels);
  const auto logits = cls.classify_batch(imgs);
  for (size_t i = 0; i < samples.size(); ++i) {
    const int g = samples[i]->group;
    total[g]++;
    if ((logits[i] > 0.0) == (g == 1)) correct[g]++;
  }
  if (total[0] == 0 || total[1] == 0)
    throw std::invalid_argument("balanced_accuracy: need samples from both groups");
  return 0.5 * (static_cast<double>(correct[0]) / static_cast<double>(total[0]) +
                static_cast<double>(correct[1]) / static_cast<double>(total[1]));
}

SaliencyMap occlusion_map(const LogitClassifier& cls,
                          const std::vector<const synth::ImageSample*>& test_set,
                          const OcclusionParams& params) {
  if (test_set.empty()) throw std::invalid_argument("occlusion_map: empty test set");
  const auto& spatial = cls.input_spatial();
  const size_t d = spatial.size();
  std::vector<int64_t> window = params.window;
  if (window.empty()) window.assign(d, 8);
  if (window.size() != d) throw std::invalid_argument("occlusion_map: window rank mismatch");
  for (size_t ax = 0; ax < d; ++ax)
    if (window[ax] > spatial[ax])
      throw std::invalid_argument("occlusion_map: window larger than image");
  if (params.stride < 1) throw std::invalid_argument("occlusion_map: stride must be >= 1");

  const double base = balanced_accuracy(cls, test_set);

  std::vector<int64_t> counts(d);
  for (size_t ax = 0; ax < d; ++ax) counts[ax] = (spatial[ax] - window[ax]) / params.stride + 1;
  Tensor coarse(counts);

  std::vector<int64_t> sstride(d, 1), cstride(d, 1);
  for (size_t i = d; i-- > 1;) {
    sstride[i - 1] = sstride[i] * spatial[i];
    cstride[i - 1] = cstride[i] * counts[i];
  }

  // Occluded copies are rebuilt per position; bounded by one image at a time.
  std::vector<Tensor> occluded;
  occluded.reserve(test_set.size());
  for (int64_t p = 0; p < coarse.numel(); ++p) {
    std::vector<int64_t> start(d);
    for (size_t ax = 0; ax < d; ++ax) start[ax] = ((p / cstride[ax]) % counts[ax]) * params.stride;

    occluded.clear();
    for (const auto* s : test_set) {
      Tensor img = s->pixels;
      // Overwrite the window.
      std::vector<int64_t> pos(d, 0);
      bool done = false;
      while (!done) {
        int64_t flat = 0;
        for (size_t ax = 0; ax < d; ++ax) flat += (start[ax] + pos[ax]) * sstride[ax];
        img[flat] = params.fill;
        size_t ax = d;
        done = true;
        while (ax-- > 0) {
          if (++pos[ax] < window[ax]) {
            done = false;
            break;
          }
          pos[ax] = 0;
        }
      }
      occluded.push_back(std::move(img));
    }

    int64_t correct[2] = {0, 0}, total[2] = {0, 0};
    std::vector<const Tensor*> imgs;
    imgs.reserve(occluded.size());
    for (const auto& t : occluded) imgs.push_back(&t);
    const auto logits = cls.classify_batch(imgs);
    for (size_t i = 0; i < test_set.size(); ++i) {
      const int g = test_set[i]->group;
      total[g]++;
      if ((logits[i] > 0.0) == (g == 1)) correct[g]++;
    }
    if (total[0] == 0 || total[1] == 0)
      throw std::invalid_argument("occlusion_map: need samples from both groups");
    const double occ = 0.5 * (static_cast<double>(correct[0]) / static_cast<double>(total[0]) +
                              static_cast<double>(correct[1]) / static_cast<double>(total[1]));
    coarse[p] = base - occ;
  }

  SaliencyMap m;
  m.method = "occlusion";
  m.coarse = coarse;
  m.window = window;
  m.stride = params.stride;
  m.baseline_accuracy = base;
  std::vector<double> origin(d), spacing(d);
  for (size_t ax = 0; ax < d; ++ax) {
    origin[ax] = static_cast<double>(window[ax] / 2);  // drop sits at the window center voxel
    spacing[ax] = static_cast<double>(params.stride);
  }
  m.values = resize_positioned(coarse, origin, spacing, spatial);
  return m;
}

}  // namespace simviz::saliency
