#include "simviz/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simviz::nn {

double he_uniform_limit(int64_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

namespace {
Tensor he_uniform(std::vector<int64_t> shape, int64_t fan_in, RandomStream& rng) {
  Tensor t(std::move(shape));
  const double lim = he_uniform_limit(fan_in);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-lim, lim);
  return t;
}

int64_t kernel_taps(int64_t k, size_t dims) {
  int64_t t = 1;
  for (size_t i = 0; i < dims; ++i) t *= k;
  return t;
}
}  // namespace

Dense Dense::create(int64_t in, int64_t out, RandomStream& rng) {
  Dense d;
  d.W = ad::leaf(he_uniform({out, in}, in, rng), true);
  d.b = ad::leaf(Tensor({out}), true);
  return d;
}

Dense Dense::create_zero(int64_t in, int64_t out) {
  Dense d;
  d.W = ad::leaf(Tensor({out, in}), true);
  d.b = ad::leaf(Tensor({out}), true);
  return d;
}

void Dense::collect(const std::string& prefix, std::vector<NamedModelTensor>& out) {
  out.push_back({prefix + ".W", &W->value, W});
  if (b) out.push_back({prefix + ".b", &b->value, b});
}

Conv Conv::create(int64_t in_ch, int64_t out_ch, int64_t k, size_t dims, RandomStream& rng) {
  Conv c;
  std::vector<int64_t> shape{out_ch, in_ch};
  for (size_t i = 0; i < dims; ++i) shape.push_back(k);
  c.W = ad::leaf(he_uniform(std::move(shape), in_ch * kernel_taps(k, dims), rng), true);
  c.b = ad::leaf(Tensor({out_ch}), true);
  return c;
}

Conv Conv::create_zero(int64_t in_ch, int64_t out_ch, int64_t k, size_t dims) {
  Conv c;
  std::vector<int64_t> shape{out_ch, in_ch};
  for (size_t i = 0; i < dims; ++i) shape.push_back(k);
  c.W = ad::leaf(Tensor(shape), true);
  c.b = ad::leaf(Tensor({out_ch}), true);
  return c;
}

void Conv::collect(const std::string& prefix, std::vector<NamedModelTensor>& out) {
  out.push_back({prefix + ".W", &W->value, W});
  out.push_back({prefix + ".b", &b->value, b});
}

ad::Var route_weights(const ad::Var& f, double task, const ad::Var& routing) {
  const auto& rs = routing->value.shape();
  if (rs.size() != 2) throw std::invalid_argument("route_weights: routing must be (K, C+1)");
  if (f->value.rank() < 3) throw std::invalid_argument("route_weights: feature map must be (N, C, spatial)");
  if (rs[1] != f->value.dim(1) + 1)
    throw std::invalid_argument("route_weights: routing expects " + std::to_string(rs[1] - 1) +
                                " channels, feature map has " + std::to_string(f->value.dim(1)));
  return ad::sigmoid(ad::dense(ad::append_feature(ad::global_avg_pool(f), task), routing, nullptr));
}

CondConv CondConv::create(int64_t n_experts, int64_t in_ch, int64_t out_ch, int64_t k, size_t dims,
                          RandomStream& rng) {
  if (n_experts < 1) throw std::invalid_argument("condconv: need at least one expert");
  CondConv c;
  std::vector<int64_t> shape{n_experts, out_ch, in_ch};
  for (size_t i = 0; i < dims; ++i) shape.push_back(k);
  c.experts = ad::leaf(he_uniform(std::move(shape), in_ch * kernel_taps(k, dims), rng), true);
  c.routing = ad::leaf(Tensor({n_experts, in_ch + 1}), true);
  return c;
}

void CondConv::collect(const std::string& prefix, std::vector<NamedModelTensor>& out) {
  out.push_back({prefix + ".experts", &experts->value, experts});
  out.push_back({prefix + ".routing", &routing->value, routing});
}

BatchNorm BatchNorm::create(int64_t channels) {
  BatchNorm b;
  b.gamma = ad::leaf(Tensor({channels}, 1.0), true);
  b.beta = ad::leaf(Tensor({channels}), true);
  b.state.running_mean = Tensor({channels});
  b.state.running_var = Tensor({channels}, 1.0);
  return b;
}

void BatchNorm::collect(const std::string& prefix, std::vector<NamedModelTensor>& out) {
  out.push_back({prefix + ".gamma", &gamma->value, gamma});
  out.push_back({prefix + ".beta", &beta->value, beta});
  out.push_back({prefix + ".running_mean", &state.running_mean, nullptr});
  out.push_back({prefix + ".running_var", &state.running_var, nullptr});
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  std::vector<int64_t> shape{static_cast<int64_t>(images.size()), 1};
  for (int64_t s : images[0]->shape()) shape.push_back(s);
  Tensor out(shape);
  const int64_t per = images[0]->numel();
  for (size_t i = 0; i < images.size(); ++i) {
    if (!images[i]->same_shape(*images[0]))
      throw std::invalid_argument("stack_images: inconsistent image shapes");
    std::copy_n(images[i]->data(), per, out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

}  // namespace simviz::nn
