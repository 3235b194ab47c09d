#ifndef SIMVIZ_NN_HPP
#define SIMVIZ_NN_HPP

#include <string>
#include <vector>

#include "simviz/nn_ops.hpp"
#include "simviz/rng.hpp"

namespace simviz::nn {

/// A tensor a model exposes for serialization. `var` is set for trainable
/// parameters; plain state (batch-norm running statistics) carries only the
/// tensor pointer.
struct NamedModelTensor {
  std::string name;
  Tensor* tensor;
  ad::Var var;  // null for non-trainable state
};

struct Dense {
  ad::Var W;  // (out, in)
  ad::Var b;  // (out) or null

  static Dense create(int64_t in, int64_t out, RandomStream& rng);
  static Dense create_zero(int64_t in, int64_t out);  // weights and bias at zero
  ad::Var forward(const ad::Var& x) const { return ad::dense(x, W, b); }
  void collect(const std::string& prefix, std::vector<NamedModelTensor>& out);
};

struct Conv {
  ad::Var W;  // (OC, IC, k^d)
  ad::Var b;  // (OC)

  static Conv create(int64_t in_ch, int64_t out_ch, int64_t k, size_t dims, RandomStream& rng);
  static Conv create_zero(int64_t in_ch, int64_t out_ch, int64_t k, size_t dims);
  ad::Var forward(const ad::Var& x) const { return ad::conv_nd(x, W, b); }
  void collect(const std::string& prefix, std::vector<NamedModelTensor>& out);
};

/// Expert mixture weights from pooled input features and the task label:
/// alpha_k = sigmoid(<[GlobalAvgPool(f), t], R_k>). `routing` is (K, C+1).
ad::Var route_weights(const ad::Var& f, double task, const ad::Var& routing);

struct CondConv {
  ad::Var experts;  // (K, OC, IC, k^d)
  ad::Var routing;  // (K, IC + 1); zero-initialized so training starts at a
                    // uniform alpha = 0.5 mixture

  static CondConv create(int64_t n_experts, int64_t in_ch, int64_t out_ch, int64_t k, size_t dims,
                         RandomStream& rng);
  ad::Var forward(const ad::Var& x, double task) const {
    return ad::condconv_nd(x, experts, route_weights(x, task, routing));
  }
  void collect(const std::string& prefix, std::vector<NamedModelTensor>& out);
};

struct BatchNorm {
  ad::Var gamma;
  ad::Var beta;
  ad::BatchNormState state;

  static BatchNorm create(int64_t channels);
  ad::Var forward(const ad::Var& x, bool training) {
    return ad::batch_norm(x, gamma, beta, state, training);
  }
  void collect(const std::string& prefix, std::vector<NamedModelTensor>& out);
};

/// He-uniform initialization bound for the given fan-in.
double he_uniform_limit(int64_t fan_in);

/// Stacks single images (spatial...) into a batch tensor (N, 1, spatial...).
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace simviz::nn

#endif
