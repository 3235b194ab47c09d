#ifndef SIMVIZ_MODELS_HPP
#define SIMVIZ_MODELS_HPP

#include <optional>
#include <string>
#include <vector>

#include "simviz/nn.hpp"

namespace simviz::models {

enum class ClassifierKind { kConv2d, kConv3d, kLinear };

struct ForwardOptions {
  bool guided_relu = false;
  std::string capture;  // "", "input", "stack<i>", "hidden"
};

struct ClassifierForward {
  ad::Var logit;     // (N)
  ad::Var captured;  // null unless requested
};

/// Binary classifier emitting one pre-sigmoid logit per image; the decision
/// rule is logit > 0 => group 1.
class LogitClassifier {
 public:
  /// conv(3x3)/ReLU/max-pool stacks with channels {2,4,8}, then a perceptron
  /// with one hidden layer of 16.
  static LogitClassifier build_2d(std::vector<int64_t> spatial = {32, 32}, uint64_t seed = 1);
  /// Four 3x3x3 conv/ReLU/max-pool stacks with channels {16,32,64,16}, then a
  /// hidden layer of 64. The flattened feature count follows from the input
  /// extent.
  static LogitClassifier build_3d(std::vector<int64_t> spatial = {64, 64, 64}, uint64_t seed = 1);
  /// Degenerate affine classifier: logit = <weight_map, X> + bias. Useful as
  /// an analytically tractable probe.
  static LogitClassifier linear_probe(Tensor weight_map, double bias = 0.0);

  ClassifierForward forward(const ad::Var& x, const ForwardOptions& opt = {}) const;
  double classify(const Tensor& image) const;
  std::vector<double> classify_batch(const std::vector<const Tensor*>& images,
                                     int64_t max_batch = 64) const;

  void freeze();
  bool frozen() const { return frozen_; }
  void set_trainable(bool trainable);

  ClassifierKind kind() const { return kind_; }
  const std::vector<int64_t>& input_spatial() const { return spatial_; }
  const std::vector<int64_t>& channels() const { return channels_; }
  int64_t flattened_features() const { return flat_features_; }
  int64_t hidden_width() const { return hidden_; }
  int64_t stack_count() const { return static_cast<int64_t>(convs_.size()); }
  std::string default_target_layer() const;
  int64_t parameter_count() const;

  std::vector<nn::NamedModelTensor> named_tensors();
  std::vector<ad::Var> trainable_params();

  void save(const std::string& dir) const;
  static LogitClassifier load(const std::string& dir);

 private:
  ClassifierKind kind_ = ClassifierKind::kConv2d;
  std::vector<int64_t> spatial_;
  std::vector<int64_t> channels_;
  int64_t hidden_ = 0;
  int64_t flat_features_ = 0;
  bool frozen_ = false;

  std::vector<nn::Conv> convs_;
  nn::Dense fc1_, fc2_;  // fc2 zero-initialized: the first logit is exactly 0
  nn::Dense lin_;        // linear kind
};

enum class SimMode { kDirectImage, kWarpField };
enum class Coupling { kCondConv, kSeparateEncoders };

std::string to_string(SimMode m);
std::string to_string(Coupling c);
SimMode sim_mode_from_string(const std::string& s);
Coupling coupling_from_string(const std::string& s);

struct SimulatorSpec {
  size_t dims = 2;
  SimMode mode = SimMode::kDirectImage;
  Coupling coupling = Coupling::kCondConv;
  int64_t experts = 3;
  std::vector<int64_t> spatial = {32, 32};
  std::vector<int64_t> channels;  // defaults: {1,2,4,8} (2-d), {16,32,64,16,16} (3-d)
  int64_t hidden = 0;             // defaults: 64 (2-d), 512 (3-d)

  void apply_defaults();
  void validate() const;
};

struct SimForward {
  ad::Var image;  // simulated image (N, 1, spatial)
  ad::Var field;  // displacement field (N, d, spatial); null in direct mode
};

/// Task-conditioned U-net realizing both simulators with one parameter set:
/// task 0 injects the group-1 pattern, task 1 removes it. The encoder and
/// decoder use conditional convolutions routed on pooled features and the
/// task label; `kSeparateEncoders` swaps those for two unshared conventional
/// encoders (one per task) with everything else unchanged.
class CoupledSimulator {
 public:
  static CoupledSimulator build(SimulatorSpec spec, uint64_t seed = 1);

  SimForward forward(const ad::Var& x, int task, bool training);

  struct SimResult {
    Tensor image;  // (N, 1, spatial)
    Tensor field;  // (N, d, spatial); empty in direct mode
  };
  /// Eval-mode convenience pass over a batch (N, 1, spatial...).
  SimResult simulate(const Tensor& batch, int task);

  const SimulatorSpec& spec() const { return spec_; }
  int64_t parameter_count() const;
  std::vector<nn::NamedModelTensor> named_tensors();
  std::vector<ad::Var> trainable_params();

  void save(const std::string& dir) const;
  static CoupledSimulator load(const std::string& dir);

 private:
  struct CondStack {
    nn::CondConv cc;
    nn::BatchNorm bn;
  };
  struct PlainStack {
    nn::Conv conv;
    nn::BatchNorm bn;
  };

  SimulatorSpec spec_;
  std::vector<int64_t> bottleneck_;  // spatial extent at the bottleneck
  int64_t flat_features_ = 0;

  // condconv coupling
  std::vector<CondStack> enc_, dec_;
  // separate-encoder coupling: one conventional encoder per task
  std::vector<PlainStack> enc_t0_, enc_t1_;
  std::vector<PlainStack> dec_plain_;

  nn::Dense fc1_, fc2_;
  nn::Conv head_;  // zero-initialized in warp mode: training starts at identity
};

}  // namespace simviz::models

#endif
