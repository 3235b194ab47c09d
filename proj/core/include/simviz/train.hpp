#ifndef SIMVIZ_TRAIN_HPP
#define SIMVIZ_TRAIN_HPP

#include <functional>
#include <string>
#include <vector>

#include "simviz/losses.hpp"
#include "simviz/models.hpp"
#include "simviz/synthdata.hpp"

namespace simviz::train {

enum class LossVariant { kLogitShift, kBce };
std::string to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

struct TrainConfig {
  double delta = 5.0;        // logit-shift threshold
  double lambda_phi = 0.02;  // smoothness weight (warp mode)
  int64_t experts = 3;
  double lr = 1e-4;
  int64_t epochs = 60;
  int64_t batch_size = 32;
  models::SimMode mode = models::SimMode::kDirectImage;
  LossVariant loss_variant = LossVariant::kLogitShift;
  models::Coupling coupling = models::Coupling::kCondConv;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 0;  // epochs between checkpoint hooks; 0 = off

  void validate() const;
};

/// Reasonable defaults for training the classifier itself (the simulator
/// fields are ignored there).
TrainConfig default_classifier_config();

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<ad::Var> params, double lr, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step();
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct EpochMetrics {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct ClassifierTraining {
  models::LogitClassifier classifier;  // frozen on return
  std::vector<EpochMetrics> metrics;
};

/// Trains the logit classifier with Adam on binary cross-entropy over the
/// train split. Rejects data whose train split lacks either group.
ClassifierTraining train_classifier(const synth::SyntheticDataset& data, const TrainConfig& cfg);

struct SimulatorHooks {
  std::function<void(const LossBreakdown&)> on_step;
  std::function<void(int64_t epoch, const models::CoupledSimulator&)> on_checkpoint;
};

struct SimulatorTraining {
  models::CoupledSimulator simulator;
  std::vector<LossBreakdown> log;
};

/// Trains the coupled simulator pair against a frozen classifier. Each step
/// draws one batch per group, runs the forward and cycle simulations in both
/// directions, and minimizes E = E_logit + E_cycle + E_phi, with E_phi summed
/// over all four generated fields in warp mode. Only simulator parameters
/// are updated.
SimulatorTraining train_simulator_pair(const models::LogitClassifier& classifier,
                                       const synth::SyntheticDataset& data, const TrainConfig& cfg,
                                       const SimulatorHooks& hooks = {});

/// Classifier logits for a list of samples (convenience for evaluation).
std::vector<double> classifier_logits(const models::LogitClassifier& classifier,
                                      const synth::SyntheticDataset& data,
                                      const std::vector<int64_t>& indices);

}  // namespace simviz::train

#endif
