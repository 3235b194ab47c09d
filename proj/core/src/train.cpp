#include "simviz/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simviz::train {

using models::CoupledSimulator;
using models::LogitClassifier;
using models::SimMode;
using synth::Split;
using synth::SyntheticDataset;

std::string to_string(LossVariant v) { return v == LossVariant::kLogitShift ? "logit-shift" : "bce"; }

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "logit-shift") return LossVariant::kLogitShift;
  if (s == "bce") return LossVariant::kBce;
  throw std::invalid_argument("unknown loss variant: " + s);
}

void TrainConfig::validate() const {
  if (delta <= 0.0) throw std::invalid_argument("config: delta must be > 0");
  if (lambda_phi < 0.0) throw std::invalid_argument("config: lambda_phi must be >= 0");
  if (experts < 1) throw std::invalid_argument("config: experts must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (checkpoint_interval < 0) throw std::invalid_argument("config: checkpoint_interval must be >= 0");
}

TrainConfig default_classifier_config() {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.seed = 1;
  return cfg;
}

AdamOptimizer::AdamOptimizer(std::vector<ad::Var> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamOptimizer::zero_grad() { ad::zero_grad(params_); }

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p->has_grad()) continue;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t j = 0; j < p->value.numel(); ++j) {
      const double g = p->grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      p->value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

namespace {

Tensor gather_batch(const SyntheticDataset& data, const std::vector<int64_t>& order, int64_t start,
                    int64_t count) {
  std::vector<const Tensor*> imgs;
  imgs.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i)
    imgs.push_back(&data.samples[static_cast<size_t>(order[static_cast<size_t>(start + i)])].pixels);
  return nn::stack_images(imgs);
}

double accuracy_on(const LogitClassifier& cls, const SyntheticDataset& data, Split split) {
  int64_t correct = 0, total = 0;
  for (int group = 0; group < 2; ++group) {
    std::vector<const Tensor*> imgs;
    for (int64_t idx : data.indices(group, split)) imgs.push_back(&data.samples[idx].pixels);
    if (imgs.empty()) continue;
    const auto logits = cls.classify_batch(imgs);
    for (double p : logits) correct += ((p > 0.0) == (group == 1)) ? 1 : 0;
    total += static_cast<int64_t>(imgs.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

ClassifierTraining train_classifier(const SyntheticDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.count(0, Split::kTrain) == 0 || data.count(1, Split::kTrain) == 0)
    throw std::invalid_argument("train_classifier: train split must contain both groups");

  LogitClassifier cls = data.shape.size() == 2 ? LogitClassifier::build_2d(data.shape, cfg.seed)
                                               : LogitClassifier::build_3d(data.shape, cfg.seed);

  std::vector<int64_t> train_idx;
  for (int group = 0; group < 2; ++group)
    for (int64_t i : data.indices(group, Split::kTrain)) train_idx.push_back(i);

  AdamOptimizer opt(cls.trainable_params(), cfg.lr);
  RandomStream rng(cfg.seed ^ 0x5eedc1a55UL);

  ClassifierTraining out{std::move(cls), {}};
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < static_cast<int64_t>(train_idx.size());
         start += cfg.batch_size) {
      const int64_t count =
          std::min<int64_t>(cfg.batch_size, static_cast<int64_t>(train_idx.size()) - start);
      Tensor xb = gather_batch(data, train_idx, start, count);
      Tensor targets({count});
      for (int64_t i = 0; i < count; ++i)
        targets[i] = data.samples[static_cast<size_t>(train_idx[static_cast<size_t>(start + i)])].group;

      auto logits = out.classifier.forward(ad::leaf(std::move(xb))).logit;
      auto loss = ad::bce_with_logits_mean(logits, targets);
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      loss_sum += loss->value[0];
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(std::max<int64_t>(batches, 1));
    m.train_accuracy = accuracy_on(out.classifier, data, Split::kTrain);
    m.test_accuracy = accuracy_on(out.classifier, data, Split::kTest);
    out.metrics.push_back(m);
  }
  out.classifier.freeze();
  return out;
}

SimulatorTraining train_simulator_pair(const LogitClassifier& classifier,
                                       const SyntheticDataset& data, const TrainConfig& cfg,
                                       const SimulatorHooks& hooks) {
  cfg.validate();
  if (!classifier.frozen())
    throw std::invalid_argument("train_simulator_pair: classifier must be frozen");
  std::vector<int64_t> xs = data.indices(0, Split::kTrain);
  std::vector<int64_t> ys = data.indices(1, Split::kTrain);
  if (xs.empty() || ys.empty())
    throw std::invalid_argument("train_simulator_pair: a group has no training samples");

  models::SimulatorSpec spec;
  spec.dims = data.shape.size();
  spec.mode = cfg.mode;
  spec.coupling = cfg.coupling;
  spec.experts = cfg.experts;
  spec.spatial = data.shape;
  CoupledSimulator sim = CoupledSimulator::build(spec, cfg.seed + 1);

  AdamOptimizer opt(sim.trainable_params(), cfg.lr);
  RandomStream rng(cfg.seed ^ 0x51e70c1aUL);

  const int64_t batch =
      std::min<int64_t>({cfg.batch_size, static_cast<int64_t>(xs.size()),
                         static_cast<int64_t>(ys.size())});
  const int64_t steps_per_epoch =
      std::min<int64_t>(static_cast<int64_t>(xs.size()), static_cast<int64_t>(ys.size())) / batch;

  SimulatorTraining out{std::move(sim), {}};
  int64_t step = 0;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(xs);
    rng.shuffle(ys);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      auto xb = ad::leaf(gather_batch(data, xs, s * batch, batch));
      auto yb = ad::leaf(gather_batch(data, ys, s * batch, batch));

      // Raw logits are constants for the loss; the classifier is frozen.
      Tensor p_raw_x = classifier.forward(xb).logit->value;
      Tensor p_raw_y = classifier.forward(yb).logit->value;

      auto sim_x = out.simulator.forward(xb, 0, true);   // inject: X -> X_hat
      auto cyc_x = out.simulator.forward(sim_x.image, 1, true);
      auto sim_y = out.simulator.forward(yb, 1, true);   // remove: Y -> Y_hat
      auto cyc_y = out.simulator.forward(sim_y.image, 0, true);

      auto p_sim_x = classifier.forward(sim_x.image).logit;
      auto p_sim_y = classifier.forward(sim_y.image).logit;

      ad::Var e_logit;
      if (cfg.loss_variant == LossVariant::kLogitShift) {
        // max(a, -d) = relu(a + d) - d.
        auto hx = ad::add_scalar(
            ad::mean_all(ad::relu(ad::add_scalar(ad::sub(ad::leaf(p_raw_x), p_sim_x), cfg.delta))),
            -cfg.delta);
        auto hy = ad::add_scalar(
            ad::mean_all(ad::relu(ad::add_scalar(ad::sub(p_sim_y, ad::leaf(p_raw_y)), cfg.delta))),
            -cfg.delta);
        e_logit = ad::add(hx, hy);
      } else {
        e_logit = ad::add(ad::bce_with_logits_mean(p_sim_x, 1.0),
                          ad::bce_with_logits_mean(p_sim_y, 0.0));
      }

      auto e_cycle = ad::add(ad::cycle_rmse(cyc_x.image, xb), ad::cycle_rmse(cyc_y.image, yb));

      ad::Var e_phi;
      if (cfg.mode == SimMode::kWarpField) {
        e_phi = ad::add(ad::add(ad::smoothness_penalty(sim_x.field, cfg.lambda_phi),
                                ad::smoothness_penalty(cyc_x.field, cfg.lambda_phi)),
                        ad::add(ad::smoothness_penalty(sim_y.field, cfg.lambda_phi),
                                ad::smoothness_penalty(cyc_y.field, cfg.lambda_phi)));
      } else {
        e_phi = ad::leaf(Tensor::scalar(0.0));
      }

      auto e_total = ad::add(ad::add(e_logit, e_cycle), e_phi);
      opt.zero_grad();
      ad::backward(e_total);
      opt.step();

      LossBreakdown lb;
      lb.step = step++;
      lb.e_logit = e_logit->value[0];
      lb.e_cycle = e_cycle->value[0];
      lb.e_phi = e_phi->value[0];
      lb.e_total = e_total->value[0];
      out.log.push_back(lb);
      if (hooks.on_step) hooks.on_step(lb);
    }
    if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 &&
        epoch % cfg.checkpoint_interval == 0) {
      hooks.on_checkpoint(epoch, out.simulator);
    }
  }
  return out;
}

std::vector<double> classifier_logits(const LogitClassifier& classifier,
                                      const SyntheticDataset& data,
                                      const std::vector<int64_t>& indices) {
  std::vector<const Tensor*> imgs;
  imgs.reserve(indices.size());
  for (int64_t i : indices) imgs.push_back(&data.samples[static_cast<size_t>(i)].pixels);
  return classifier.classify_batch(imgs);
}

}  // namespace simviz::train
