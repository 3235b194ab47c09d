#include "simviz/models.hpp"

#include <algorithm>
#include <stdexcept>

#include "simviz/io.hpp"

namespace simviz::models {

namespace {

int64_t prod(const std::vector<int64_t>& v) {
  int64_t p = 1;
  for (int64_t x : v) p *= x;
  return p;
}

std::vector<int64_t> batched_shape(const std::vector<int64_t>& spatial, int64_t n, int64_t c) {
  std::vector<int64_t> s{n, c};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return s;
}

void check_divisible(const std::vector<int64_t>& spatial, int64_t halvings, const char* what) {
  for (int64_t s : spatial) {
    int64_t v = s;
    for (int64_t i = 0; i < halvings; ++i) {
      if (v % 2 != 0)
        throw std::invalid_argument(std::string(what) + ": spatial extent " + std::to_string(s) +
                                    " is not divisible by 2^" + std::to_string(halvings));
      v /= 2;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LogitClassifier
// ---------------------------------------------------------------------------

LogitClassifier LogitClassifier::build_2d(std::vector<int64_t> spatial, uint64_t seed) {
  if (spatial.size() != 2) throw std::invalid_argument("build_2d: need a 2-d input shape");
  LogitClassifier m;
  m.kind_ = ClassifierKind::kConv2d;
  m.spatial_ = std::move(spatial);
  m.channels_ = {2, 4, 8};
  m.hidden_ = 16;
  check_divisible(m.spatial_, 3, "build_2d");

  RandomStream rng(seed);
  int64_t in_ch = 1;
  for (int64_t ch : m.channels_) {
    auto layer_rng = rng.fork(static_cast<uint64_t>(ch));
    m.convs_.push_back(nn::Conv::create(in_ch, ch, 3, 2, layer_rng));
    in_ch = ch;
  }
  int64_t grid = 1;
  for (int64_t s : m.spatial_) grid *= s / 8;  // three pools
  m.flat_features_ = m.channels_.back() * grid;
  auto fc_rng = rng.fork(101);
  m.fc1_ = nn::Dense::create(m.flat_features_, m.hidden_, fc_rng);
  m.fc2_ = nn::Dense::create_zero(m.hidden_, 1);
  return m;
}

LogitClassifier LogitClassifier::build_3d(std::vector<int64_t> spatial, uint64_t seed) {
  if (spatial.size() != 3) throw std::invalid_argument("build_3d: need a 3-d input shape");
  LogitClassifier m;
  m.kind_ = ClassifierKind::kConv3d;
  m.spatial_ = std::move(spatial);
  m.channels_ = {16, 32, 64, 16};
  m.hidden_ = 64;
  check_divisible(m.spatial_, 4, "build_3d");

  RandomStream rng(seed);
  int64_t in_ch = 1;
  for (int64_t ch : m.channels_) {
    auto layer_rng = rng.fork(static_cast<uint64_t>(ch));
    m.convs_.push_back(nn::Conv::create(in_ch, ch, 3, 3, layer_rng));
    in_ch = ch;
  }
  int64_t grid = 1;
  for (int64_t s : m.spatial_) grid *= s / 16;  // four pools
  m.flat_features_ = m.channels_.back() * grid;
  auto fc_rng = rng.fork(101);
  m.fc1_ = nn::Dense::create(m.flat_features_, m.hidden_, fc_rng);
  m.fc2_ = nn::Dense::create_zero(m.hidden_, 1);
  return m;
}

LogitClassifier LogitClassifier::linear_probe(Tensor weight_map, double bias) {
  LogitClassifier m;
  m.kind_ = ClassifierKind::kLinear;
  m.spatial_ = weight_map.shape();
  m.flat_features_ = weight_map.numel();
  m.lin_.W = ad::leaf(weight_map.reshaped({1, weight_map.numel()}), true);
  m.lin_.b = ad::leaf(Tensor({1}, bias), true);
  return m;
}

ClassifierForward LogitClassifier::forward(const ad::Var& x, const ForwardOptions& opt) const {
  const auto& xs = x->value.shape();
  if (xs.size() != spatial_.size() + 2 || xs[1] != 1)
    throw std::invalid_argument("classifier forward: expected (N, 1, spatial), got " +
                                x->value.shape_str());
  for (size_t i = 0; i < spatial_.size(); ++i)
    if (xs[i + 2] != spatial_[i])
      throw std::invalid_argument("classifier forward: input extent mismatch " + x->value.shape_str());
  const int64_t N = xs[0];

  ClassifierForward out;
  auto maybe_capture = [&](const std::string& name, const ad::Var& v) {
    if (opt.capture == name) out.captured = v;
  };
  auto act = [&](const ad::Var& v) { return opt.guided_relu ? ad::relu_guided(v) : ad::relu(v); };

  maybe_capture("input", x);
  if (kind_ == ClassifierKind::kLinear) {
    out.logit = ad::reshape(lin_.forward(ad::reshape(x, {N, flat_features_})), {N});
    if (!opt.capture.empty() && !out.captured)
      throw std::invalid_argument("unknown capture layer: " + opt.capture);
    return out;
  }

  ad::Var h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = act(convs_[i].forward(h));
    maybe_capture("stack" + std::to_string(i + 1), h);
    h = ad::maxpool2(h);
  }
  h = ad::reshape(h, {N, flat_features_});
  h = act(fc1_.forward(h));
  maybe_capture("hidden", h);
  out.logit = ad::reshape(fc2_.forward(h), {N});
  if (!opt.capture.empty() && !out.captured)
    throw std::invalid_argument("unknown capture layer: " + opt.capture);
  return out;
}

double LogitClassifier::classify(const Tensor& image) const {
  auto x = ad::leaf(image.reshaped(batched_shape(spatial_, 1, 1)));
  return forward(x).logit->value[0];
}

std::vector<double> LogitClassifier::classify_batch(const std::vector<const Tensor*>& images,
                                                    int64_t max_batch) const {
  std::vector<double> out;
  out.reserve(images.size());
  for (size_t start = 0; start < images.size(); start += static_cast<size_t>(max_batch)) {
    const size_t end = std::min(images.size(), start + static_cast<size_t>(max_batch));
    std::vector<const Tensor*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                     images.begin() + static_cast<std::ptrdiff_t>(end));
    auto x = ad::leaf(nn::stack_images(chunk));
    auto logits = forward(x).logit;
    for (int64_t i = 0; i < logits->value.numel(); ++i) out.push_back(logits->value[i]);
  }
  return out;
}

void LogitClassifier::freeze() {
  set_trainable(false);
  frozen_ = true;
}

void LogitClassifier::set_trainable(bool trainable) {
  for (auto& v : trainable_params()) v->requires_grad = trainable;
  if (trainable) frozen_ = false;
}

std::string LogitClassifier::default_target_layer() const {
  if (kind_ == ClassifierKind::kLinear) return "input";
  return "stack" + std::to_string(convs_.size());
}

int64_t LogitClassifier::parameter_count() const {
  int64_t n = 0;
  for (const auto& c : convs_) n += c.W->value.numel() + c.b->value.numel();
  if (kind_ == ClassifierKind::kLinear) {
    n += lin_.W->value.numel() + lin_.b->value.numel();
  } else {
    n += fc1_.W->value.numel() + fc1_.b->value.numel();
    n += fc2_.W->value.numel() + fc2_.b->value.numel();
  }
  return n;
}

std::vector<nn::NamedModelTensor> LogitClassifier::named_tensors() {
  std::vector<nn::NamedModelTensor> out;
  for (size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("conv" + std::to_string(i + 1), out);
  if (kind_ == ClassifierKind::kLinear) {
    lin_.collect("linear", out);
  } else {
    fc1_.collect("fc1", out);
    fc2_.collect("fc2", out);
  }
  return out;
}

std::vector<ad::Var> LogitClassifier::trainable_params() {
  std::vector<ad::Var> out;
  for (auto& t : named_tensors())
    if (t.var) out.push_back(t.var);
  return out;
}

void LogitClassifier::save(const std::string& dir) const {
  io::json model;
  model["type"] = "logit_classifier";
  switch (kind_) {
    case ClassifierKind::kConv2d: model["kind"] = "conv2d"; break;
    case ClassifierKind::kConv3d: model["kind"] = "conv3d"; break;
    case ClassifierKind::kLinear: model["kind"] = "linear"; break;
  }
  model["input_shape"] = spatial_;
  model["channels"] = channels_;
  model["hidden"] = hidden_;
  std::vector<io::NamedTensorRef> refs;
  auto named = const_cast<LogitClassifier*>(this)->named_tensors();
  refs.reserve(named.size());
  for (const auto& t : named) refs.push_back({t.name, t.tensor});
  io::save_checkpoint(dir, model, refs);
}

LogitClassifier LogitClassifier::load(const std::string& dir) {
  io::Checkpoint ck = io::load_checkpoint(dir);
  if (ck.model.value("type", "") != "logit_classifier")
    throw std::runtime_error("checkpoint in " + dir + " is not a classifier");
  const std::string kind = ck.model.at("kind").get<std::string>();
  const auto spatial = ck.model.at("input_shape").get<std::vector<int64_t>>();
  LogitClassifier m;
  if (kind == "conv2d") {
    m = build_2d(spatial, 0);
  } else if (kind == "conv3d") {
    m = build_3d(spatial, 0);
  } else if (kind == "linear") {
    m = linear_probe(Tensor(spatial), 0.0);
  } else {
    throw std::runtime_error("unknown classifier kind: " + kind);
  }
  auto named = m.named_tensors();
  if (named.size() != ck.params.size())
    throw std::runtime_error("checkpoint parameter count mismatch in " + dir);
  for (auto& t : named) {
    auto it = ck.params.find(t.name);
    if (it == ck.params.end()) throw std::runtime_error("checkpoint missing parameter " + t.name);
    if (!it->second.same_shape(*t.tensor))
      throw std::runtime_error("checkpoint shape mismatch for " + t.name);
    *t.tensor = it->second;
  }
  // A persisted classifier is an inference artifact.
  m.freeze();
  return m;
}

// ---------------------------------------------------------------------------
// CoupledSimulator
// ---------------------------------------------------------------------------

std::string to_string(SimMode m) { return m == SimMode::kDirectImage ? "direct-image" : "warp-field"; }
std::string to_string(Coupling c) {
  return c == Coupling::kCondConv ? "condconv" : "separate-encoders";
}

SimMode sim_mode_from_string(const std::string& s) {
  if (s == "direct-image") return SimMode::kDirectImage;
  if (s == "warp-field") return SimMode::kWarpField;
  throw std::invalid_argument("unknown simulator mode: " + s);
}

Coupling coupling_from_string(const std::string& s) {
  if (s == "condconv") return Coupling::kCondConv;
  if (s == "separate-encoders") return Coupling::kSeparateEncoders;
  throw std::invalid_argument("unknown coupling: " + s);
}

void SimulatorSpec::apply_defaults() {
  if (channels.empty()) channels = dims == 2 ? std::vector<int64_t>{1, 2, 4, 8}
                                             : std::vector<int64_t>{16, 32, 64, 16, 16};
  if (hidden == 0) hidden = dims == 2 ? 64 : 512;
}

void SimulatorSpec::validate() const {
  if (dims != 2 && dims != 3) throw std::invalid_argument("simulator: dims must be 2 or 3");
  if (spatial.size() != dims) throw std::invalid_argument("simulator: spatial rank mismatch");
  if (experts < 1) throw std::invalid_argument("simulator: experts must be >= 1");
  if (channels.empty()) throw std::invalid_argument("simulator: empty channel list");
  check_divisible(spatial, static_cast<int64_t>(channels.size()), "simulator");
}

CoupledSimulator CoupledSimulator::build(SimulatorSpec spec, uint64_t seed) {
  spec.apply_defaults();
  spec.validate();
  CoupledSimulator m;
  m.spec_ = spec;

  const size_t n = spec.channels.size();
  m.bottleneck_ = spec.spatial;
  for (auto& s : m.bottleneck_)
    for (size_t i = 0; i < n; ++i) s /= 2;
  m.flat_features_ = spec.channels.back() * prod(m.bottleneck_);

  RandomStream rng(seed);
  const auto& C = spec.channels;
  auto dec_in = [&](size_t i) {
    const int64_t above = i + 1 == n ? C[n - 1] : C[i + 1];
    return above + C[i];
  };

  if (spec.coupling == Coupling::kCondConv) {
    int64_t in_ch = 1;
    for (size_t i = 0; i < n; ++i) {
      auto r = rng.fork(10 + i);
      m.enc_.push_back({nn::CondConv::create(spec.experts, in_ch, C[i], 3, spec.dims, r),
                        nn::BatchNorm::create(C[i])});
      in_ch = C[i];
    }
    for (size_t i = n; i-- > 0;) {
      auto r = rng.fork(40 + i);
      m.dec_.push_back({nn::CondConv::create(spec.experts, dec_in(i), C[i], 3, spec.dims, r),
                        nn::BatchNorm::create(C[i])});
    }
  } else {
    for (int task = 0; task < 2; ++task) {
      auto& enc = task == 0 ? m.enc_t0_ : m.enc_t1_;
      int64_t in_ch = 1;
      for (size_t i = 0; i < n; ++i) {
        auto r = rng.fork(100 * (task + 1) + i);
        enc.push_back({nn::Conv::create(in_ch, C[i], 3, spec.dims, r), nn::BatchNorm::create(C[i])});
        in_ch = C[i];
      }
    }
    for (size_t i = n; i-- > 0;) {
      auto r = rng.fork(40 + i);
      m.dec_plain_.push_back({nn::Conv::create(dec_in(i), C[i], 3, spec.dims, r),
                              nn::BatchNorm::create(C[i])});
    }
  }

  auto fc_rng = rng.fork(7);
  m.fc1_ = nn::Dense::create(m.flat_features_, spec.hidden, fc_rng);
  auto fc_rng2 = rng.fork(8);
  m.fc2_ = nn::Dense::create(spec.hidden, m.flat_features_, fc_rng2);

  const int64_t out_ch = spec.mode == SimMode::kWarpField ? static_cast<int64_t>(spec.dims) : 1;
  if (spec.mode == SimMode::kWarpField) {
    m.head_ = nn::Conv::create_zero(C[0], out_ch, 3, spec.dims);
  } else {
    auto r = rng.fork(9);
    m.head_ = nn::Conv::create(C[0], out_ch, 3, spec.dims, r);
  }
  return m;
}

SimForward CoupledSimulator::forward(const ad::Var& x, int task, bool training) {
  if (task != 0 && task != 1) throw std::invalid_argument("simulator task must be 0 or 1");
  const auto& xs = x->value.shape();
  if (xs.size() != spec_.dims + 2 || xs[1] != 1)
    throw std::invalid_argument("simulator forward: expected (N, 1, spatial), got " +
                                x->value.shape_str());
  const int64_t N = xs[0];
  const double t = static_cast<double>(task);
  const size_t n = spec_.channels.size();

  std::vector<ad::Var> skips(n);
  ad::Var h = x;
  if (spec_.coupling == Coupling::kCondConv) {
    for (size_t i = 0; i < n; ++i) {
      h = ad::leaky_relu(enc_[i].bn.forward(enc_[i].cc.forward(h, t), training), 0.01);
      skips[i] = h;
      h = ad::maxpool2(h);
    }
  } else {
    auto& enc = task == 0 ? enc_t0_ : enc_t1_;
    for (size_t i = 0; i < n; ++i) {
      h = ad::leaky_relu(enc[i].bn.forward(enc[i].conv.forward(h), training), 0.01);
      skips[i] = h;
      h = ad::maxpool2(h);
    }
  }

  h = ad::reshape(h, {N, flat_features_});
  h = ad::relu(fc1_.forward(h));
  h = fc2_.forward(h);
  std::vector<int64_t> bshape{N, spec_.channels.back()};
  bshape.insert(bshape.end(), bottleneck_.begin(), bottleneck_.end());
  h = ad::reshape(h, bshape);

  for (size_t j = 0; j < n; ++j) {
    const size_t i = n - 1 - j;  // decoder stack j works at encoder stack i's grid
    h = ad::upsample2(h);
    h = ad::concat_channels(h, skips[i]);
    if (spec_.coupling == Coupling::kCondConv) {
      h = ad::leaky_relu(dec_[j].bn.forward(dec_[j].cc.forward(h, t), training), 0.01);
    } else {
      h = ad::leaky_relu(dec_plain_[j].bn.forward(dec_plain_[j].conv.forward(h), training), 0.01);
    }
  }

  SimForward out;
  ad::Var head = head_.forward(h);
  if (spec_.mode == SimMode::kWarpField) {
    out.field = head;
    out.image = ad::warp(x, head);
  } else {
    out.image = head;
  }
  return out;
}

CoupledSimulator::SimResult CoupledSimulator::simulate(const Tensor& batch, int task) {
  auto x = ad::leaf(batch);
  auto f = forward(x, task, false);
  SimResult r;
  r.image = f.image->value;
  if (f.field) r.field = f.field->value;
  return r;
}

int64_t CoupledSimulator::parameter_count() const {
  int64_t total = 0;
  auto named = const_cast<CoupledSimulator*>(this)->named_tensors();
  for (const auto& t : named)
    if (t.var) total += t.tensor->numel();
  return total;
}

std::vector<nn::NamedModelTensor> CoupledSimulator::named_tensors() {
  std::vector<nn::NamedModelTensor> out;
  const size_t n = spec_.channels.size();
  if (spec_.coupling == Coupling::kCondConv) {
    for (size_t i = 0; i < n; ++i) {
      enc_[i].cc.collect("enc" + std::to_string(i + 1) + ".cc", out);
      enc_[i].bn.collect("enc" + std::to_string(i + 1) + ".bn", out);
    }
  } else {
    for (int task = 0; task < 2; ++task) {
      auto& enc = task == 0 ? enc_t0_ : enc_t1_;
      for (size_t i = 0; i < n; ++i) {
        const std::string p = "enc_t" + std::to_string(task) + "_" + std::to_string(i + 1);
        enc[i].conv.collect(p + ".conv", out);
        enc[i].bn.collect(p + ".bn", out);
      }
    }
  }
  fc1_.collect("bottleneck.fc1", out);
  fc2_.collect("bottleneck.fc2", out);
  for (size_t j = 0; j < n; ++j) {
    const std::string p = "dec" + std::to_string(j + 1);
    if (spec_.coupling == Coupling::kCondConv) {
      dec_[j].cc.collect(p + ".cc", out);
      dec_[j].bn.collect(p + ".bn", out);
    } else {
      dec_plain_[j].conv.collect(p + ".conv", out);
      dec_plain_[j].bn.collect(p + ".bn", out);
    }
  }
  head_.collect("head", out);
  return out;
}

std::vector<ad::Var> CoupledSimulator::trainable_params() {
  std::vector<ad::Var> out;
  for (auto& t : named_tensors())
    if (t.var) out.push_back(t.var);
  return out;
}

void CoupledSimulator::save(const std::string& dir) const {
  io::json model;
  model["type"] = "coupled_simulator";
  model["dims"] = spec_.dims;
  model["mode"] = to_string(spec_.mode);
  model["coupling"] = to_string(spec_.coupling);
  model["experts"] = spec_.experts;
  model["input_shape"] = spec_.spatial;
  model["channels"] = spec_.channels;
  model["hidden"] = spec_.hidden;
  std::vector<io::NamedTensorRef> refs;
  auto named = const_cast<CoupledSimulator*>(this)->named_tensors();
  refs.reserve(named.size());
  for (const auto& t : named) refs.push_back({t.name, t.tensor});
  io::save_checkpoint(dir, model, refs);
}

CoupledSimulator CoupledSimulator::load(const std::string& dir) {
  io::Checkpoint ck = io::load_checkpoint(dir);
  if (ck.model.value("type", "") != "coupled_simulator")
    throw std::runtime_error("checkpoint in " + dir + " is not a simulator");
  SimulatorSpec spec;
  spec.dims = ck.model.at("dims").get<size_t>();
  spec.mode = sim_mode_from_string(ck.model.at("mode").get<std::string>());
  spec.coupling = coupling_from_string(ck.model.at("coupling").get<std::string>());
  spec.experts = ck.model.at("experts").get<int64_t>();
  spec.spatial = ck.model.at("input_shape").get<std::vector<int64_t>>();
  spec.channels = ck.model.at("channels").get<std::vector<int64_t>>();
  spec.hidden = ck.model.at("hidden").get<int64_t>();
  CoupledSimulator m = build(spec, 0);
  auto named = m.named_tensors();
  if (named.size() != ck.params.size())
    throw std::runtime_error("checkpoint parameter count mismatch in " + dir);
  for (auto& t : named) {
    auto it = ck.params.find(t.name);
    if (it == ck.params.end()) throw std::runtime_error("checkpoint missing parameter " + t.name);
    if (!it->second.same_shape(*t.tensor))
      throw std::runtime_error("checkpoint shape mismatch for " + t.name);
    *t.tensor = it->second;
  }
  return m;
}

}  // namespace simviz::models
