#pragma once

#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "filmens/conv.hpp"
#include "filmens/film.hpp"
#include "filmens/ops.hpp"
#include "filmens/rng.hpp"
#include "filmens/tensor.hpp"

namespace filmens {

enum class ModelKind { mlp, conv2d_small, conv1d_genome };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::conv2d_small: return "conv2d_small";
    case ModelKind::conv1d_genome: return "conv1d_genome";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "mlp") return ModelKind::mlp;
  if (s == "conv2d_small") return ModelKind::conv2d_small;
  if (s == "conv1d_genome") return ModelKind::conv1d_genome;
  throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelConfig {
  ModelKind kind = ModelKind::mlp;
  Shape input_shape;  // per-sample shape, no batch dim
  std::size_t num_classes = 2;
  std::size_t ensemble_size = 1;
  double gain = 2.0;
  double dropout_rate = 0.5;          // conv1d_genome blocks only
  std::vector<std::size_t> widths;    // conv widths / mlp hidden sizes

  void validate() const {
    if (ensemble_size < 1) throw ConfigError("ModelConfig: ensemble_size must be >= 1");
    if (num_classes < 2) throw ConfigError("ModelConfig: num_classes must be >= 2");
    if (gain < 0.0) throw ConfigError("ModelConfig: gain must be >= 0");
    if (input_shape.empty()) throw ConfigError("ModelConfig: input_shape not set");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("ModelConfig: dropout_rate must be in [0,1)");
  }
};

template <typename S>
struct ForwardCtx {
  Mode mode = Mode::eval;
  Tape<S>* tape = nullptr;
  EnsembleLayout layout{1, 0};
  RngStream* dropout_rng = nullptr;
  std::optional<std::size_t> member_override;
};

template <typename S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
};

template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) = 0;
  virtual void collect_params(std::vector<NamedTensor<S>>& out, const std::string& prefix) {}
  virtual void collect_buffers(std::vector<NamedTensor<S>>& out, const std::string& prefix) {}
  /// Channel count when this is a FiLM normalization layer, else 0.
  virtual std::size_t film_channels() const { return 0; }
};

namespace detail {
template <typename S>
void kaiming_uniform_fill(Tensor<S>& w, std::size_t fan_in, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
}
}  // namespace detail

template <typename S>
class LinearLayer final : public Layer<S> {
 public:
  LinearLayer(std::size_t in, std::size_t out, bool with_bias, RngStream& rng) {
    w_ = Tensor<S>({out, in}, true);
    detail::kaiming_uniform_fill(w_, in, rng);
    if (with_bias) b_ = Tensor<S>({out}, true);
  }
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return linear(x, w_, b_, ctx.tape);
  }
  void collect_params(std::vector<NamedTensor<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".w", w_});
    if (b_.defined()) out.push_back({prefix + ".b", b_});
  }

 private:
  Tensor<S> w_, b_;
};

template <typename S>
class Conv2dLayer final : public Layer<S> {
 public:
  Conv2dLayer(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
              std::size_t pad, bool with_bias, RngStream& rng)
      : stride_(stride), pad_(pad) {
    w_ = Tensor<S>({cout, cin, kernel, kernel}, true);
    detail::kaiming_uniform_fill(w_, cin * kernel * kernel, rng);
    if (with_bias) b_ = Tensor<S>({cout}, true);
  }
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return conv2d(x, w_, b_, stride_, pad_, ctx.tape);
  }
  void collect_params(std::vector<NamedTensor<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".w", w_});
    if (b_.defined()) out.push_back({prefix + ".b", b_});
  }

 private:
  Tensor<S> w_, b_;
  std::size_t stride_, pad_;
};

template <typename S>
class Conv1dLayer final : public Layer<S> {
 public:
  Conv1dLayer(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
              std::size_t pad, bool with_bias, RngStream& rng)
      : stride_(stride), pad_(pad) {
    w_ = Tensor<S>({cout, cin, kernel}, true);
    detail::kaiming_uniform_fill(w_, cin * kernel, rng);
    if (with_bias) b_ = Tensor<S>({cout}, true);
  }
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return conv1d(x, w_, b_, stride_, pad_, ctx.tape);
  }
  void collect_params(std::vector<NamedTensor<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".w", w_});
    if (b_.defined()) out.push_back({prefix + ".b", b_});
  }

 private:
  Tensor<S> w_, b_;
  std::size_t stride_, pad_;
};

template <typename S>
class ReluLayer final : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return relu(x, ctx.tape);
  }
};

template <typename S>
class MaxPool2dLayer final : public Layer<S> {
 public:
  explicit MaxPool2dLayer(std::size_t window) : window_(window) {}
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return max_pool2d(x, window_, ctx.tape);
  }

 private:
  std::size_t window_;
};

template <typename S>
class GlobalAvgPool2dLayer final : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return global_avg_pool2d(x, ctx.tape);
  }
};

template <typename S>
class FlattenLayer final : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return reshape(x, {x.extent(0), x.size() / x.extent(0)}, ctx.tape);
  }
};

template <typename S>
class DropoutLayer final : public Layer<S> {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {}
  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    if (ctx.mode == Mode::train && ctx.dropout_rng == nullptr)
      throw ValueError("DropoutLayer: train mode needs an rng stream");
    static RngStream unused(0, 0);
    return dropout(x, rate_, ctx.mode, ctx.dropout_rng ? *ctx.dropout_rng : unused, ctx.tape);
  }

 private:
  double rate_;
};

template <typename S>
class FiLMBatchNormLayer final : public Layer<S> {
 public:
  FiLMBatchNormLayer(std::size_t members, std::size_t channels, double gain, RngStream& rng)
      : params_(init_film<S>(members, channels, gain, rng)),
        state_(BatchNormState<S>::init(channels)) {}

  Tensor<S> forward(const Tensor<S>& x, ForwardCtx<S>& ctx) override {
    return film_batchnorm_forward(x, params_, state_, ctx.layout, ctx.mode, ctx.tape,
                                  ctx.member_override);
  }
  void collect_params(std::vector<NamedTensor<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".gamma", params_.gamma});
    out.push_back({prefix + ".beta", params_.beta});
  }
  void collect_buffers(std::vector<NamedTensor<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".running_mean", state_.running_mean});
    out.push_back({prefix + ".running_var", state_.running_var});
  }
  std::size_t film_channels() const override { return params_.channels(); }
  FiLMParams<S>& film_params() { return params_; }
  BatchNormState<S>& bn_state() { return state_; }

 private:
  FiLMParams<S> params_;
  BatchNormState<S> state_;
};

/// An ordered layer stack over shared parameters plus one FiLMParams block
/// per normalization layer.  Forward keeps the member-major replicated
/// layout end to end.
template <typename S>
class Model {
 public:
  ModelConfig config;

  void push(std::string name, std::unique_ptr<Layer<S>> layer) {
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
  }

  std::size_t ensemble_size() const { return config.ensemble_size; }
  std::size_t layer_count() const { return layers_.size(); }

  Tensor<S> forward_replicated(const Tensor<S>& x, ForwardCtx<S>& ctx) {
    Tensor<S> h = x;
    for (auto& l : layers_) h = l->forward(h, ctx);
    return h;
  }

  /// Replicate -> layers -> split: per-member logits for a logical batch.
  std::vector<Tensor<S>> member_forward(const Tensor<S>& x, Mode mode, Tape<S>* tape = nullptr,
                                        RngStream* dropout_rng = nullptr) {
    check_input(x);
    const std::size_t m = config.ensemble_size;
    Tensor<S> rep = replicate_batch(x, m, tape);
    ForwardCtx<S> ctx{mode, tape, EnsembleLayout{m, x.extent(0)}, dropout_rng, std::nullopt};
    Tensor<S> logits = forward_replicated(rep, ctx);
    return split_members(logits, ctx.layout, tape);
  }

  /// Runs the whole batch through a single member's FiLM rows without
  /// replication; the reference path batched inference is checked against.
  Tensor<S> single_member_forward(const Tensor<S>& x, std::size_t member, Mode mode) {
    check_input(x);
    if (member >= config.ensemble_size)
      throw ValueError("single_member_forward: member " + std::to_string(member) +
                       " out of range");
    ForwardCtx<S> ctx{mode, nullptr, EnsembleLayout{1, x.extent(0)}, nullptr, member};
    return forward_replicated(x, ctx);
  }

  std::vector<NamedTensor<S>> named_parameters() {
    std::vector<NamedTensor<S>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_params(out, names_[i]);
    return out;
  }
  std::vector<Tensor<S>> parameters() {
    std::vector<Tensor<S>> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
  }
  std::vector<NamedTensor<S>> named_buffers() {
    std::vector<NamedTensor<S>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_buffers(out, names_[i]);
    return out;
  }

  /// Channel counts D_n of the normalization layers, in layer order.
  std::vector<std::size_t> film_channel_counts() const {
    std::vector<std::size_t> out;
    for (const auto& l : layers_)
      if (l->film_channels() > 0) out.push_back(l->film_channels());
    return out;
  }

  std::vector<FiLMBatchNormLayer<S>*> film_layers() {
    std::vector<FiLMBatchNormLayer<S>*> out;
    for (auto& l : layers_)
      if (auto* f = dynamic_cast<FiLMBatchNormLayer<S>*>(l.get())) out.push_back(f);
    return out;
  }

 private:
  void check_input(const Tensor<S>& x) const {
    if (x.ndim() != config.input_shape.size() + 1)
      throw ShapeError("Model: input " + shape_str(x.shape()) + " does not match sample shape " +
                       shape_str(config.input_shape));
    for (std::size_t d = 0; d < config.input_shape.size(); ++d)
      if (x.extent(d + 1) != config.input_shape[d])
        throw ShapeError("Model: input " + shape_str(x.shape()) +
                         " does not match sample shape " + shape_str(config.input_shape));
  }

  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<S>>> layers_;
};

struct ParamBudget {
  std::size_t shared_count = 0;
  std::size_t per_member_count = 0;   // 2 * sum of D_n
  std::size_t extra_vs_single = 0;    // (M-1) * per_member_count
  double overhead_ratio = 0.0;        // extra / single-model total
};

template <typename S>
ParamBudget count_parameters(Model<S>& model) {
  std::size_t total = 0;
  for (auto& nt : model.named_parameters()) total += nt.tensor.size();
  std::size_t film_d = 0;
  for (std::size_t d : model.film_channel_counts()) film_d += d;
  const std::size_t m = model.ensemble_size();
  ParamBudget b;
  b.per_member_count = 2 * film_d;
  b.shared_count = total - m * b.per_member_count;
  b.extra_vs_single = (m - 1) * b.per_member_count;
  const std::size_t single_total = b.shared_count + b.per_member_count;
  b.overhead_ratio =
      single_total ? static_cast<double>(b.extra_vs_single) / static_cast<double>(single_total)
                   : 0.0;
  return b;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// [linear -> FiLM-BN -> relu] per hidden width, then a linear head.
/// Hidden linears drop their bias (absorbed by the following normalization).
template <typename S>
Model<S> build_mlp(ModelConfig config, RngStream& rng) {
  if (config.widths.empty()) config.widths = {64, 64};
  config.kind = ModelKind::mlp;
  config.validate();
  if (config.input_shape.size() != 1)
    throw ConfigError("build_mlp: input must be a flat feature vector, got shape " +
                      shape_str(config.input_shape));
  Model<S> model;
  model.config = config;
  std::size_t in = config.input_shape[0];
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const std::size_t h = config.widths[i];
    const std::string b = "fc" + std::to_string(i + 1);
    model.push(b, std::make_unique<LinearLayer<S>>(in, h, /*bias=*/false, rng));
    model.push("bn" + std::to_string(i + 1),
               std::make_unique<FiLMBatchNormLayer<S>>(config.ensemble_size, h, config.gain, rng));
    model.push(b + ".act", std::make_unique<ReluLayer<S>>());
    in = h;
  }
  model.push("head", std::make_unique<LinearLayer<S>>(in, config.num_classes, true, rng));
  return model;
}

/// VGG-style desk-scale image backbone: per width one block of
/// [conv3x3 -> relu -> conv3x3 -> FiLM-BN -> relu], 2x2 max-pool between
/// blocks, global average pool, linear head.
template <typename S>
Model<S> build_conv2d_small(ModelConfig config, RngStream& rng) {
  if (config.widths.empty()) config.widths = {32, 64, 128};
  config.kind = ModelKind::conv2d_small;
  config.validate();
  if (config.input_shape.size() != 3)
    throw ConfigError("build_conv2d_small: input must be CxHxW, got shape " +
                      shape_str(config.input_shape));
  const std::size_t h = config.input_shape[1], w = config.input_shape[2];
  if (h < 8 || w < 8)
    throw ConfigError("build_conv2d_small: input " + shape_str(config.input_shape) +
                      " too small for the pooling depth (need H,W >= 8)");
  Model<S> model;
  model.config = config;
  std::size_t cin = config.input_shape[0];
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const std::size_t cw = config.widths[i];
    const std::string b = "b" + std::to_string(i + 1);
    model.push(b + ".conv1", std::make_unique<Conv2dLayer<S>>(cin, cw, 3, 1, 1, true, rng));
    model.push(b + ".act1", std::make_unique<ReluLayer<S>>());
    model.push(b + ".conv2", std::make_unique<Conv2dLayer<S>>(cw, cw, 3, 1, 1, false, rng));
    model.push(b + ".bn",
               std::make_unique<FiLMBatchNormLayer<S>>(config.ensemble_size, cw, config.gain, rng));
    model.push(b + ".act2", std::make_unique<ReluLayer<S>>());
    if (i + 1 < config.widths.size()) model.push(b + ".pool", std::make_unique<MaxPool2dLayer<S>>(2));
    cin = cw;
  }
  model.push("gap", std::make_unique<GlobalAvgPool2dLayer<S>>());
  model.push("head", std::make_unique<LinearLayer<S>>(cin, config.num_classes, true, rng));
  return model;
}

/// 1-d sequence backbone: 5 blocks of [conv1d(256, k=10) -> relu ->
/// FiLM-BN -> dropout(0.5)], first conv padded by 5, flatten, binary head.
template <typename S>
Model<S> build_conv1d_genome(ModelConfig config, RngStream& rng) {
  if (config.widths.empty()) config.widths = {256, 256, 256, 256, 256};
  config.kind = ModelKind::conv1d_genome;
  config.validate();
  if (config.input_shape != Shape{4, 41})
    throw ConfigError("build_conv1d_genome: input must be 4x41 one-hot sequences, got " +
                      shape_str(config.input_shape));
  if (config.num_classes != 2)
    throw ConfigError("build_conv1d_genome: binary labels only (num_classes must be 2)");
  Model<S> model;
  model.config = config;
  std::size_t cin = 4;
  std::size_t len = 41;
  constexpr std::size_t kKernel = 10;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const std::size_t cw = config.widths[i];
    const std::size_t pad = (i == 0) ? 5 : 0;
    const std::string b = "b" + std::to_string(i + 1);
    model.push(b + ".conv", std::make_unique<Conv1dLayer<S>>(cin, cw, kKernel, 1, pad, true, rng));
    model.push(b + ".act", std::make_unique<ReluLayer<S>>());
    model.push(b + ".bn",
               std::make_unique<FiLMBatchNormLayer<S>>(config.ensemble_size, cw, config.gain, rng));
    model.push(b + ".drop", std::make_unique<DropoutLayer<S>>(config.dropout_rate));
    len = detail::conv_out_extent(len, kKernel, 1, pad);
    cin = cw;
  }
  model.push("flatten", std::make_unique<FlattenLayer<S>>());
  model.push("head", std::make_unique<LinearLayer<S>>(cin * len, 2, true, rng));
  return model;
}

template <typename S>
Model<S> build_model(const ModelConfig& config, RngStream& rng) {
  switch (config.kind) {
    case ModelKind::mlp: return build_mlp<S>(config, rng);
    case ModelKind::conv2d_small: return build_conv2d_small<S>(config, rng);
    case ModelKind::conv1d_genome: return build_conv1d_genome<S>(config, rng);
  }
  throw ConfigError("build_model: unknown kind");
}

template <typename S>
Model<S> build_model(const ModelConfig& config, std::uint64_t seed) {
  RngStream rng(seed, streams::kInit);
  return build_model<S>(config, rng);
}

/// The explicit deep-ensemble baseline: M structurally identical
/// single-member models, each initialized from its own seed, nothing shared.
template <typename S>
std::vector<Model<S>> build_deep_ensemble(ModelConfig config, std::size_t members,
                                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != members)
    throw ConfigError("build_deep_ensemble: " + std::to_string(seeds.size()) + " seeds for " +
                      std::to_string(members) + " members");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    std::cerr << "warning: deep ensemble seeds are not distinct; members will coincide\n";
  config.ensemble_size = 1;
  std::vector<Model<S>> models;
  models.reserve(members);
  for (std::uint64_t s : seeds) models.push_back(build_model<S>(config, s));
  return models;
}

}  // namespace filmens
