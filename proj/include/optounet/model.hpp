#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "optounet/conv.hpp"
#include "optounet/layers.hpp"
#include "optounet/model_config.hpp"
#include "optounet/rng.hpp"
#include "optounet/tape.hpp"

namespace optounet {

/// Foreground probability the output head starts at.
inline constexpr double kHeadPrior = 0.05;

/// Learnable tensor with a unique dotted name, e.g. enc1.conv1.weight.
template <typename Scalar>
struct ParamTensor {
  std::string name;
  Tensor4<Scalar> value;
};

/// Flat storage for parameters and batch-norm statistics. Layers refer to
/// entries by index.
template <typename Scalar>
class ParamRegistry {
 public:
  std::size_t add_param(std::string name, Tensor4<Scalar> value) {
    if (!index_.emplace(name, params_.size()).second) {
      throw IdentityError("duplicate parameter name '" + name + "'");
    }
    params_.push_back(ParamTensor<Scalar>{std::move(name), std::move(value)});
    return params_.size() - 1;
  }

  std::size_t add_bn(std::string name, std::size_t channels) {
    bns_.emplace_back(std::move(name), channels);
    return bns_.size() - 1;
  }

  std::vector<ParamTensor<Scalar>>& params() { return params_; }
  const std::vector<ParamTensor<Scalar>>& params() const { return params_; }
  std::vector<BnState<Scalar>>& bn_states() { return bns_; }
  const std::vector<BnState<Scalar>>& bn_states() const { return bns_; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<ParamTensor<Scalar>> params_;
  std::vector<BnState<Scalar>> bns_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-forward state: parameters bound as tape leaves, batch-norm mode and
/// the statistics that Train mode updates.
template <typename Scalar>
struct ForwardContext {
  Tape<Scalar>& tape;
  std::vector<Var<Scalar>> params;
  std::vector<BnState<Scalar>>& bn_states;
  BnMode mode;

  ForwardContext(Tape<Scalar>& t, ParamRegistry<Scalar>& registry, BnMode m)
      : tape(t), bn_states(registry.bn_states()), mode(m) {
    params.reserve(registry.params().size());
    for (const auto& p : registry.params()) params.push_back(tape.variable(p.value, "param"));
  }
};

/// Shapes means every weight stays zero; enough for parameter tables.
enum class Init { HeNormal, Shapes };

/// Registers layers with He-normal weights (std = sqrt(2 / fan_in)) drawn in
/// registration order, zero biases and betas, unit gammas.
template <typename Scalar>
class LayerBuilder {
 public:
  LayerBuilder(ParamRegistry<Scalar>& registry, Rng& rng, Init init = Init::HeNormal)
      : registry_(registry), rng_(rng), init_(init) {}

  std::size_t he_weight(const std::string& name, const Dims& dims, std::size_t fan_in) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto w = Tensor4<Scalar>::zeros(dims);
    if (init_ == Init::HeNormal) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(rng_.normal(0.0, stddev));
    }
    return registry_.add_param(name, std::move(w));
  }
  std::size_t zeros(const std::string& name, const Dims& dims) {
    return registry_.add_param(name, Tensor4<Scalar>::zeros(dims));
  }
  std::size_t ones(const std::string& name, const Dims& dims) {
    return registry_.add_param(name, Tensor4<Scalar>::constant(dims, Scalar(1)));
  }
  std::size_t bn_state(const std::string& name, std::size_t channels) { return registry_.add_bn(name, channels); }

 private:
  ParamRegistry<Scalar>& registry_;
  Rng& rng_;
  Init init_;
};

// ---------------------------------------------------------------------------
// Layers

struct ConvLayer {
  Conv2dSpec spec;
  std::size_t weight = 0;
  std::optional<std::size_t> bias;

  template <typename Scalar>
  static ConvLayer make(LayerBuilder<Scalar>& b, const std::string& name, const Conv2dSpec& spec) {
    spec.validate();
    ConvLayer l{spec, 0, std::nullopt};
    l.weight = b.he_weight(name + ".weight", spec.weight_dims(), spec.in_per_group() * spec.kh * spec.kw);
    if (spec.has_bias) l.bias = b.zeros(name + ".bias", spec.bias_dims());
    return l;
  }

  template <typename Scalar>
  Var<Scalar> operator()(ForwardContext<Scalar>& ctx, const Var<Scalar>& x) const {
    std::optional<Var<Scalar>> b;
    if (bias) b = ctx.params.at(*bias);
    return conv2d(x, ctx.params.at(weight), b, spec);
  }
};

struct SeparableLayer {
  SeparableSpec spec;
  std::size_t depthwise = 0;
  std::size_t pointwise = 0;
  std::optional<std::size_t> bias;

  template <typename Scalar>
  static SeparableLayer make(LayerBuilder<Scalar>& b, const std::string& name, const SeparableSpec& spec) {
    const auto dw = spec.depthwise();
    const auto pw = spec.pointwise();
    SeparableLayer l{spec, 0, 0, std::nullopt};
    l.depthwise = b.he_weight(name + ".depthwise.weight", dw.weight_dims(), dw.kh * dw.kw);
    l.pointwise = b.he_weight(name + ".pointwise.weight", pw.weight_dims(), pw.in_channels);
    if (pw.has_bias) l.bias = b.zeros(name + ".pointwise.bias", pw.bias_dims());
    return l;
  }

  template <typename Scalar>
  Var<Scalar> operator()(ForwardContext<Scalar>& ctx, const Var<Scalar>& x) const {
    std::optional<Var<Scalar>> b;
    if (bias) b = ctx.params.at(*bias);
    return separable_conv2d(x, ctx.params.at(depthwise), ctx.params.at(pointwise), b, spec);
  }
};

struct BnLayer {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  std::size_t state = 0;

  template <typename Scalar>
  static BnLayer make(LayerBuilder<Scalar>& b, const std::string& name, std::size_t channels) {
    const Dims d{1, channels, 1, 1};
    BnLayer l;
    l.gamma = b.ones(name + ".gamma", d);
    l.beta = b.zeros(name + ".beta", d);
    l.state = b.bn_state(name, channels);
    return l;
  }

  template <typename Scalar>
  Var<Scalar> operator()(ForwardContext<Scalar>& ctx, const Var<Scalar>& x) const {
    return batchnorm(x, ctx.params.at(gamma), ctx.params.at(beta), ctx.bn_states.at(state), ctx.mode);
  }
};

/// Pre-activation residual unit:
///   main     = conv3x3(relu(bn(conv3x3(relu(bn(x))))))
///   shortcut = x, or a 1x1 projection when the width changes
struct ResidualBlock {
  BnLayer bn1;
  ConvLayer conv1;
  BnLayer bn2;
  ConvLayer conv2;
  std::optional<ConvLayer> shortcut;

  template <typename Scalar>
  static ResidualBlock make(LayerBuilder<Scalar>& b, const std::string& name, std::size_t c_in,
                            std::size_t c_out) {
    ResidualBlock r;
    r.bn1 = BnLayer::make(b, name + ".bn1", c_in);
    r.conv1 = ConvLayer::make(b, name + ".conv1", Conv2dSpec::same(c_in, c_out, 3));
    r.bn2 = BnLayer::make(b, name + ".bn2", c_out);
    r.conv2 = ConvLayer::make(b, name + ".conv2", Conv2dSpec::same(c_out, c_out, 3));
    if (c_in != c_out) r.shortcut = ConvLayer::make(b, name + ".shortcut", Conv2dSpec::same(c_in, c_out, 1));
    return r;
  }

  template <typename Scalar>
  Var<Scalar> operator()(ForwardContext<Scalar>& ctx, const Var<Scalar>& x) const {
    auto h = conv1(ctx, relu(bn1(ctx, x)));
    h = conv2(ctx, relu(bn2(ctx, h)));
    return add(h, shortcut ? (*shortcut)(ctx, x) : x);
  }
};

/// Bottleneck block: an atrous branch and a depthwise-separable branch, each
/// pre-activated, summed with the identity.
struct BridgeBlock {
  BnLayer atrous_bn;
  ConvLayer atrous;
  BnLayer separable_bn;
  SeparableLayer separable;

  template <typename Scalar>
  static BridgeBlock make(LayerBuilder<Scalar>& b, const std::string& name, std::size_t c,
                          const ModelConfig& cfg) {
    BridgeBlock r;
    r.atrous_bn = BnLayer::make(b, name + ".atrous_bn", c);
    r.atrous = ConvLayer::make(b, name + ".atrous",
                               Conv2dSpec::same(c, c, cfg.atrous_kernel, cfg.atrous_dilation));
    r.separable_bn = BnLayer::make(b, name + ".separable_bn", c);
    r.separable = SeparableLayer::make(
        b, name + ".separable", SeparableSpec{c, c, cfg.separable_kernel, cfg.separable_dilation, true});
    return r;
  }

  template <typename Scalar>
  Var<Scalar> operator()(ForwardContext<Scalar>& ctx, const Var<Scalar>& x) const {
    auto a = atrous(ctx, relu(atrous_bn(ctx, x)));
    auto s = separable(ctx, relu(separable_bn(ctx, x)));
    return add(add(a, s), x);
  }
};

/// conv3x3 -> relu -> conv3x3 -> relu, no normalization.
struct DoubleConv {
  ConvLayer conv1;
  ConvLayer conv2;

  template <typename Scalar>
  static DoubleConv make(LayerBuilder<Scalar>& b, const std::string& name, std::size_t c_in,
                         std::size_t c_out) {
    return DoubleConv{ConvLayer::make(b, name + ".conv1", Conv2dSpec::same(c_in, c_out, 3)),
                      ConvLayer::make(b, name + ".conv2", Conv2dSpec::same(c_out, c_out, 3))};
  }

  template <typename Scalar>
  Var<Scalar> operator()(ForwardContext<Scalar>& ctx, const Var<Scalar>& x) const {
    return relu(conv2(ctx, relu(conv1(ctx, x))));
  }
};

struct OptoGraph {
  std::vector<ResidualBlock> encoder;
  BridgeBlock bridge;
  std::vector<std::optional<ConvLayer>> compress;
  std::vector<ResidualBlock> decoder;
  /// Final pre-activation before the head; the residual stack itself ends
  /// without normalization.
  BnLayer head_bn;
  ConvLayer head;
};

struct BaselineGraph {
  std::vector<DoubleConv> encoder;
  DoubleConv bottleneck;
  std::vector<ConvLayer> up;
  std::vector<DoubleConv> decoder;
  ConvLayer head;
};

// ---------------------------------------------------------------------------
// Model

template <typename Scalar>
class Model;
template <typename Scalar>
Model<Scalar> build_opto_unet(const ModelConfig& config, std::uint64_t seed, Init init = Init::HeNormal);
template <typename Scalar>
Model<Scalar> build_baseline_unet(const ModelConfig& config, std::uint64_t seed, Init init = Init::HeNormal);
template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed, Init init = Init::HeNormal);

template <typename Scalar>
class Model {
 public:
  /// A model with no layers. forward() is invalid; count_params() is 0.
  Model() = default;

  ModelConfig& config() { return config_; }
  const ModelConfig& config() const { return config_; }
  ParamRegistry<Scalar>& registry() { return registry_; }
  const ParamRegistry<Scalar>& registry() const { return registry_; }
  std::vector<ParamTensor<Scalar>>& params() { return registry_.params(); }
  const std::vector<ParamTensor<Scalar>>& params() const { return registry_.params(); }

  /// Maps (n, in_channels, h, w) to per-pixel foreground probabilities
  /// (n, 1, h, w). Parameters are bound as tape leaves in registry order;
  /// their Vars are returned through bound_params when requested.
  Var<Scalar> forward(Tape<Scalar>& tape, const Var<Scalar>& x, BnMode mode,
                      std::vector<Var<Scalar>>* bound_params = nullptr) {
    if (std::holds_alternative<std::monostate>(graph_)) throw ConfigError("forward on an empty model");
    const Dims d = x.value().dims();
    if (d.c != config_.in_channels) {
      throw ShapeError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                       std::to_string(d.c));
    }
    if (d.h % config_.divisor() != 0 || d.w % config_.divisor() != 0) {
      throw ShapeError("input extents " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                       " are not divisible by " + std::to_string(config_.divisor()));
    }
    ForwardContext<Scalar> ctx(tape, registry_, mode);
    Var<Scalar> out = std::holds_alternative<OptoGraph>(graph_) ? run(ctx, std::get<OptoGraph>(graph_), x)
                                                                 : run(ctx, std::get<BaselineGraph>(graph_), x);
    if (bound_params) *bound_params = ctx.params;
    return out;
  }

  template <typename S>
  friend Model<S> build_opto_unet(const ModelConfig& config, std::uint64_t seed, Init init);
  template <typename S>
  friend Model<S> build_baseline_unet(const ModelConfig& config, std::uint64_t seed, Init init);

 private:
  static Var<Scalar> run(ForwardContext<Scalar>& ctx, const OptoGraph& g, Var<Scalar> x) {
    std::vector<Var<Scalar>> skips;
    for (const auto& block : g.encoder) {
      x = block(ctx, x);
      skips.push_back(x);
      x = maxpool2(x);
    }
    x = g.bridge(ctx, x);
    for (std::size_t i = g.decoder.size(); i-- > 0;) {
      x = concat_channels(skips[i], upsample_nearest2(x));
      if (g.compress[i]) x = (*g.compress[i])(ctx, x);
      x = g.decoder[i](ctx, x);
    }
    return sigmoid(g.head(ctx, relu(g.head_bn(ctx, x))));
  }

  static Var<Scalar> run(ForwardContext<Scalar>& ctx, const BaselineGraph& g, Var<Scalar> x) {
    std::vector<Var<Scalar>> skips;
    for (const auto& block : g.encoder) {
      x = block(ctx, x);
      skips.push_back(x);
      x = maxpool2(x);
    }
    x = g.bottleneck(ctx, x);
    for (std::size_t i = g.decoder.size(); i-- > 0;) {
      auto up = relu(g.up[i](ctx, upsample_nearest2(x)));
      x = g.decoder[i](ctx, concat_channels(skips[i], up));
    }
    return sigmoid(g.head(ctx, x));
  }

  ModelConfig config_;
  ParamRegistry<Scalar> registry_;
  std::variant<std::monostate, OptoGraph, BaselineGraph> graph_;
};

/// Encoder of residual blocks with 2x2 pooling, bridge block at the deepest
/// resolution, decoder of upsample + skip concat (+ optional 1x1 compression)
/// + residual block, then BN -> ReLU -> 1x1 head and sigmoid.
template <typename Scalar>
Model<Scalar> build_opto_unet(const ModelConfig& config, std::uint64_t seed, Init init) {
  if (config.variant != Variant::Opto) throw ConfigError("build_opto_unet needs variant=opto");
  config.validate();
  Model<Scalar> m;
  m.config_ = config;
  Rng rng(seed);
  LayerBuilder<Scalar> b(m.registry_, rng, init);
  OptoGraph g;
  std::size_t c = config.in_channels;
  for (std::size_t i = 0; i < config.levels; ++i) {
    g.encoder.push_back(ResidualBlock::make(b, "enc" + std::to_string(i + 1), c, config.channels[i]));
    c = config.channels[i];
  }
  g.bridge = BridgeBlock::make(b, "bridge", c, config);
  g.compress.resize(config.levels);
  g.decoder.resize(config.levels);
  for (std::size_t i = config.levels; i-- > 0;) {
    const std::string name = "dec" + std::to_string(i + 1);
    std::size_t width = config.channels[i] + c;
    if (config.compress[i] != 0) {
      g.compress[i] = ConvLayer::make(b, name + ".compress", Conv2dSpec::same(width, config.compress[i], 1));
      width = config.compress[i];
    }
    g.decoder[i] = ResidualBlock::make(b, name + ".block", width, config.decoder[i]);
    c = config.decoder[i];
  }
  g.head_bn = BnLayer::make(b, "head_bn", c);
  g.head = ConvLayer::make(b, "head", Conv2dSpec::same(c, 1, 1));
  // start the output at the foreground prior instead of p = 0.5
  m.registry_.params()[*g.head.bias].value.array() = static_cast<Scalar>(std::log(kHeadPrior / (1 - kHeadPrior)));
  m.graph_ = std::move(g);
  return m;
}

/// Reference UNet: double-conv blocks without normalization, 2x bottleneck
/// width, 2x2 up-convolutions (nearest upsample + 2x2 conv) halving width.
template <typename Scalar>
Model<Scalar> build_baseline_unet(const ModelConfig& config, std::uint64_t seed, Init init) {
  if (config.variant != Variant::Baseline) throw ConfigError("build_baseline_unet needs variant=baseline");
  config.validate();
  Model<Scalar> m;
  m.config_ = config;
  Rng rng(seed);
  LayerBuilder<Scalar> b(m.registry_, rng, init);
  BaselineGraph g;
  std::size_t c = config.in_channels;
  for (std::size_t i = 0; i < config.levels; ++i) {
    g.encoder.push_back(DoubleConv::make(b, "enc" + std::to_string(i + 1), c, config.channels[i]));
    c = config.channels[i];
  }
  g.bottleneck = DoubleConv::make(b, "bottleneck", c, 2 * c);
  c *= 2;
  g.up.resize(config.levels);
  g.decoder.resize(config.levels);
  for (std::size_t i = config.levels; i-- > 0;) {
    const std::string name = "dec" + std::to_string(i + 1);
    const std::size_t skip = config.channels[i];
    g.up[i] = ConvLayer::make(b, name + ".up", Conv2dSpec::same(c, skip, 2));
    g.decoder[i] = DoubleConv::make(b, name + ".block", 2 * skip, skip);
    c = skip;
  }
  g.head = ConvLayer::make(b, "head", Conv2dSpec::same(c, 1, 1));
  m.graph_ = std::move(g);
  return m;
}

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed, Init init) {
  return config.variant == Variant::Opto ? build_opto_unet<Scalar>(config, seed, init)
                                         : build_baseline_unet<Scalar>(config, seed, init);
}

/// Learnable element count: conv weights and biases, batch-norm gamma and
/// beta. Running statistics are not counted.
template <typename Scalar>
std::size_t count_params(const Model<Scalar>& model) {
  std::size_t total = 0;
  for (const auto& p : model.params()) total += p.value.size();
  return total;
}

}  // namespace optounet
