#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "specknet/model.hpp"
#include "specknet/rng.hpp"

namespace specknet {

namespace detail {

template <typename T>
Tensor<T> glorot_uniform(Rng& rng, Shape shape, std::size_t fan_in,
                         std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = T(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
Tensor<T> he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  const double sd = std::sqrt(2.0 / double(fan_in));
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(sd * rng.normal());
  return t;
}

// Builder state: appends named layers and initializes their parameters.
template <typename T>
struct NetBuilder {
  Model<T>& m;
  Rng rng;

  NetBuilder(Model<T>& model, std::uint64_t seed) : m(model), rng(seed) {}

  std::string tag() const { return "L" + std::to_string(m.layers.size()); }

  int dense(std::size_t n_in, std::size_t n_out) {
    DenseLayer<T> l;
    l.w = Param<T>(tag() + ".w",
                   glorot_uniform<T>(rng, {n_in, n_out}, n_in, n_out));
    l.b = Param<T>(tag() + ".b", Tensor<T>({n_out}));
    m.layers.push_back(std::move(l));
    return int(m.layers.size()) - 1;
  }

  int conv(std::size_t c_in, std::size_t c_out, std::size_t k, Padding pad,
           std::size_t stride = 1) {
    Conv2dLayer<T> l;
    l.k = Param<T>(tag() + ".k",
                   he_normal<T>(rng, {c_out, c_in, k, k}, c_in * k * k));
    l.b = Param<T>(tag() + ".b", Tensor<T>({c_out}));
    l.pad = pad;
    l.stride = stride;
    m.layers.push_back(std::move(l));
    return int(m.layers.size()) - 1;
  }

  int upconv(std::size_t c_in, std::size_t c_out) {
    UpConv2Layer<T> l;
    l.k = Param<T>(tag() + ".k",
                   he_normal<T>(rng, {c_in, c_out, 2, 2}, c_in * 4));
    l.b = Param<T>(tag() + ".b", Tensor<T>({c_out}));
    m.layers.push_back(std::move(l));
    return int(m.layers.size()) - 1;
  }

  int batchnorm(std::size_t c) {
    BatchNormLayer<T> l;
    l.gamma = Param<T>(tag() + ".gamma", Tensor<T>::ones({c}));
    l.beta = Param<T>(tag() + ".beta", Tensor<T>({c}));
    l.stat_prefix = tag();
    l.state.running_mean = Tensor<T>({c});
    l.state.running_var = Tensor<T>::ones({c});
    m.layers.push_back(std::move(l));
    return int(m.layers.size()) - 1;
  }

  int act(ActKind k) {
    m.layers.push_back(ActivationLayer{k});
    return int(m.layers.size()) - 1;
  }

  int dropout(double rate) {
    m.layers.push_back(DropoutLayer{rate});
    return int(m.layers.size()) - 1;
  }

  int maxpool() {
    m.layers.push_back(MaxPool2Layer{});
    return int(m.layers.size()) - 1;
  }

  int reshape(Shape per_sample) {
    m.layers.push_back(ReshapeLayer{std::move(per_sample)});
    return int(m.layers.size()) - 1;
  }

  int concat(int src) {
    m.layers.push_back(ConcatLayer{src});
    return int(m.layers.size()) - 1;
  }

  int softmax_layer() {
    m.layers.push_back(SoftmaxLayer{});
    return int(m.layers.size()) - 1;
  }

  // conv + batchnorm + relu, the standard convolutional block
  int conv_bn_relu(std::size_t c_in, std::size_t c_out, std::size_t k,
                   Padding pad) {
    conv(c_in, c_out, k, pad);
    batchnorm(c_out);
    return act(ActKind::relu);
  }
};

}  // namespace detail

// Single-hidden-layer dense reconstructor: dense(hidden) + activation +
// dropout, dense(output^2) + sigmoid, reshaped to an image. Input arrives
// flattened.
template <typename T>
Model<T> build_shl_dnn(const ModelConfig& config, std::uint64_t seed) {
  if (config.hidden_nodes < 1)
    throw ConfigError("shl_dnn: hidden_nodes must be >= 1");
  Model<T> m;
  m.config = config;
  m.config.kind = ModelKind::shl_dnn;
  m.seed = seed;
  detail::NetBuilder<T> b(m, seed);
  const std::size_t n_in = config.input_side * config.input_side;
  const std::size_t n_out = config.output_side * config.output_side;
  b.dense(n_in, config.hidden_nodes);
  b.act(act_from_name(config.activation));
  b.dropout(config.dropout_rate);
  b.dense(config.hidden_nodes, n_out);
  if (config.output_sigmoid) b.act(ActKind::sigmoid);
  b.reshape({config.output_side, config.output_side});
  return m;
}

// Dense stack with sigmoid activations and dropout after every hidden layer.
template <typename T>
Model<T> build_mlp(const ModelConfig& config, std::uint64_t seed) {
  Model<T> m;
  m.config = config;
  m.config.kind = ModelKind::mlp;
  m.seed = seed;
  detail::NetBuilder<T> b(m, seed);
  std::size_t prev = config.input_side * config.input_side;
  for (std::size_t h : config.hidden_layers) {
    if (h < 1) throw ConfigError("mlp: hidden layer width must be >= 1");
    b.dense(prev, h);
    b.act(ActKind::sigmoid);
    b.dropout(config.dropout_rate);
    prev = h;
  }
  b.dense(prev, config.output_side * config.output_side);
  if (config.output_sigmoid) b.act(ActKind::sigmoid);
  b.reshape({config.output_side, config.output_side});
  return m;
}

// Encoder-decoder with skip connections. The 64-pixel variant contracts
// 64->32->16->8->4 (bottleneck 4x4 at 16x the base width) and expands back to
// 32x32, where a 5x5 valid convolution trims to 28x28; the symmetric
// 28-pixel variant contracts 28->14->7 and expands back to 28x28. Every
// convolution is followed by batch normalization and a ReLU; channel widths
// scale with filter_multiplier.
template <typename T>
Model<T> build_unet(const ModelConfig& config, std::uint64_t seed) {
  if (config.input_side != 64 && config.input_side != 28)
    throw ConfigError("unet: input_side must be 64 or 28, got " +
                      std::to_string(config.input_side));
  if (config.filter_multiplier < 1)
    throw ConfigError("unet: filter_multiplier must be >= 1");
  if (config.output_side != 28)
    throw ConfigError("unet: output_side must be 28");
  Model<T> m;
  m.config = config;
  m.config.kind = ModelKind::unet;
  m.seed = seed;
  detail::NetBuilder<T> b(m, seed);
  const std::size_t mult = config.filter_multiplier;

  std::vector<std::size_t> enc_w;
  std::size_t bottleneck_w;
  if (config.input_side == 64) {
    enc_w = {16 * mult, 32 * mult, 64 * mult, 128 * mult};
    bottleneck_w = 256 * mult;
  } else {
    enc_w = {16 * mult, 32 * mult};
    bottleneck_w = 64 * mult;
  }

  std::vector<int> skips;
  std::size_t prev = 1;
  for (std::size_t w : enc_w) {
    b.conv_bn_relu(prev, w, 3, Padding::same);
    skips.push_back(b.conv_bn_relu(w, w, 3, Padding::same));
    b.maxpool();
    prev = w;
  }
  b.conv_bn_relu(prev, bottleneck_w, 3, Padding::same);
  b.conv_bn_relu(bottleneck_w, bottleneck_w, 3, Padding::same);
  prev = bottleneck_w;

  // expand, mirroring the encoder stage at the same resolution; the 64 path
  // stops at 32x32, where the 5x5 valid convolution takes over
  const std::size_t last_dec = config.input_side == 64 ? 1 : 0;
  for (std::size_t i = enc_w.size(); i-- > last_dec;) {
    const std::size_t w = enc_w[i];
    b.upconv(prev, w);
    b.batchnorm(w);
    b.act(ActKind::relu);
    std::size_t conv_in = w;
    if (config.use_skips) {
      b.concat(skips[i]);
      conv_in = 2 * w;
    }
    b.conv_bn_relu(conv_in, w, 3, Padding::same);
    b.conv_bn_relu(w, w, 3, Padding::same);
    prev = w;
  }

  if (config.input_side == 64) {
    b.conv_bn_relu(prev, enc_w[0], 5, Padding::valid);  // 32 -> 28
    prev = enc_w[0];
  }
  b.conv(prev, 1, 1, Padding::same);
  b.act(ActKind::sigmoid);
  b.reshape({config.output_side, config.output_side});
  return m;
}

// Two conv+pool stages feeding a dense bottleneck of n_h nodes.
template <typename T>
Model<T> build_vgg(const ModelConfig& config, std::uint64_t seed) {
  if (config.input_side % 4 != 0)
    throw ConfigError("vgg: input_side must be divisible by 4, got " +
                      std::to_string(config.input_side));
  if (config.n_h < 1) throw ConfigError("vgg: n_h must be >= 1");
  Model<T> m;
  m.config = config;
  m.config.kind = ModelKind::vgg;
  m.seed = seed;
  detail::NetBuilder<T> b(m, seed);
  b.conv(1, 16, 3, Padding::same);
  b.act(ActKind::relu);
  b.maxpool();
  b.conv(16, 32, 3, Padding::same);
  b.act(ActKind::relu);
  b.maxpool();
  m.layers.push_back(FlattenLayer{});
  const std::size_t q = config.input_side / 4;
  b.dense(q * q * 32, config.n_h);
  b.act(ActKind::sigmoid);
  b.dense(config.n_h, config.output_side * config.output_side);
  if (config.output_sigmoid) b.act(ActKind::sigmoid);
  b.reshape({config.output_side, config.output_side});
  return m;
}

// Small convolutional 10-class digit classifier with a softmax output.
template <typename T>
Model<T> build_classifier(const ModelConfig& config, std::uint64_t seed) {
  if (config.input_side % 4 != 0)
    throw ConfigError("classifier: input_side must be divisible by 4, got " +
                      std::to_string(config.input_side));
  Model<T> m;
  m.config = config;
  m.config.kind = ModelKind::classifier;
  m.seed = seed;
  detail::NetBuilder<T> b(m, seed);
  b.conv(1, 8, 3, Padding::same);
  b.act(ActKind::relu);
  b.maxpool();
  b.conv(8, 16, 3, Padding::same);
  b.act(ActKind::relu);
  b.maxpool();
  m.layers.push_back(FlattenLayer{});
  const std::size_t q = config.input_side / 4;
  b.dense(q * q * 16, 64);
  b.act(ActKind::relu);
  b.dense(64, 10);
  b.softmax_layer();
  return m;
}

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  switch (config.kind) {
    case ModelKind::shl_dnn: return build_shl_dnn<T>(config, seed);
    case ModelKind::mlp: return build_mlp<T>(config, seed);
    case ModelKind::unet: return build_unet<T>(config, seed);
    case ModelKind::vgg: return build_vgg<T>(config, seed);
    default: return build_classifier<T>(config, seed);
  }
}

// Forward-pass cost of one sample, counted as two operations per weight
// multiply-accumulate (dense 2nm, conv 2 k^2 Cin Cout, transposed conv
// 8 Cin Cout), one per bias or normalization channel term, and one per
// element for activations. Pooling, reshapes and concatenations are free.
template <typename T>
std::size_t count_flops(Model<T>& m) {
  Graph<T> g;
  Var x = g.input(Tensor<T>(m.input_shape(1)));
  Rng rng(0);
  std::vector<Shape> shapes;
  m.forward(g, x, Mode::eval, rng, &shapes);
  std::size_t flops = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::size_t out_elems = shape_product(shapes[i]);
    std::visit(
        [&](auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, DenseLayer<T>>) {
            flops += 2 * l.w.value.dim(0) * l.w.value.dim(1) +
                     l.b.value.size();
          } else if constexpr (std::is_same_v<L, Conv2dLayer<T>>) {
            const auto& ks = l.k.value.shape();
            flops += 2 * ks[0] * ks[1] * ks[2] * ks[3] + l.b.value.size();
          } else if constexpr (std::is_same_v<L, UpConv2Layer<T>>) {
            const auto& ks = l.k.value.shape();
            flops += 8 * ks[0] * ks[1] + l.b.value.size();
          } else if constexpr (std::is_same_v<L, BatchNormLayer<T>>) {
            flops += 2 * l.gamma.value.size();
          } else if constexpr (std::is_same_v<L, ActivationLayer> ||
                               std::is_same_v<L, SoftmaxLayer>) {
            flops += out_elems;
          }
        },
        m.layers[i]);
  }
  return flops;
}

}  // namespace specknet
