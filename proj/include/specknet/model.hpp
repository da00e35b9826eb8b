#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/io_util.hpp"
#include "specknet/ops.hpp"

namespace specknet {

enum class ModelKind { shl_dnn, mlp, unet, vgg, classifier };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::shl_dnn: return "shl_dnn";
    case ModelKind::mlp: return "mlp";
    case ModelKind::unet: return "unet";
    case ModelKind::vgg: return "vgg";
    default: return "classifier";
  }
}

inline ModelKind model_kind_from_name(const std::string& s) {
  if (s == "shl_dnn") return ModelKind::shl_dnn;
  if (s == "mlp") return ModelKind::mlp;
  if (s == "unet") return ModelKind::unet;
  if (s == "vgg") return ModelKind::vgg;
  if (s == "classifier") return ModelKind::classifier;
  throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelConfig {
  ModelKind kind = ModelKind::shl_dnn;
  std::size_t input_side = 64;
  std::size_t output_side = 28;
  std::size_t hidden_nodes = 4096;          // shl_dnn
  std::vector<std::size_t> hidden_layers;   // mlp
  std::size_t filter_multiplier = 4;        // unet
  bool use_skips = true;                    // unet
  std::size_t n_h = 4096;                   // vgg
  double dropout_rate = 0.2;
  std::string activation = "sigmoid";       // hidden activation
  bool output_sigmoid = true;

  std::string to_kv() const {
    std::ostringstream os;
    os << "kind=" << model_kind_name(kind) << '\n';
    os << "input_side=" << input_side << '\n';
    os << "output_side=" << output_side << '\n';
    os << "hidden_nodes=" << hidden_nodes << '\n';
    os << "hidden_layers=";
    for (std::size_t i = 0; i < hidden_layers.size(); ++i) {
      if (i) os << ',';
      os << hidden_layers[i];
    }
    os << '\n';
    os << "filter_multiplier=" << filter_multiplier << '\n';
    os << "use_skips=" << (use_skips ? 1 : 0) << '\n';
    os << "n_h=" << n_h << '\n';
    os << "dropout_rate=" << fmt_double(dropout_rate) << '\n';
    os << "activation=" << activation << '\n';
    os << "output_sigmoid=" << (output_sigmoid ? 1 : 0) << '\n';
    return os.str();
  }

  static ModelConfig from_kv(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "kind") c.kind = model_kind_from_name(val);
      else if (key == "input_side") c.input_side = std::stoul(val);
      else if (key == "output_side") c.output_side = std::stoul(val);
      else if (key == "hidden_nodes") c.hidden_nodes = std::stoul(val);
      else if (key == "hidden_layers") {
        c.hidden_layers.clear();
        std::istringstream ls(val);
        std::string tok;
        while (std::getline(ls, tok, ','))
          if (!tok.empty()) c.hidden_layers.push_back(std::stoul(tok));
      } else if (key == "filter_multiplier") c.filter_multiplier = std::stoul(val);
      else if (key == "use_skips") c.use_skips = val != "0";
      else if (key == "n_h") c.n_h = std::stoul(val);
      else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
      else if (key == "activation") c.activation = val;
      else if (key == "output_sigmoid") c.output_sigmoid = val != "0";
      else throw FormatError("model config: unknown key '" + key + "'");
    }
    return c;
  }
};

// One named parameter tensor plus its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

template <typename T>
struct DenseLayer {
  Param<T> w, b;
};

template <typename T>
struct Conv2dLayer {
  Param<T> k, b;
  Padding pad = Padding::same;
  std::size_t stride = 1;
};

template <typename T>
struct UpConv2Layer {
  Param<T> k, b;
};

template <typename T>
struct BatchNormLayer {
  Param<T> gamma, beta;
  BatchNormState<T> state;
  std::string stat_prefix;  // names for the saved running stats
};

struct ActivationLayer {
  ActKind kind;
};

struct DropoutLayer {
  double rate;
};

struct MaxPool2Layer {};
struct FlattenLayer {};

struct ReshapeLayer {
  Shape per_sample;  // batch dimension is prepended at run time
};

// Concatenates the previous step's output with the recorded output of an
// earlier step (a skip connection).
struct ConcatLayer {
  int src_step;
};

struct SoftmaxLayer {};

template <typename T>
using Layer = std::variant<DenseLayer<T>, Conv2dLayer<T>, UpConv2Layer<T>,
                           BatchNormLayer<T>, ActivationLayer, DropoutLayer,
                           MaxPool2Layer, FlattenLayer, ReshapeLayer,
                           ConcatLayer, SoftmaxLayer>;

// Reference to a named tensor inside a model. grad is null for state
// tensors (batchnorm running statistics), which are saved in checkpoints
// but not touched by the optimizer.
template <typename T>
struct TensorRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
  bool trainable() const { return grad != nullptr; }
};

// A feed-forward stack with optional skip connections, executed step by step
// on a tape. Each step consumes the previous step's output; ConcatLayer
// additionally consumes a recorded earlier output.
template <typename T>
class Model {
 public:
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<Layer<T>> layers;

  bool input_is_image() const {
    return config.kind == ModelKind::unet || config.kind == ModelKind::vgg ||
           config.kind == ModelKind::classifier;
  }

  // Expected input shape for a batch of the given size.
  Shape input_shape(std::size_t batch) const {
    const std::size_t s = config.input_side;
    if (input_is_image()) return {batch, 1, s, s};
    return {batch, s * s};
  }

  Var forward(Graph<T>& g, Var x, Mode mode, Rng& rng,
              std::vector<Shape>* step_shapes = nullptr) {
    std::vector<Var> outs;
    outs.reserve(layers.size());
    Var cur = x;
    for (auto& layer : layers) {
      cur = std::visit(
          [&](auto& l) { return run_layer(g, l, cur, outs, mode, rng); },
          layer);
      outs.push_back(cur);
      if (step_shapes) step_shapes->push_back(g.shape(cur));
    }
    return cur;
  }

  // Forward pass that stops before a trailing softmax layer, exposing raw
  // logits; the fused cross-entropy wants logits, not probabilities.
  Var forward_logits(Graph<T>& g, Var x, Mode mode, Rng& rng) {
    std::size_t n = layers.size();
    if (n > 0 && std::holds_alternative<SoftmaxLayer>(layers.back())) --n;
    std::vector<Var> outs;
    outs.reserve(n);
    Var cur = x;
    for (std::size_t i = 0; i < n; ++i) {
      cur = std::visit(
          [&](auto& l) { return run_layer(g, l, cur, outs, mode, rng); },
          layers[i]);
      outs.push_back(cur);
    }
    return cur;
  }

  // All named tensors: trainable parameters plus batchnorm running stats.
  std::vector<TensorRef<T>> tensors() {
    std::vector<TensorRef<T>> out;
    for (auto& layer : layers) {
      std::visit([&](auto& l) { collect(l, out); }, layer);
    }
    return out;
  }

  std::vector<TensorRef<T>> parameters() {
    std::vector<TensorRef<T>> all = tensors();
    std::vector<TensorRef<T>> out;
    for (auto& r : all)
      if (r.trainable()) out.push_back(r);
    return out;
  }

  void zero_grad() {
    for (auto& r : parameters()) r.grad->zero();
  }

 private:
  Var run_layer(Graph<T>& g, DenseLayer<T>& l, Var x,
                const std::vector<Var>&, Mode, Rng&) {
    return add_rowvec(g, matmul(g, x, g.param(l.w.value, l.w.grad)),
                      g.param(l.b.value, l.b.grad));
  }
  Var run_layer(Graph<T>& g, Conv2dLayer<T>& l, Var x,
                const std::vector<Var>&, Mode, Rng&) {
    Var y = conv2d(g, x, g.param(l.k.value, l.k.grad), l.pad, l.stride);
    return add_chan(g, y, g.param(l.b.value, l.b.grad));
  }
  Var run_layer(Graph<T>& g, UpConv2Layer<T>& l, Var x,
                const std::vector<Var>&, Mode, Rng&) {
    Var y = upconv2(g, x, g.param(l.k.value, l.k.grad));
    return add_chan(g, y, g.param(l.b.value, l.b.grad));
  }
  Var run_layer(Graph<T>& g, BatchNormLayer<T>& l, Var x,
                const std::vector<Var>&, Mode mode, Rng&) {
    return batchnorm(g, x, g.param(l.gamma.value, l.gamma.grad),
                     g.param(l.beta.value, l.beta.grad), l.state, mode);
  }
  Var run_layer(Graph<T>& g, ActivationLayer& l, Var x,
                const std::vector<Var>&, Mode, Rng&) {
    return activation(g, x, l.kind);
  }
  Var run_layer(Graph<T>& g, DropoutLayer& l, Var x, const std::vector<Var>&,
                Mode mode, Rng& rng) {
    return dropout(g, x, l.rate, mode, rng);
  }
  Var run_layer(Graph<T>& g, MaxPool2Layer&, Var x, const std::vector<Var>&,
                Mode, Rng&) {
    return maxpool2(g, x);
  }
  Var run_layer(Graph<T>& g, FlattenLayer&, Var x, const std::vector<Var>&,
                Mode, Rng&) {
    return flatten(g, x);
  }
  Var run_layer(Graph<T>& g, ReshapeLayer& l, Var x, const std::vector<Var>&,
                Mode, Rng&) {
    Shape s;
    s.push_back(g.shape(x)[0]);
    for (std::size_t d : l.per_sample) s.push_back(d);
    return reshape(g, x, std::move(s));
  }
  Var run_layer(Graph<T>& g, ConcatLayer& l, Var x,
                const std::vector<Var>& outs, Mode, Rng&) {
    return concat_channels(g, x, outs.at(std::size_t(l.src_step)));
  }
  Var run_layer(Graph<T>& g, SoftmaxLayer&, Var x, const std::vector<Var>&,
                Mode, Rng&) {
    return softmax(g, x);
  }

  void collect(DenseLayer<T>& l, std::vector<TensorRef<T>>& out) {
    out.push_back({l.w.name, &l.w.value, &l.w.grad});
    out.push_back({l.b.name, &l.b.value, &l.b.grad});
  }
  void collect(Conv2dLayer<T>& l, std::vector<TensorRef<T>>& out) {
    out.push_back({l.k.name, &l.k.value, &l.k.grad});
    out.push_back({l.b.name, &l.b.value, &l.b.grad});
  }
  void collect(UpConv2Layer<T>& l, std::vector<TensorRef<T>>& out) {
    out.push_back({l.k.name, &l.k.value, &l.k.grad});
    out.push_back({l.b.name, &l.b.value, &l.b.grad});
  }
  void collect(BatchNormLayer<T>& l, std::vector<TensorRef<T>>& out) {
    out.push_back({l.gamma.name, &l.gamma.value, &l.gamma.grad});
    out.push_back({l.beta.name, &l.beta.value, &l.beta.grad});
    if (l.state.running_mean.empty()) {
      const std::size_t c = l.gamma.value.size();
      l.state.running_mean = Tensor<T>({c});
      l.state.running_var = Tensor<T>::ones({c});
    }
    out.push_back({l.stat_prefix + ".running_mean", &l.state.running_mean,
                   nullptr});
    out.push_back({l.stat_prefix + ".running_var", &l.state.running_var,
                   nullptr});
  }
  template <class L>
  void collect(L&, std::vector<TensorRef<T>>&) {}
};

// Number of trainable parameters.
template <typename T>
std::size_t count_parameters(Model<T>& m) {
  std::size_t n = 0;
  for (auto& r : m.parameters()) n += r.value->size();
  return n;
}

// ---------------------------------------------------------------------------
// checkpoint container
//
// Layout (all integers little-endian):
//   magic "SNCK" | u32 version=1 | u64 seed
//   u32 config_len | config (key=value text)
//   u32 tensor_count
//   per tensor: u16 name_len | name | u8 trainable | u8 rank |
//               u64 dims[rank] | f32 values (little-endian)

template <typename T>
void save_checkpoint(Model<T>& m, const std::string& path) {
  std::string out;
  out += "SNCK";
  detail::put_u32(out, 1);
  detail::put_u64(out, m.seed);
  const std::string cfg = m.config.to_kv();
  detail::put_u32(out, std::uint32_t(cfg.size()));
  out += cfg;
  auto refs = m.tensors();
  detail::put_u32(out, std::uint32_t(refs.size()));
  for (auto& r : refs) {
    detail::put_u16(out, std::uint16_t(r.name.size()));
    out += r.name;
    out.push_back(r.trainable() ? char(1) : char(0));
    out.push_back(char(r.value->rank()));
    for (std::size_t d : r.value->shape())
      detail::put_u64(out, std::uint64_t(d));
    for (std::size_t i = 0; i < r.value->size(); ++i)
      detail::put_f32(out, float((*r.value)[i]));
  }
  detail::write_file(path, out);
}

// Forward declaration: builders.hpp provides construction from a config.
template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

template <typename T = float>
Model<T> load_checkpoint(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  if (r.bytes(4, "magic") != "SNCK")
    throw FormatError(path + ": bad checkpoint magic");
  const std::uint32_t version = r.u32le("version");
  if (version != 1)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  const std::uint64_t seed = r.u64le("seed");
  const std::uint32_t cfg_len = r.u32le("config length");
  const ModelConfig config = ModelConfig::from_kv(r.bytes(cfg_len, "config"));
  Model<T> m = build_model<T>(config, seed);
  const std::uint32_t n = r.u32le("tensor count");
  auto refs = m.tensors();
  if (refs.size() != n)
    throw FormatError(path + ": checkpoint holds " + std::to_string(n) +
                      " tensors, model expects " +
                      std::to_string(refs.size()));
  for (std::uint32_t t = 0; t < n; ++t) {
    const std::uint16_t name_len = r.u16le("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    r.u8("trainable flag");
    const std::uint8_t rank = r.u8("tensor rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d)
      shape.push_back(std::size_t(r.u64le("tensor dim")));
    if (name != refs[t].name || shape != refs[t].value->shape())
      throw FormatError(path + ": tensor " + std::to_string(t) + " is '" +
                        name + "' " + shape_to_string(shape) +
                        ", model expects '" + refs[t].name + "' " +
                        shape_to_string(refs[t].value->shape()));
    Tensor<T>& dst = *refs[t].value;
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = T(r.f32le("tensor values"));
  }
  return m;
}

}  // namespace specknet
