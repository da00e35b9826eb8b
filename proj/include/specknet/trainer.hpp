#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "specknet/builders.hpp"
#include "specknet/datasets.hpp"
#include "specknet/losses.hpp"
#include "specknet/metrics.hpp"
#include "specknet/model.hpp"

namespace specknet {

struct TrainConfig {
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience_epochs = 100;
  std::size_t max_epochs = 200;
  Objective objective = Objective::ssim;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("train: learning_rate must be finite and >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0))
      throw ConfigError("train: beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0))
      throw ConfigError("train: beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
    if (patience_epochs < 1)
      throw ConfigError("train: patience_epochs must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "batch_size=" << batch_size << '\n';
    os << "learning_rate=" << fmt_double(learning_rate) << '\n';
    os << "beta1=" << fmt_double(beta1) << '\n';
    os << "beta2=" << fmt_double(beta2) << '\n';
    os << "epsilon=" << fmt_double(epsilon) << '\n';
    os << "patience_epochs=" << patience_epochs << '\n';
    os << "max_epochs=" << max_epochs << '\n';
    os << "objective=" << objective_name(objective) << '\n';
    os << "seed=" << seed << '\n';
    return os.str();
  }

  static TrainConfig from_kv(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "batch_size") c.batch_size = std::stoul(val);
      else if (key == "learning_rate") c.learning_rate = std::stod(val);
      else if (key == "beta1") c.beta1 = std::stod(val);
      else if (key == "beta2") c.beta2 = std::stod(val);
      else if (key == "epsilon") c.epsilon = std::stod(val);
      else if (key == "patience_epochs") c.patience_epochs = std::stoul(val);
      else if (key == "max_epochs") c.max_epochs = std::stoul(val);
      else if (key == "objective") c.objective = objective_from_name(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else throw FormatError("train config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
  }
};

// First/second-moment accumulators, one per parameter, lazily shaped on the
// first step.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t t = 0;
};

// One Adam update over externally owned parameters. With learning_rate 0 the
// moments and step counter still advance but parameter bytes are untouched.
template <typename T>
void adam_step(const std::vector<TensorRef<T>>& params, AdamState<T>& state,
               const TrainConfig& c) {
  c.validate();
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size())
    throw DimensionError("adam_step: state holds " +
                         std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  state.t += 1;
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  const T bc1 = T(1.0 - std::pow(c.beta1, double(state.t)));
  const T bc2 = T(1.0 - std::pow(c.beta2, double(state.t)));
  const T lr = T(c.learning_rate), eps = T(c.epsilon);
  const bool apply = c.learning_rate != 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& value = *params[i].value;
    const Tensor<T>& grad = *params[i].grad;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (!m.same_shape(value))
      throw DimensionError("adam_step: parameter " + std::to_string(i) +
                           " is " + shape_to_string(value.shape()) +
                           ", state expects " + shape_to_string(m.shape()));
    if (!grad.same_shape(value))
      throw DimensionError("adam_step: gradient shape " +
                           shape_to_string(grad.shape()) +
                           " does not match parameter " +
                           shape_to_string(value.shape()));
    for (std::size_t j = 0; j < value.size(); ++j) {
      const T g = grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      if (apply)
        value[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
    }
  }
}

// Patience-based stopping on a stream of validation losses: stop once the
// best-so-far loss has not strictly improved for `patience` epochs.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {
    if (patience < 1)
      throw ConfigError("early stopping patience must be >= 1");
  }

  // Records the next epoch's validation loss; true means stop now.
  bool update(double loss) {
    ++epoch_;
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch_;
      since_best_ = 0;
      return false;
    }
    ++since_best_;
    return since_best_ >= patience_;
  }

  bool last_improved() const { return epoch_ > 0 && since_best_ == 0; }
  double best_loss() const { return best_loss_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_seen() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-indexed, consecutive
  double wall_s = 0.0;    // cumulative, strictly increasing
  double train_loss = 0.0;
  double val_ssim = 0.0;
  double val_mse = 0.0;
  double val_acc = 0.0;  // nan when no classifier is attached
};

struct TrainingCurve {
  std::vector<EpochRecord> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,wall_s,train_loss,val_ssim,val_mse,val_acc\n";
    for (const auto& r : rows) {
      os << r.epoch << ',' << fmt_double(r.wall_s) << ','
         << fmt_double(r.train_loss) << ',' << fmt_double(r.val_ssim) << ','
         << fmt_double(r.val_mse) << ',' << fmt_double(r.val_acc) << '\n';
    }
    return os.str();
  }

  static TrainingCurve from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) ||
        line != "epoch,wall_s,train_loss,val_ssim,val_mse,val_acc")
      throw FormatError("training curve: bad header");
    TrainingCurve c;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tok;
      std::vector<std::string> cells;
      while (std::getline(ls, tok, ',')) cells.push_back(tok);
      if (cells.size() != 6)
        throw FormatError("training curve: row " +
                          std::to_string(c.rows.size() + 1) + " has " +
                          std::to_string(cells.size()) + " cells");
      EpochRecord r;
      r.epoch = std::stoul(cells[0]);
      r.wall_s = std::stod(cells[1]);
      r.train_loss = std::stod(cells[2]);
      r.val_ssim = std::stod(cells[3]);
      r.val_mse = std::stod(cells[4]);
      r.val_acc = std::stod(cells[5]);
      c.rows.push_back(r);
    }
    return c;
  }
};

// A training or validation table: inputs plus reconstruction targets and/or
// integer class labels. Reconstruction models need targets; classifiers need
// labels; the accuracy metric needs labels either way.
template <typename T>
struct TrainData {
  Tensor<T> inputs;                  // [N,D] or [N,1,S,S]
  Tensor<T> targets;                 // [N,P] in [0,1]; empty for classifiers
  std::vector<std::uint8_t> labels;  // empty when unlabeled

  std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
};

// Speckles in, ground-truth images out.
template <typename T>
TrainData<T> reconstruction_data(const SpeckleDataset& ds,
                                 const Model<T>& model) {
  TrainData<T> d;
  d.inputs = speckle_inputs<T>(ds, model.input_is_image());
  const std::size_t n = ds.size();
  d.targets = truth_targets<T>(ds).reshaped({n, std::size_t(784)});
  d.labels = record_labels(ds);
  return d;
}

// Labeled images in (as [N,1,S,S]), class labels out.
template <typename T>
TrainData<T> classification_data(const LabeledImageSet& set) {
  if (set.size() == 0) throw UsageError("classification_data: empty set");
  const std::size_t n = set.size();
  const std::size_t h = set.images.dim(1), w = set.images.dim(2);
  TrainData<T> d;
  d.inputs = Tensor<T>({n, 1, h, w});
  for (std::size_t i = 0; i < set.images.size(); ++i)
    d.inputs[i] = T(set.images[i]);
  d.labels = set.labels;
  return d;
}

namespace detail {

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, const std::vector<std::size_t>& idx,
                      std::size_t lo, std::size_t hi) {
  const std::size_t row = src.size() / src.dim(0);
  Shape shape = src.shape();
  shape[0] = hi - lo;
  Tensor<T> out(std::move(shape));
  for (std::size_t i = lo; i < hi; ++i)
    std::copy(src.data() + idx[i] * row, src.data() + (idx[i] + 1) * row,
              out.data() + (i - lo) * row);
  return out;
}

// The smooth two-factor SSIM the ssim objective trains on, evaluated as a
// plain number for validation-loss bookkeeping.
inline double ssim_training_form(const double* x, const double* y,
                                 std::size_t n) {
  const Moments m = moments(x, y, n);
  const double c1 = 1e-4, c2 = 9e-4;
  return (2.0 * m.mean_x * m.mean_y + c1) * (2.0 * m.cov + c2) /
         ((m.mean_x * m.mean_x + m.mean_y * m.mean_y + c1) *
          (m.var_x + m.var_y + c2));
}

inline std::size_t argmax_row(const float* p, std::size_t k) {
  std::size_t arg = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (p[j] > p[arg]) arg = j;
  return arg;
}

inline std::size_t argmax_row(const double* p, std::size_t k) {
  std::size_t arg = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (p[j] > p[arg]) arg = j;
  return arg;
}

}  // namespace detail

// Eval-mode forward over row batches; per-sample outputs stacked on axis 0.
template <typename T>
Tensor<T> model_outputs(Model<T>& m, const Tensor<T>& inputs,
                        std::size_t batch = 256) {
  if (inputs.rank() < 1 || inputs.dim(0) == 0)
    throw UsageError("model_outputs: empty input batch");
  if (batch < 1) throw UsageError("model_outputs: batch must be >= 1");
  const std::size_t n = inputs.dim(0);
  Rng rng(0);  // eval mode draws nothing
  Tensor<T> out;
  std::size_t row = 0;
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t hi = std::min(n, lo + batch);
    Graph<T> g;
    Var x = g.input(detail::gather_rows(inputs, all, lo, hi));
    Var y = m.forward(g, x, Mode::eval, rng);
    const Tensor<T>& Y = g.value(y);
    if (out.empty()) {
      Shape shape = Y.shape();
      shape[0] = n;
      out = Tensor<T>(std::move(shape));
      row = out.size() / n;
    }
    std::copy(Y.data(), Y.data() + Y.size(), out.data() + lo * row);
  }
  return out;
}

// Per-image reconstruction quality, plus classifier votes when a classifier
// is attached.
struct PerImageEval {
  std::vector<double> ssim;
  std::vector<double> mse;
  std::vector<std::uint8_t> predicted;  // empty without classifier
};

struct EvalMetrics {
  std::size_t count = 0;
  double ssim_mean = 0.0;
  double ssim_var = 0.0;
  double mse_mean = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Metrics from already-computed reconstructions. preds, truths: [N,28,28]
// (or [N,P]); the classifier consumes the reconstructions as images.
template <typename T>
PerImageEval eval_outputs(const Tensor<T>& preds, const Tensor<T>& truths,
                          Model<T>* classifier) {
  const std::size_t n = preds.dim(0);
  const std::size_t p = preds.size() / n;
  if (truths.dim(0) != n || truths.size() != preds.size())
    throw DimensionError("evaluate: " + shape_to_string(preds.shape()) +
                         " reconstructions vs " +
                         shape_to_string(truths.shape()) + " truths");
  PerImageEval ev;
  ev.ssim.resize(n);
  ev.mse.resize(n);
  std::vector<double> a(p), b(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < p; ++q) {
      a[q] = double(preds[i * p + q]);
      b[q] = double(truths[i * p + q]);
    }
    ev.ssim[i] = ssim(a.data(), b.data(), p);
    double s = 0.0;
    for (std::size_t q = 0; q < p; ++q) {
      const double d = a[q] - b[q];
      s += d * d;
    }
    ev.mse[i] = s / double(p);
  }
  if (classifier) {
    const std::size_t side = classifier->config.input_side;
    if (side * side != p)
      throw DimensionError("evaluate: classifier expects " +
                           std::to_string(side * side) +
                           " pixels, reconstructions have " +
                           std::to_string(p));
    Tensor<T> imgs = preds.reshaped({n, 1, side, side});
    Tensor<T> probs = model_outputs(*classifier, imgs);
    const std::size_t k = probs.size() / n;
    ev.predicted.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ev.predicted[i] =
          std::uint8_t(detail::argmax_row(probs.data() + i * k, k));
  }
  return ev;
}

inline EvalMetrics summarize(const PerImageEval& ev,
                             const std::vector<std::uint8_t>& labels,
                             std::size_t lo, std::size_t hi) {
  EvalMetrics m;
  m.count = hi - lo;
  double s = 0.0, s2 = 0.0, e = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    s += ev.ssim[i];
    s2 += ev.ssim[i] * ev.ssim[i];
    e += ev.mse[i];
  }
  const double n = double(m.count);
  m.ssim_mean = s / n;
  m.ssim_var = s2 / n - m.ssim_mean * m.ssim_mean;
  m.mse_mean = e / n;
  if (!ev.predicted.empty()) {
    std::size_t hits = 0;
    for (std::size_t i = lo; i < hi; ++i)
      hits += ev.predicted[i] == labels[i];
    m.accuracy = double(hits) / n;
  }
  return m;
}

}  // namespace detail

// Reconstruction quality of a model over a dataset: mean and variance of
// per-image SSIM, mean MSE, and (with a classifier) the fraction of
// reconstructions classified to the true label.
template <typename T>
EvalMetrics evaluate(Model<T>& model, const SpeckleDataset& ds,
                     Model<T>* classifier = nullptr) {
  if (ds.size() == 0) throw UsageError("evaluate: empty dataset");
  const std::vector<std::uint8_t> labels = record_labels(ds);
  if (classifier) {
    for (std::uint8_t l : labels)
      if (l == kSentinelLabel)
        throw UsageError(
            "evaluate: accuracy requested but dataset has unlabeled records");
  }
  Tensor<T> inputs = speckle_inputs<T>(ds, model.input_is_image());
  Tensor<T> preds = model_outputs(model, inputs);
  Tensor<T> truths = truth_targets<T>(ds);
  PerImageEval ev = detail::eval_outputs(preds, truths, classifier);
  return detail::summarize(ev, labels, 0, ds.size());
}

// One bin of a time-sliced evaluation: records [first, first+count) of the
// dataset, whose timestamps fall in [t_start, t_start + bin_seconds).
struct TemporalBin {
  std::size_t index = 0;
  double t_start = 0.0;
  std::size_t first = 0;
  std::size_t count = 0;
};

struct TemporalReport {
  std::vector<TemporalBin> bins;               // nonempty bins, ascending
  std::vector<std::vector<double>> ssim_mean;  // [model][bin]
  std::vector<std::vector<double>> ssim_var;
  std::vector<std::vector<double>> accuracy;   // nan without classifier
  Tensor<double> pearson;                      // [models, models]
};

// Slices a timestamp-ordered dataset into consecutive bins and scores every
// model on each bin; empty bins are skipped (and noted on the log stream).
// The Pearson matrix correlates the models' binned SSIM-mean series; a
// zero-variance series yields nan against every other model.
template <typename T>
TemporalReport temporal_evaluate(const std::vector<Model<T>*>& models,
                                 const SpeckleDataset& ds,
                                 double bin_seconds = 300.0,
                                 Model<T>* classifier = nullptr) {
  if (models.empty()) throw UsageError("temporal_evaluate: no models");
  if (ds.size() == 0) throw UsageError("temporal_evaluate: empty dataset");
  if (!(bin_seconds > 0.0))
    throw UsageError("temporal_evaluate: bin_seconds must be > 0");
  const std::vector<std::uint8_t> labels = record_labels(ds);
  if (classifier) {
    for (std::uint8_t l : labels)
      if (l == kSentinelLabel)
        throw UsageError(
            "temporal_evaluate: accuracy requested but dataset has "
            "unlabeled records");
  }

  TemporalReport rep;
  std::size_t i = 0;
  std::size_t next_index = 0;
  while (i < ds.size()) {
    const std::size_t k =
        std::size_t(std::floor(ds.records[i].timestamp / bin_seconds));
    for (; next_index < k; ++next_index)
      std::clog << "temporal_evaluate: bin " << next_index
                << " is empty, skipping\n";
    TemporalBin bin;
    bin.index = k;
    bin.t_start = double(k) * bin_seconds;
    bin.first = i;
    while (i < ds.size() &&
           std::size_t(std::floor(ds.records[i].timestamp / bin_seconds)) == k)
      ++i;
    bin.count = i - bin.first;
    rep.bins.push_back(bin);
    next_index = k + 1;
  }

  const std::size_t nm = models.size();
  rep.ssim_mean.resize(nm);
  rep.ssim_var.resize(nm);
  rep.accuracy.resize(nm);
  for (std::size_t mi = 0; mi < nm; ++mi) {
    Tensor<T> inputs = speckle_inputs<T>(ds, models[mi]->input_is_image());
    Tensor<T> preds = model_outputs(*models[mi], inputs);
    Tensor<T> truths = truth_targets<T>(ds);
    PerImageEval ev = detail::eval_outputs(preds, truths, classifier);
    for (const TemporalBin& bin : rep.bins) {
      EvalMetrics m =
          detail::summarize(ev, labels, bin.first, bin.first + bin.count);
      rep.ssim_mean[mi].push_back(m.ssim_mean);
      rep.ssim_var[mi].push_back(m.ssim_var);
      rep.accuracy[mi].push_back(m.accuracy);
    }
  }

  rep.pearson = Tensor<double>({nm, nm});
  const std::size_t nb = rep.bins.size();
  for (std::size_t a = 0; a < nm; ++a)
    for (std::size_t b = 0; b < nm; ++b) {
      if (nb < 2) {
        rep.pearson(a, b) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      Tensor<double> xa({nb}), xb({nb});
      for (std::size_t j = 0; j < nb; ++j) {
        xa[j] = rep.ssim_mean[a][j];
        xb[j] = rep.ssim_mean[b][j];
      }
      try {
        rep.pearson(a, b) = pearson(xa, xb);
      } catch (const UsageError&) {
        std::clog << "temporal_evaluate: SSIM series " << a << " vs " << b
                  << " has zero variance, correlation undefined\n";
        rep.pearson(a, b) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  return rep;
}

struct TrainSummary {
  TrainingCurve curve;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

namespace detail {

// Validation pass: one eval-mode forward, then loss + curve metrics from the
// predictions. For classifiers the "loss" is mean cross-entropy and the
// accuracy is the model's own; reconstruction models score SSIM/MSE and use
// the side classifier for accuracy.
template <typename T>
struct ValScore {
  double loss = 0.0;
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double mse = std::numeric_limits<double>::quiet_NaN();
  double acc = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
ValScore<T> validate_pass(Model<T>& model, const TrainData<T>& val,
                          Objective objective, Model<T>* classifier) {
  ValScore<T> out;
  Tensor<T> preds = model_outputs(model, val.inputs);
  const std::size_t n = preds.dim(0);
  const std::size_t p = preds.size() / n;
  if (model.config.kind == ModelKind::classifier) {
    double nll = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (val.labels[i] >= p)
        throw UsageError("train: validation label " +
                         std::to_string(int(val.labels[i])) +
                         " out of range for " + std::to_string(p) +
                         " classes");
      const T* row = preds.data() + i * p;
      const double q = std::max(double(row[val.labels[i]]), 1e-30);
      nll -= std::log(q);
      hits += argmax_row(row, p) == val.labels[i];
    }
    out.loss = nll / double(n);
    out.acc = double(hits) / double(n);
    return out;
  }

  if (val.targets.size() != preds.size())
    throw DimensionError("train: model emits " + std::to_string(p) +
                         " values per sample, validation targets hold " +
                         std::to_string(val.targets.size() / n));
  std::vector<double> a(p), b(p);
  double loss_sum = 0.0, ssim_sum = 0.0, mse_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < p; ++q) {
      a[q] = double(preds[i * p + q]);
      b[q] = double(val.targets[i * p + q]);
    }
    const double m = [&] {
      double s = 0.0;
      for (std::size_t q = 0; q < p; ++q) {
        const double d = a[q] - b[q];
        s += d * d;
      }
      return s / double(p);
    }();
    ssim_sum += ssim(a.data(), b.data(), p);
    mse_sum += m;
    switch (objective) {
      case Objective::ssim:
        loss_sum += 1.0 - ssim_training_form(a.data(), b.data(), p);
        break;
      case Objective::mse:
        loss_sum += m;
        break;
      default: {
        double ce = 0.0;
        for (std::size_t q = 0; q < p; ++q) {
          const double pr = std::min(1.0 - 1e-7, std::max(1e-7, a[q]));
          ce -= b[q] * std::log(pr) + (1.0 - b[q]) * std::log(1.0 - pr);
        }
        loss_sum += ce / double(p);
      }
    }
  }
  out.loss = loss_sum / double(n);
  out.ssim = ssim_sum / double(n);
  out.mse = mse_sum / double(n);

  if (classifier && !val.labels.empty()) {
    const std::size_t side = classifier->config.input_side;
    Tensor<T> imgs = preds.reshaped({n, 1, side, side});
    Tensor<T> probs = model_outputs(*classifier, imgs);
    const std::size_t k = probs.size() / n;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
      hits += argmax_row(probs.data() + i * k, k) == val.labels[i];
    out.acc = double(hits) / double(n);
  }
  return out;
}

}  // namespace detail

// Mini-batch Adam with per-epoch seeded shuffles and patience-based early
// stopping on the validation loss of the configured objective. The model is
// left at the best-validation-loss checkpoint; the curve logs one row per
// epoch actually run. Non-finite training loss aborts.
template <typename T>
TrainSummary train(Model<T>& model, const TrainData<T>& train_set,
                   const TrainData<T>& val_set, const TrainConfig& cfg,
                   Model<T>* classifier = nullptr) {
  cfg.validate();
  const std::size_t n = train_set.size();
  if (n == 0 || val_set.size() == 0)
    throw UsageError("train: train and validation sets must be nonempty");
  const bool classify = model.config.kind == ModelKind::classifier;
  if (classify) {
    if (train_set.labels.size() != n ||
        val_set.labels.size() != val_set.size())
      throw UsageError("train: classifier training needs labels");
  } else {
    if (train_set.targets.empty() || train_set.targets.dim(0) != n ||
        val_set.targets.empty() || val_set.targets.dim(0) != val_set.size())
      throw UsageError("train: reconstruction training needs targets");
  }

  auto refs = model.parameters();
  AdamState<T> adam;
  EarlyStopper stopper(cfg.patience_epochs);
  TrainSummary out;
  std::vector<Tensor<T>> best;  // values of all tensors, incl. BN stats

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  const auto t0 = std::chrono::steady_clock::now();
  double prev_wall = 0.0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(cfg.seed, 2 * epoch));
    Rng drop_rng(Rng::mix(cfg.seed, 2 * epoch + 1));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size, ++batch_index) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      Graph<T> g;
      Var x = g.input(detail::gather_rows(train_set.inputs, order, lo, hi));
      Var loss;
      if (classify) {
        std::vector<std::uint8_t> labels(hi - lo);
        for (std::size_t i = lo; i < hi; ++i)
          labels[i - lo] = train_set.labels[order[i]];
        Var logits = model.forward_logits(g, x, Mode::train, drop_rng);
        loss = softmax_xent(g, logits, std::move(labels));
      } else {
        Var y = model.forward(g, x, Mode::train, drop_rng);
        Var flat = flatten(g, y);
        loss = reconstruction_loss(
            g, flat, detail::gather_rows(train_set.targets, order, lo, hi),
            cfg.objective);
      }
      const double lv = double(g.value(loss)[0]);
      if (!std::isfinite(lv))
        throw DivergenceError("train: loss " + fmt_double(lv) + " at epoch " +
                                  std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              epoch, batch_index);
      loss_sum += lv * double(hi - lo);
      model.zero_grad();
      g.backward(loss);
      adam_step(refs, adam, cfg);
    }

    const detail::ValScore<T> vs =
        detail::validate_pass(model, val_set, cfg.objective, classifier);
    if (!std::isfinite(vs.loss))
      throw DivergenceError("train: validation loss " + fmt_double(vs.loss) +
                                " after epoch " + std::to_string(epoch),
                            epoch, batch_index);
    const bool stop = stopper.update(vs.loss);
    if (stopper.last_improved()) {
      best.clear();
      for (auto& r : model.tensors()) best.push_back(*r.value);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    rec.wall_s = elapsed > prev_wall ? elapsed
                                     : std::nextafter(prev_wall, 1e300);
    prev_wall = rec.wall_s;
    rec.train_loss = loss_sum / double(n);
    rec.val_ssim = vs.ssim;
    rec.val_mse = vs.mse;
    rec.val_acc = vs.acc;
    out.curve.rows.push_back(rec);
    out.epochs_run = epoch;
    if (stop) {
      out.stopped_early = true;
      break;
    }
  }

  out.best_epoch = stopper.best_epoch();
  out.best_val_loss = stopper.best_loss();
  if (!best.empty()) {
    auto refs_all = model.tensors();
    for (std::size_t i = 0; i < refs_all.size(); ++i)
      *refs_all[i].value = best[i];
  }
  return out;
}

}  // namespace specknet
