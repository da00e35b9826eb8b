#pragma once

// Experiment presets. Each run_experiment call trains the models one figure
// needs and writes, into spec.output_dir:
//   manifest.txt     every setting, derived seed, and per-run config
//   curve_<run>.csv  training curve per trained model
//   grid_<run>.pgm   truth / speckle / reconstruction rows with SSIM captions
//   summary.csv      one row per run: sizes, stopping point, final metrics
//   temporal.csv + correlation.csv (fig4), transfer.csv (fig6)
// Rerunning the same spec — or feeding manifest.txt back through
// apply_config_text — reproduces every CSV byte except the wall-clock column
// (see strip_wall_column).
//
// Corpora are read from IDX pairs in spec.data_dir ("digits-images.idx" /
// "digits-labels.idx", same for fashion and random), as written by the
// gen-corpus command.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "specknet/builders.hpp"
#include "specknet/common.hpp"
#include "specknet/corpus.hpp"
#include "specknet/datasets.hpp"
#include "specknet/io_util.hpp"
#include "specknet/metrics.hpp"
#include "specknet/render.hpp"
#include "specknet/trainer.hpp"

namespace specknet {

// desk = sized for a workstation CPU run; paper = the reference sizes
enum class Scale { desk, paper };

inline const char* scale_name(Scale s) {
  return s == Scale::desk ? "desk" : "paper";
}

inline Scale scale_from_name(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw ConfigError("unknown scale '" + s + "' (desk or paper)");
}

struct ExperimentSpec {
  std::string name;
  std::map<std::string, std::string> overrides;
  std::string output_dir;
  std::string data_dir;
  Scale scale = Scale::desk;
  std::uint64_t seed = 1;
};

inline const std::vector<std::string>& experiment_presets() {
  static const std::vector<std::string> names = {
      "fig2-recon",     "fig3-curves",      "fig3d-shl-sweep",
      "fig3e-unet-sweep", "fig4-temporal",  "fig5-vgg",
      "fig6-transfer",  "supp-depth",       "supp-hidden",
      "supp-activations", "supp-objectives", "supp-filters",
      "supp-symmetric"};
  return names;
}

namespace detail {

using Settings = std::map<std::string, std::string>;

inline const std::string& setting(const Settings& s, const std::string& key) {
  const auto it = s.find(key);
  if (it == s.end())
    throw ConfigError("experiment: missing setting '" + key + "'");
  return it->second;
}

inline std::uint64_t set_u64(const Settings& s, const std::string& key) {
  const std::string& v = setting(s, key);
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("experiment: setting " + key + "=" + v +
                      " is not a whole number");
  }
}

inline double set_f64(const Settings& s, const std::string& key) {
  const std::string& v = setting(s, key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("experiment: setting " + key + "=" + v +
                      " is not a number");
  }
}

inline std::vector<std::size_t> set_list(const Settings& s,
                                         const std::string& key) {
  const std::string& v = setting(s, key);
  std::vector<std::size_t> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::size_t(std::stoull(tok)));
    } catch (const std::exception&) {
      throw ConfigError("experiment: setting " + key + "=" + v +
                        " has a non-numeric entry '" + tok + "'");
    }
  }
  if (out.empty())
    throw ConfigError("experiment: setting " + key + "=" + v +
                      " must be a comma list of sizes");
  return out;
}

inline std::string preset_figure(const std::string& name) {
  static const std::map<std::string, std::string> fig = {
      {"fig2-recon", "2"},          {"fig3-curves", "3(a-c)"},
      {"fig3d-shl-sweep", "3(d)"},  {"fig3e-unet-sweep", "3(e)"},
      {"fig4-temporal", "4"},       {"fig5-vgg", "5"},
      {"fig6-transfer", "6"},       {"supp-depth", "7(a)"},
      {"supp-hidden", "7(b)"},      {"supp-activations", "8(a)"},
      {"supp-objectives", "8(b)"},  {"supp-filters", "9(a)"},
      {"supp-symmetric", "9(b)"}};
  return fig.at(name);
}

inline std::string preset_list_string() {
  std::string out;
  for (const std::string& p : experiment_presets()) {
    if (!out.empty()) out += ", ";
    out += p;
  }
  return out;
}

}  // namespace detail

// The full setting table a preset runs from, before overrides. Throws a
// usage error (listing valid names) for an unknown preset.
inline std::map<std::string, std::string> preset_defaults(
    const std::string& name, Scale scale) {
  const auto& presets = experiment_presets();
  if (std::find(presets.begin(), presets.end(), name) == presets.end())
    throw UsageError("unknown preset '" + name +
                     "'; valid presets: " + detail::preset_list_string());
  const bool paper = scale == Scale::paper;
  // the big-data presets keep the full training set; the sweeps use the
  // smaller study set
  const bool sweep = name != "fig2-recon" && name != "fig3-curves" &&
                     name != "fig4-temporal" && name != "fig6-transfer";

  detail::Settings s;
  s["n_train"] = paper ? (sweep ? "8709" : "27685") : "2048";
  s["n_val"] = paper ? "3077" : "512";
  s["camera_side"] = "128";
  s["fiber_mode"] = "coherent";
  s["unitary"] = "0";
  s["drift_epsilon"] = "0.002";
  s["refresh_seconds"] = fmt_double(1.0 / 0.9);
  s["calibration_images"] = "100";
  s["speckle_side"] = "64";
  s["batch_size"] = paper ? "256" : "64";
  s["learning_rate"] = "0.001";
  s["objective"] = "ssim";
  s["patience_epochs"] = paper ? "100" : "10";
  s["max_epochs"] = paper ? "1000" : "80";
  s["dropout_rate"] = "0.2";
  s["activation"] = "sigmoid";
  s["render_rows"] = "3";

  const std::string shl_hidden = paper ? "4096" : "1024";
  const std::string unet_mult = paper ? "4" : "1";
  if (name == "fig2-recon") {
    s["shl_hidden"] = shl_hidden;
    s["unet_multiplier"] = unet_mult;
  } else if (name == "fig3-curves") {
    s["shl_hidden"] = shl_hidden;
    s["unet_multiplier"] = unet_mult;
    s["train_classifier"] = "1";
    s["clf_epochs"] = paper ? "12" : "6";
  } else if (name == "fig3d-shl-sweep") {
    s["shl_hidden"] = shl_hidden;
    s["input_sides"] = "64,28,84";
  } else if (name == "fig3e-unet-sweep") {
    s["unet_sweep_multipliers"] = paper ? "1,3,4" : "1,2";
  } else if (name == "fig4-temporal") {
    s["shl_hidden"] = shl_hidden;
    s["unet_multiplier"] = unet_mult;
    s["train_classifier"] = "1";
    s["clf_epochs"] = paper ? "12" : "6";
    s["bin_seconds"] = "300";
    s["stream_records"] = paper ? "3072" : "240";
    s["stream_refresh_seconds"] = paper ? "275" : "30";
    s["drift_interval_seconds"] = "300";
  } else if (name == "fig5-vgg") {
    s["shl_hidden"] = shl_hidden;
    s["vgg_hidden_sweep"] = paper ? "4096,784,128" : "1024,256,64";
  } else if (name == "fig6-transfer") {
    s["n_train"] = paper ? "14565" : "2048";
    s["shl_hidden"] = shl_hidden;
    s["withheld_digit"] = "9";
    s["eval_records"] = paper ? "1000" : "256";
  } else if (name == "supp-depth") {
    s["shl_hidden"] = shl_hidden;
    s["mlp_hidden_layers"] = "3";
  } else if (name == "supp-hidden") {
    s["hidden_sweep"] = paper ? "256,512,4096,8192" : "64,128,1024,2048";
  } else if (name == "supp-activations") {
    s["shl_hidden"] = shl_hidden;
  } else if (name == "supp-objectives") {
    s["shl_hidden"] = shl_hidden;
  } else if (name == "supp-filters") {
    s["unet_sweep_multipliers"] = paper ? "4,5" : "1,2";
  } else {  // supp-symmetric
    s["unet_multiplier"] = unet_mult;
    s["symmetric_sides"] = "64,28";
  }
  return s;
}

// Reads a plain key=value config (or a previously written manifest.txt) into
// the spec: preset / scale / seed set their fields, setting.* and bare keys
// become overrides, output-only manifest keys are skipped.
inline void apply_config_text(ExperimentSpec& spec, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "preset") spec.name = val;
    else if (key == "scale") spec.scale = scale_from_name(val);
    else if (key == "seed") {
      try {
        spec.seed = std::stoull(val);
      } catch (const std::exception&) {
        throw ConfigError("config: seed=" + val + " is not a whole number");
      }
    }
    else if (key == "figure" || key.rfind("derived.", 0) == 0 ||
             key.rfind("run.", 0) == 0 || key.rfind("artifact.", 0) == 0)
      continue;  // manifest output, not input
    else if (key.rfind("setting.", 0) == 0)
      spec.overrides[key.substr(8)] = val;
    else
      spec.overrides[key] = val;
  }
}

// Drops the wall-clock column from a training-curve CSV so byte comparisons
// see only the deterministic fields.
inline std::string strip_wall_column(const std::string& csv) {
  std::istringstream is(csv);
  std::string line, out;
  while (std::getline(is, line)) {
    const auto p1 = line.find(',');
    const auto p2 = p1 == std::string::npos ? p1 : line.find(',', p1 + 1);
    if (p2 == std::string::npos)
      throw FormatError("strip_wall_column: row with fewer than 3 cells: '" +
                        line + "'");
    out += line.substr(0, p1) + line.substr(p2) + '\n';
  }
  return out;
}

struct ExperimentResult {
  std::vector<std::string> files;  // relative to output_dir; manifest first
};

namespace detail {

struct RunPlan {
  std::string name;
  ModelConfig model;
  Objective objective = Objective::ssim;
  CorpusSource source = CorpusSource::digits;
};

inline ModelConfig shl_cfg(const Settings& s, std::size_t side,
                           std::size_t hidden) {
  ModelConfig m;
  m.kind = ModelKind::shl_dnn;
  m.input_side = side;
  m.output_side = 28;
  m.hidden_nodes = hidden;
  m.dropout_rate = set_f64(s, "dropout_rate");
  m.activation = setting(s, "activation");
  return m;
}

inline ModelConfig unet_cfg(const Settings& s, std::size_t side,
                            std::size_t mult, bool skips) {
  ModelConfig m;
  m.kind = ModelKind::unet;
  m.input_side = side;
  m.output_side = 28;
  m.filter_multiplier = mult;
  m.use_skips = skips;
  m.dropout_rate = set_f64(s, "dropout_rate");
  return m;
}

// dense parameter counts used to width-match the deep variant
inline std::size_t dense_params_shl(std::size_t in, std::size_t h) {
  return in * h + h + h * 784 + 784;
}
inline std::size_t dense_params_mlp3(std::size_t in, std::size_t w) {
  return in * w + w + 2 * (w * w + w) + w * 784 + 784;
}

inline std::size_t matched_mlp_width(std::size_t in, std::size_t h) {
  const std::size_t want = dense_params_shl(in, h);
  std::size_t best = 1;
  auto gap = [&](std::size_t w) {
    const std::size_t p = dense_params_mlp3(in, w);
    return p > want ? p - want : want - p;
  };
  for (std::size_t w = 2; w <= 8192; ++w)
    if (gap(w) < gap(best)) best = w;
  return best;
}

inline std::vector<RunPlan> plan_runs(const std::string& preset,
                                      const Settings& s) {
  const std::size_t side = set_u64(s, "speckle_side");
  const Objective base_obj = objective_from_name(setting(s, "objective"));
  std::vector<RunPlan> runs;
  auto add = [&](std::string name, ModelConfig m,
                 CorpusSource src = CorpusSource::digits,
                 Objective obj = Objective::ssim) {
    runs.push_back({std::move(name), std::move(m), obj, src});
  };

  if (preset == "fig2-recon") {
    const std::size_t h = set_u64(s, "shl_hidden");
    const std::size_t mult = set_u64(s, "unet_multiplier");
    for (CorpusSource src : {CorpusSource::digits, CorpusSource::fashion}) {
      const std::string tag = corpus_source_name(src);
      add(tag + "-shl", shl_cfg(s, side, h), src, base_obj);
      add(tag + "-unet", unet_cfg(s, side, mult, true), src, base_obj);
    }
  } else if (preset == "fig3-curves" || preset == "fig4-temporal") {
    add("shl", shl_cfg(s, side, set_u64(s, "shl_hidden")),
        CorpusSource::digits, base_obj);
    add("unet", unet_cfg(s, side, set_u64(s, "unet_multiplier"), true),
        CorpusSource::digits, base_obj);
  } else if (preset == "fig3d-shl-sweep") {
    const std::size_t h = set_u64(s, "shl_hidden");
    for (std::size_t in : set_list(s, "input_sides"))
      add("in" + std::to_string(in) + "-h" + std::to_string(h),
          shl_cfg(s, in, h), CorpusSource::digits, base_obj);
    const std::size_t small = std::max<std::size_t>(1, h / 8);
    add("in" + std::to_string(side) + "-h" + std::to_string(small),
        shl_cfg(s, side, small), CorpusSource::digits, base_obj);
  } else if (preset == "fig3e-unet-sweep") {
    const std::vector<std::size_t> mults = set_list(s, "unet_sweep_multipliers");
    for (std::size_t m : mults)
      add("unet-m" + std::to_string(m), unet_cfg(s, side, m, true),
          CorpusSource::digits, base_obj);
    const std::size_t base = mults.back();
    add("unet-m" + std::to_string(base) + "-noskip",
        unet_cfg(s, side, base, false), CorpusSource::digits, base_obj);
  } else if (preset == "fig5-vgg") {
    add("shl-h" + setting(s, "shl_hidden"),
        shl_cfg(s, side, set_u64(s, "shl_hidden")), CorpusSource::digits,
        base_obj);
    for (std::size_t nh : set_list(s, "vgg_hidden_sweep")) {
      ModelConfig m;
      m.kind = ModelKind::vgg;
      m.input_side = side;
      m.output_side = 28;
      m.n_h = nh;
      m.dropout_rate = set_f64(s, "dropout_rate");
      add("vgg-nh" + std::to_string(nh), m, CorpusSource::digits, base_obj);
    }
  } else if (preset == "fig6-transfer") {
    add("shl-no" + setting(s, "withheld_digit"),
        shl_cfg(s, side, set_u64(s, "shl_hidden")), CorpusSource::digits,
        base_obj);
  } else if (preset == "supp-depth") {
    const std::size_t h = set_u64(s, "shl_hidden");
    add("shl-h" + std::to_string(h), shl_cfg(s, side, h),
        CorpusSource::digits, base_obj);
    const std::size_t layers = set_u64(s, "mlp_hidden_layers");
    if (layers != 3)
      throw ConfigError("supp-depth: only 3 hidden layers supported, got " +
                        std::to_string(layers));
    const std::size_t w = matched_mlp_width(side * side, h);
    ModelConfig m = shl_cfg(s, side, h);
    m.kind = ModelKind::mlp;
    m.hidden_layers = {w, w, w};
    add("mlp-3x" + std::to_string(w), m, CorpusSource::digits, base_obj);
  } else if (preset == "supp-hidden") {
    for (std::size_t h : set_list(s, "hidden_sweep"))
      add("shl-h" + std::to_string(h), shl_cfg(s, side, h),
          CorpusSource::digits, base_obj);
  } else if (preset == "supp-activations") {
    const std::size_t h = set_u64(s, "shl_hidden");
    for (const char* act : {"sigmoid", "relu", "tanh"}) {
      ModelConfig m = shl_cfg(s, side, h);
      m.activation = act;
      add(std::string("act-") + act, m, CorpusSource::digits, base_obj);
    }
    ModelConfig single = shl_cfg(s, side, h);
    single.output_sigmoid = false;
    add("act-single-sigmoid", single, CorpusSource::digits, base_obj);
  } else if (preset == "supp-objectives") {
    const std::size_t h = set_u64(s, "shl_hidden");
    for (Objective obj : {Objective::ssim, Objective::xent, Objective::mse})
      add(std::string("obj-") + objective_name(obj), shl_cfg(s, side, h),
          CorpusSource::digits, obj);
  } else if (preset == "supp-filters") {
    for (std::size_t m : set_list(s, "unet_sweep_multipliers"))
      add("unet-m" + std::to_string(m), unet_cfg(s, side, m, true),
          CorpusSource::digits, base_obj);
  } else {  // supp-symmetric
    const std::size_t mult = set_u64(s, "unet_multiplier");
    for (std::size_t in : set_list(s, "symmetric_sides"))
      add("unet-in" + std::to_string(in), unet_cfg(s, in, mult, true),
          CorpusSource::digits, base_obj);
  }
  return runs;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[std::size_t(i)] = digits[v & 15];
  return out;
}

// IDX corpora on disk, loaded once and hashed for the manifest.
struct CorpusStore {
  std::string dir;
  std::map<CorpusSource, LabeledImageSet> sets;
  std::map<std::string, std::string> hashes;  // name -> fnv64 hex

  LabeledImageSet& get(CorpusSource src, std::size_t need) {
    const std::string tag = corpus_source_name(src);
    auto it = sets.find(src);
    if (it == sets.end()) {
      const std::string images =
          (std::filesystem::path(dir) / (tag + "-images.idx")).string();
      const std::string labels =
          (std::filesystem::path(dir) / (tag + "-labels.idx")).string();
      for (const std::string& p : {images, labels})
        if (!std::filesystem::exists(p))
          throw FormatError("missing corpus file '" + p +
                            "'; generate the corpora with `specknet "
                            "gen-corpus --out " +
                            dir + "`");
      hashes[tag + "-images.idx"] = hex64(fnv1a64(read_file(images)));
      hashes[tag + "-labels.idx"] = hex64(fnv1a64(read_file(labels)));
      it = sets.emplace(src, load_idx(images, labels, src)).first;
    }
    if (it->second.size() < need)
      throw FormatError("corpus '" + tag + "' in " + dir + " has " +
                        std::to_string(it->second.size()) +
                        " images but this run needs " + std::to_string(need) +
                        "; regenerate with `specknet gen-corpus --out " + dir +
                        " --" + tag + " " + std::to_string(need) + "`");
    return it->second;
  }
};

inline LabeledImageSet corpus_slice(const LabeledImageSet& set,
                                    std::size_t begin, std::size_t count) {
  const std::size_t hw = set.images.size() / set.size();
  LabeledImageSet out;
  out.source = set.source;
  Shape shape = set.images.shape();
  shape[0] = count;
  out.images = Tensor<double>(shape);
  std::copy(set.images.data() + begin * hw,
            set.images.data() + (begin + count) * hw, out.images.data());
  out.labels.assign(set.labels.begin() + long(begin),
                    set.labels.begin() + long(begin + count));
  return out;
}

struct DataBundle {
  SpeckleDataset train, val;
};

template <typename T>
std::vector<ImageTriplet<double>> grid_triplets(Model<T>& model,
                                                const SpeckleDataset& val,
                                                std::size_t rows) {
  rows = std::min(rows, val.size());
  SpeckleDataset head;
  head.fiber_seed = val.fiber_seed;
  head.records.assign(val.records.begin(), val.records.begin() + long(rows));
  Tensor<T> inputs = speckle_inputs<T>(head, model.input_is_image());
  Tensor<T> preds = model_outputs(model, inputs);
  const std::size_t side = head.records[0].speckle.shape()[0];

  std::vector<ImageTriplet<double>> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    ImageTriplet<double>& t = out[r];
    t.truth = Tensor<double>({28, 28});
    for (std::size_t q = 0; q < 784; ++q)
      t.truth[q] = double(head.records[r].truth[q]) / 255.0;
    t.speckle = Tensor<double>({side, side});
    for (std::size_t q = 0; q < side * side; ++q)
      t.speckle[q] = double(head.records[r].speckle[q]) / 255.0;
    t.recon = Tensor<double>({28, 28});
    for (std::size_t q = 0; q < 784; ++q)
      t.recon[q] = double(preds[r * 784 + q]);
    t.score = ssim(t.recon, t.truth);
  }
  return out;
}

inline void kv_block(std::ostringstream& os, const std::string& prefix,
                     const std::string& kv) {
  std::istringstream is(kv);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) os << prefix << line << '\n';
}

}  // namespace detail

template <typename T = float>
ExperimentResult run_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  detail::Settings s = preset_defaults(spec.name, spec.scale);
  for (const auto& [k, v] : spec.overrides) {
    if (!s.count(k)) {
      std::string keys;
      for (const auto& [dk, dv] : s) {
        if (!keys.empty()) keys += ", ";
        keys += dk;
      }
      throw ConfigError("preset " + spec.name + ": unknown setting '" + k +
                        "'; valid settings: " + keys);
    }
    s[k] = v;
  }
  if (spec.output_dir.empty())
    throw UsageError("experiment: output directory required");
  if (spec.data_dir.empty())
    throw UsageError("experiment: corpus directory required");

  const std::size_t n_train = detail::set_u64(s, "n_train");
  const std::size_t n_val = detail::set_u64(s, "n_val");
  if (n_train < 1 || n_val < 1)
    throw ConfigError("experiment: n_train and n_val must be >= 1");
  const std::size_t render_rows =
      std::max<std::size_t>(1, detail::set_u64(s, "render_rows"));

  PipelineConfig base_pc;
  base_pc.fiber.n_in = 784;
  base_pc.fiber.camera_side = detail::set_u64(s, "camera_side");
  base_pc.fiber.mode = fiber_mode_from_name(detail::setting(s, "fiber_mode"));
  base_pc.fiber.unitary = detail::setting(s, "unitary") != "0";
  base_pc.fiber.drift_epsilon = detail::set_f64(s, "drift_epsilon");
  base_pc.fiber.seed = Rng::mix(spec.seed, 11);
  base_pc.refresh_seconds = detail::set_f64(s, "refresh_seconds");
  base_pc.drift = false;
  base_pc.calibration_images = detail::set_u64(s, "calibration_images");
  const std::uint64_t split_seed = Rng::mix(spec.seed, 12);

  TrainConfig base_tc;
  base_tc.batch_size = detail::set_u64(s, "batch_size");
  base_tc.learning_rate = detail::set_f64(s, "learning_rate");
  base_tc.patience_epochs = detail::set_u64(s, "patience_epochs");
  base_tc.max_epochs = detail::set_u64(s, "max_epochs");
  base_tc.validate();

  fs::create_directories(spec.output_dir);
  ExperimentResult result;
  auto emit = [&](const std::string& name, const std::string& bytes) {
    detail::write_file((fs::path(spec.output_dir) / name).string(), bytes);
    result.files.push_back(name);
  };

  detail::CorpusStore corpora{spec.data_dir, {}, {}};
  const bool transfer = spec.name == "fig6-transfer";
  const std::uint8_t withheld_digit =
      transfer ? std::uint8_t(detail::set_u64(s, "withheld_digit")) : 0;

  // train/val speckle splits per (corpus, input side); fig6 withholds one
  // digit class from its pool first
  std::map<std::pair<CorpusSource, std::size_t>, detail::DataBundle> bundles;
  LabeledImageSet withheld_pool;
  auto bundle = [&](CorpusSource src,
                    std::size_t side) -> detail::DataBundle& {
    const auto key = std::make_pair(src, side);
    auto it = bundles.find(key);
    if (it != bundles.end()) return it->second;
    LabeledImageSet pool;
    if (transfer && src == CorpusSource::digits) {
      LabeledImageSet& all = corpora.get(src, n_train + n_val);
      auto parts = withhold_digit(all, withheld_digit);
      withheld_pool = std::move(parts.second);
      if (parts.first.size() < n_train + n_val)
        throw FormatError(
            "corpus 'digits' keeps only " + std::to_string(parts.first.size()) +
            " images after withholding digit " +
            std::to_string(int(withheld_digit)) + " but this run needs " +
            std::to_string(n_train + n_val) +
            "; regenerate with `specknet gen-corpus --out " + spec.data_dir +
            " --digits " + std::to_string((n_train + n_val) * 10 / 9 + 16) +
            "`");
      pool = detail::corpus_slice(parts.first, 0, n_train + n_val);
    } else {
      pool = detail::corpus_slice(corpora.get(src, n_train + n_val), 0,
                                  n_train + n_val);
    }
    PipelineConfig pc = base_pc;
    pc.speckle_side = side;
    SpeckleDataset ds = build_speckle_dataset(pool, pc);
    auto halves = split(ds, n_train, n_val, SplitStrategy::random, split_seed);
    detail::DataBundle b{std::move(halves.first), std::move(halves.second)};
    return bundles.emplace(key, std::move(b)).first->second;
  };

  // auxiliary digit classifier used for the accuracy columns
  Model<T> clf;
  bool have_clf = s.count("train_classifier") &&
                  detail::setting(s, "train_classifier") != "0";
  if (have_clf) {
    const detail::DataBundle& b =
        bundle(CorpusSource::digits, detail::set_u64(s, "speckle_side"));
    ModelConfig cc;
    cc.kind = ModelKind::classifier;
    cc.input_side = 28;
    clf = build_model<T>(cc, Rng::mix(spec.seed, 13));
    auto clf_data = [&](const SpeckleDataset& ds) {
      TrainData<T> d;
      d.inputs = truth_targets<T>(ds);
      d.inputs.reshape_in_place({ds.size(), 1, 28, 28});
      d.labels = record_labels(ds);
      return d;
    };
    TrainConfig ct = base_tc;
    ct.objective = Objective::xent;
    ct.max_epochs = detail::set_u64(s, "clf_epochs");
    ct.patience_epochs = ct.max_epochs;
    ct.seed = Rng::mix(spec.seed, 14);
    train(clf, clf_data(b.train), clf_data(b.val), ct);
  }
  Model<T>* clf_ptr = have_clf ? &clf : nullptr;

  const std::vector<detail::RunPlan> runs = detail::plan_runs(spec.name, s);
  std::ostringstream summary;
  summary << "run,kind,input_side,parameters,flops,epochs,best_epoch,"
             "best_val_loss,val_ssim,val_mse,val_acc\n";
  std::vector<Model<T>> trained;
  trained.reserve(runs.size());
  std::ostringstream man_runs;

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const detail::RunPlan& plan = runs[i];
    detail::DataBundle& b = bundle(plan.source, plan.model.input_side);
    const std::uint64_t model_seed = Rng::mix(spec.seed, 100 + 2 * i);
    Model<T> model = build_model<T>(plan.model, model_seed);
    TrainConfig tc = base_tc;
    tc.objective = plan.objective;
    tc.seed = Rng::mix(spec.seed, 101 + 2 * i);

    TrainData<T> tr = reconstruction_data(b.train, model);
    TrainData<T> va = reconstruction_data(b.val, model);
    const TrainSummary sum = train(model, tr, va, tc, clf_ptr);
    emit("curve_" + plan.name + ".csv", sum.curve.to_csv());
    emit("grid_" + plan.name + ".pgm",
         pgm_bytes(render_grid(detail::grid_triplets(model, b.val, render_rows))));

    const EvalMetrics em = evaluate(model, b.val, clf_ptr);
    summary << plan.name << ',' << model_kind_name(plan.model.kind) << ','
            << plan.model.input_side << ',' << count_parameters(model) << ','
            << count_flops(model) << ',' << sum.epochs_run << ','
            << sum.best_epoch << ',' << fmt_double(sum.best_val_loss) << ','
            << fmt_double(em.ssim_mean) << ',' << fmt_double(em.mse_mean)
            << ',' << fmt_double(em.accuracy) << '\n';

    man_runs << "run." << i << ".name=" << plan.name << '\n';
    man_runs << "run." << i << ".corpus=" << corpus_source_name(plan.source)
             << '\n';
    man_runs << "run." << i << ".model_seed=" << model_seed << '\n';
    detail::kv_block(man_runs, "run." + std::to_string(i) + ".model.",
                     plan.model.to_kv());
    TrainConfig tc_record = tc;
    detail::kv_block(man_runs, "run." + std::to_string(i) + ".train.",
                     tc_record.to_kv());
    trained.push_back(std::move(model));
  }
  emit("summary.csv", summary.str());

  if (spec.name == "fig4-temporal") {
    // models trained on the still fiber, scored on a drifting stream of
    // fresh images
    const std::size_t side = detail::set_u64(s, "speckle_side");
    const std::size_t stream_n = detail::set_u64(s, "stream_records");
    LabeledImageSet& all =
        corpora.get(CorpusSource::digits, n_train + n_val + stream_n);
    LabeledImageSet stream_pool =
        detail::corpus_slice(all, n_train + n_val, stream_n);
    PipelineConfig pc = base_pc;
    pc.speckle_side = side;
    pc.drift = true;
    pc.refresh_seconds = detail::set_f64(s, "stream_refresh_seconds");
    pc.drift_interval_seconds = detail::set_f64(s, "drift_interval_seconds");
    SpeckleDataset stream = build_speckle_dataset(stream_pool, pc);

    std::vector<Model<T>*> models;
    for (Model<T>& m : trained) models.push_back(&m);
    const TemporalReport rep = temporal_evaluate(
        models, stream, detail::set_f64(s, "bin_seconds"), clf_ptr);

    std::ostringstream tcsv;
    tcsv << "bin,t_start,count";
    for (const auto& plan : runs)
      tcsv << ",ssim_mean_" << plan.name << ",ssim_var_" << plan.name
           << ",acc_" << plan.name;
    tcsv << '\n';
    for (std::size_t bi = 0; bi < rep.bins.size(); ++bi) {
      tcsv << rep.bins[bi].index << ',' << fmt_double(rep.bins[bi].t_start)
           << ',' << rep.bins[bi].count;
      for (std::size_t mi = 0; mi < models.size(); ++mi)
        tcsv << ',' << fmt_double(rep.ssim_mean[mi][bi]) << ','
             << fmt_double(rep.ssim_var[mi][bi]) << ','
             << fmt_double(rep.accuracy[mi][bi]);
      tcsv << '\n';
    }
    emit("temporal.csv", tcsv.str());

    std::ostringstream ccsv;
    ccsv << "model_a,model_b,pearson\n";
    for (std::size_t a = 0; a < models.size(); ++a)
      for (std::size_t bmi = a + 1; bmi < models.size(); ++bmi)
        ccsv << runs[a].name << ',' << runs[bmi].name << ','
             << fmt_double(rep.pearson[a * models.size() + bmi]) << '\n';
    emit("correlation.csv", ccsv.str());
  }

  if (transfer) {
    const std::size_t side = detail::set_u64(s, "speckle_side");
    const std::size_t eval_n = detail::set_u64(s, "eval_records");
    detail::DataBundle& b = bundle(CorpusSource::digits, side);
    Model<T>& model = trained.front();
    PipelineConfig pc = base_pc;
    pc.speckle_side = side;

    if (withheld_pool.size() == 0)
      throw FormatError("corpus 'digits' in " + spec.data_dir +
                        " contains no digit-" +
                        std::to_string(int(withheld_digit)) +
                        " images to withhold; regenerate with `specknet "
                        "gen-corpus --out " +
                        spec.data_dir + "`");
    LabeledImageSet nines = detail::corpus_slice(
        withheld_pool, 0, std::min(eval_n, withheld_pool.size()));
    SpeckleDataset withheld_ds = build_speckle_dataset(nines, pc);
    LabeledImageSet fashion =
        detail::corpus_slice(corpora.get(CorpusSource::fashion, eval_n), 0,
                             eval_n);
    SpeckleDataset fashion_ds = build_speckle_dataset(fashion, pc);
    LabeledImageSet noise = detail::corpus_slice(
        corpora.get(CorpusSource::random, eval_n), 0, eval_n);
    SpeckleDataset random_ds = build_speckle_dataset(noise, pc);

    std::ostringstream xcsv;
    xcsv << "set,count,ssim_mean,mse_mean\n";
    auto row = [&](const char* tag, const SpeckleDataset& ds) {
      const EvalMetrics em = evaluate(model, ds);
      xcsv << tag << ',' << em.count << ',' << fmt_double(em.ssim_mean) << ','
           << fmt_double(em.mse_mean) << '\n';
    };
    row("seen", b.val);
    row("withheld", withheld_ds);
    row("fashion", fashion_ds);
    row("random", random_ds);
    emit("transfer.csv", xcsv.str());
    emit("grid_withheld.pgm",
         pgm_bytes(render_grid(
             detail::grid_triplets(model, withheld_ds, render_rows))));
  }

  std::ostringstream man;
  man << "preset=" << spec.name << '\n';
  man << "figure=" << detail::preset_figure(spec.name) << '\n';
  man << "scale=" << scale_name(spec.scale) << '\n';
  man << "seed=" << spec.seed << '\n';
  for (const auto& [k, v] : s) man << "setting." << k << '=' << v << '\n';
  man << "derived.fiber_seed=" << base_pc.fiber.seed << '\n';
  man << "derived.split_seed=" << split_seed << '\n';
  if (have_clf) {
    man << "derived.classifier_model_seed=" << Rng::mix(spec.seed, 13) << '\n';
    man << "derived.classifier_train_seed=" << Rng::mix(spec.seed, 14) << '\n';
  }
  for (const auto& [file, hash] : corpora.hashes)
    man << "derived.corpus_fnv." << file << '=' << hash << '\n';
  man << man_runs.str();
  for (std::size_t i = 0; i < result.files.size(); ++i)
    man << "artifact." << i << '=' << result.files[i] << '\n';
  detail::write_file(
      (fs::path(spec.output_dir) / "manifest.txt").string(), man.str());
  result.files.insert(result.files.begin(), "manifest.txt");
  return result;
}

}  // namespace specknet
