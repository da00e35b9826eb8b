// specknet command line: synthesize corpora, push them through the simulated
// fiber, train and score models, run figure presets, inspect artifacts.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "specknet/corpus.hpp"
#include "specknet/datasets.hpp"
#include "specknet/experiments.hpp"
#include "specknet/idx.hpp"
#include "specknet/model.hpp"
#include "specknet/render.hpp"
#include "specknet/trainer.hpp"

namespace fs = std::filesystem;
using namespace specknet;

namespace {

const char* kUsage = R"(usage: specknet <command> [options]

commands:
  gen-corpus   write the synthetic IDX corpora (digits, fashion, random)
  gen-data     run a corpus through the simulated fiber into an SPKL dataset
  train        train a model on an SPKL dataset
  evaluate     score a trained model on an SPKL dataset
  experiment   run a named figure preset end to end
  inspect      print dataset / checkpoint / corpus file headers

global options:
  --config <file>   plain-text key=value settings for the command
  --seed <n>        base random seed (default 1)
  --out <dir>       output directory (default depends on the command)
  --data <dir>      corpus/dataset directory (default "data")
  --scale <s>       desk (default) or paper sizes

command options:
  gen-corpus   --digits <n> --fashion <n> --random <n>
  gen-data     --corpus <name> --count <n>
  train        --dataset <file.spkl>
  evaluate     --dataset <file.spkl> --model <file.snck>
               [--classifier <file.snck>] [--rows <n>]
  experiment   <preset> (see README.md for the preset list)
  inspect      <file>

exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric divergence during training.
)";

struct Cli {
  std::string command;
  std::vector<std::string> positional;
  std::string config_path;
  std::string out_dir;
  std::string data_dir = "data";
  std::uint64_t seed = 1;
  bool seed_set = false;
  Scale scale = Scale::desk;
  bool scale_set = false;
  bool help = false;
  std::map<std::string, std::string> flags;
};

std::uint64_t parse_u64(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError(what + ": '" + v + "' is not a whole number");
  }
}

Cli parse_cli(int argc, char** argv) {
  Cli c;
  auto value_of = [&](int& i, const std::string& flag) -> std::string {
    if (i + 1 >= argc)
      throw UsageError("option --" + flag + " needs a value");
    return argv[++i];
  };
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--help" || a == "-h") {
      c.help = true;
    } else if (a.rfind("--", 0) == 0) {
      const std::string key = a.substr(2);
      if (key.empty()) throw UsageError("stray '--' on the command line");
      if (key == "config") c.config_path = value_of(i, key);
      else if (key == "out") c.out_dir = value_of(i, key);
      else if (key == "data") c.data_dir = value_of(i, key);
      else if (key == "seed") {
        c.seed = parse_u64(value_of(i, key), "--seed");
        c.seed_set = true;
      } else if (key == "scale") {
        c.scale = scale_from_name(value_of(i, key));
        c.scale_set = true;
      } else {
        c.flags[key] = value_of(i, key);
      }
    } else if (c.command.empty()) {
      c.command = a;
    } else {
      c.positional.push_back(a);
    }
  }
  return c;
}

void check_flags(const Cli& c, std::set<std::string> allowed) {
  for (const auto& [k, v] : c.flags)
    if (!allowed.count(k))
      throw UsageError("unknown option --" + k + " for command " + c.command);
}

std::string flag_or(const Cli& c, const std::string& key,
                    const std::string& fallback) {
  const auto it = c.flags.find(key);
  return it == c.flags.end() ? fallback : it->second;
}

std::string require_flag(const Cli& c, const std::string& key) {
  const auto it = c.flags.find(key);
  if (it == c.flags.end())
    throw UsageError(c.command + ": option --" + key + " is required");
  return it->second;
}

std::string config_text(const Cli& c) {
  return c.config_path.empty() ? std::string()
                               : specknet::detail::read_file(c.config_path);
}

// --- gen-corpus --------------------------------------------------------------

int cmd_gen_corpus(const Cli& c) {
  check_flags(c, {"digits", "fashion", "random"});
  if (!c.config_path.empty())
    throw UsageError("gen-corpus reads no config file; use the count flags");
  const bool paper = c.scale == Scale::paper;
  const std::string dir = c.out_dir.empty() ? c.data_dir : c.out_dir;
  fs::create_directories(dir);

  struct Job {
    CorpusSource src;
    std::size_t n;
    std::uint64_t stream;
  };
  const Job jobs[] = {
      {CorpusSource::digits,
       parse_u64(flag_or(c, "digits", paper ? "32768" : "4096"), "--digits"),
       1},
      {CorpusSource::fashion,
       parse_u64(flag_or(c, "fashion", paper ? "32768" : "3072"), "--fashion"),
       2},
      {CorpusSource::random,
       parse_u64(flag_or(c, "random", paper ? "2048" : "1024"), "--random"),
       3},
  };
  for (const Job& job : jobs) {
    const std::string tag = corpus_source_name(job.src);
    const LabeledImageSet set =
        synth_corpus(job.src, job.n, Rng::mix(c.seed, job.stream));
    const std::string images = (fs::path(dir) / (tag + "-images.idx")).string();
    const std::string labels = (fs::path(dir) / (tag + "-labels.idx")).string();
    write_corpus_idx(images, labels, set);
    std::cout << "wrote " << images << " (" << job.n << " images)\n";
  }
  return 0;
}

// --- gen-data ----------------------------------------------------------------

int cmd_gen_data(const Cli& c) {
  check_flags(c, {"corpus", "count"});
  const CorpusSource src =
      corpus_source_from_name(flag_or(c, "corpus", "digits"));
  const bool paper = c.scale == Scale::paper;
  const std::size_t count =
      parse_u64(flag_or(c, "count", paper ? "30762" : "2560"), "--count");

  PipelineConfig pc;
  const std::string cfg = config_text(c);
  if (!cfg.empty()) {
    try {
      pc = PipelineConfig::from_kv(cfg);
    } catch (const FormatError& e) {
      throw ConfigError(std::string(e.what()));
    }
  }
  if (c.seed_set) pc.fiber.seed = c.seed;

  specknet::detail::CorpusStore store{c.data_dir, {}, {}};
  const LabeledImageSet pool =
      specknet::detail::corpus_slice(store.get(src, count), 0, count);
  const SpeckleDataset ds = build_speckle_dataset(pool, pc);

  const std::string dir = c.out_dir.empty() ? c.data_dir : c.out_dir;
  fs::create_directories(dir);
  const std::string tag = corpus_source_name(src);
  const std::string spkl = (fs::path(dir) / (tag + ".spkl")).string();
  save_spkl(spkl, ds);
  specknet::detail::write_file(
      (fs::path(dir) / (tag + ".manifest")).string(),
      dataset_manifest(pc, ds.size()));
  std::cout << "wrote " << spkl << " (" << ds.size() << " records, "
            << fiber_mode_name(pc.fiber.mode) << " fiber, seed "
            << pc.fiber.seed << ")\n";
  return 0;
}

// --- train -------------------------------------------------------------------

struct TrainSetup {
  ModelConfig model;
  TrainConfig train;
  std::size_t n_train = 0;  // 0 = four fifths of the dataset
  std::size_t n_val = 0;
  SplitStrategy strategy = SplitStrategy::random;
  std::uint64_t split_seed = 0;
  bool split_seed_set = false;
  bool train_seed_set = false;
};

TrainSetup parse_train_config(const std::string& text, bool paper) {
  TrainSetup t;
  // prepend the scale defaults; from_kv is last-wins, so file lines override
  std::string model_kv = paper ? "hidden_nodes=4096\n" : "hidden_nodes=1024\n";
  std::string train_kv =
      paper ? "batch_size=256\npatience_epochs=100\nmax_epochs=1000\n"
            : "batch_size=64\npatience_epochs=10\nmax_epochs=80\n";

  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("train config: expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key.rfind("model.", 0) == 0) {
      model_kv += line.substr(6) + '\n';
    } else if (key.rfind("train.", 0) == 0) {
      train_kv += line.substr(6) + '\n';
      if (key == "train.seed") t.train_seed_set = true;
    } else if (key == "split.n_train") {
      t.n_train = parse_u64(val, key);
    } else if (key == "split.n_val") {
      t.n_val = parse_u64(val, key);
    } else if (key == "split.strategy") {
      if (val == "random") t.strategy = SplitStrategy::random;
      else if (val == "temporal") t.strategy = SplitStrategy::temporal;
      else throw ConfigError("split.strategy must be random or temporal");
    } else if (key == "split.seed") {
      t.split_seed = parse_u64(val, key);
      t.split_seed_set = true;
    } else {
      throw ConfigError("train config: unknown key '" + key +
                        "' (prefixes: model., train., split.)");
    }
  }
  try {
    t.model = ModelConfig::from_kv(model_kv);
    t.train = TrainConfig::from_kv(train_kv);
  } catch (const FormatError& e) {
    throw ConfigError(std::string(e.what()));
  }
  return t;
}

TrainData<float> classifier_data(const SpeckleDataset& ds) {
  TrainData<float> d;
  d.inputs = truth_targets<float>(ds);
  d.inputs.reshape_in_place({ds.size(), 1, 28, 28});
  d.labels = record_labels(ds);
  return d;
}

int cmd_train(const Cli& c) {
  check_flags(c, {"dataset"});
  const std::string dataset = require_flag(c, "dataset");
  const SpeckleDataset ds = load_spkl(dataset);

  TrainSetup setup =
      parse_train_config(config_text(c), c.scale == Scale::paper);
  if (setup.model.kind == ModelKind::classifier)
    setup.train.objective = Objective::xent;
  std::size_t n_train = setup.n_train, n_val = setup.n_val;
  if (n_train == 0 && n_val == 0) {
    n_train = ds.size() * 4 / 5;
    n_val = ds.size() - n_train;
  } else if (n_train == 0 || n_val == 0) {
    throw ConfigError("train config: set both split.n_train and split.n_val");
  }
  const std::uint64_t split_seed =
      setup.split_seed_set ? setup.split_seed : Rng::mix(c.seed, 3);
  auto halves = split(ds, n_train, n_val, setup.strategy, split_seed);

  Model<float> model = build_model<float>(setup.model, Rng::mix(c.seed, 1));
  TrainConfig tc = setup.train;
  if (!setup.train_seed_set) tc.seed = Rng::mix(c.seed, 2);

  TrainData<float> tr, va;
  if (setup.model.kind == ModelKind::classifier) {
    tr = classifier_data(halves.first);
    va = classifier_data(halves.second);
  } else {
    tr = reconstruction_data(halves.first, model);
    va = reconstruction_data(halves.second, model);
  }
  const TrainSummary sum = train(model, tr, va, tc);

  const std::string dir = c.out_dir.empty() ? "run" : c.out_dir;
  fs::create_directories(dir);
  save_checkpoint(model, (fs::path(dir) / "model.snck").string());
  specknet::detail::write_file((fs::path(dir) / "curve.csv").string(),
                               sum.curve.to_csv());
  std::ostringstream rec;
  rec << "dataset=" << dataset << '\n'
      << "split.n_train=" << n_train << '\n'
      << "split.n_val=" << n_val << '\n'
      << "split.strategy="
      << (setup.strategy == SplitStrategy::random ? "random" : "temporal")
      << '\n'
      << "split.seed=" << split_seed << '\n'
      << "model_seed=" << Rng::mix(c.seed, 1) << '\n';
  specknet::detail::kv_block(rec, "model.", setup.model.to_kv());
  specknet::detail::kv_block(rec, "train.", tc.to_kv());
  specknet::detail::write_file((fs::path(dir) / "config.txt").string(),
                               rec.str());

  std::cout << "trained " << model_kind_name(setup.model.kind) << " for "
            << sum.epochs_run << " epochs (best epoch " << sum.best_epoch
            << ", val loss " << fmt_double(sum.best_val_loss) << ")\n"
            << "wrote " << (fs::path(dir) / "model.snck").string() << ", "
            << (fs::path(dir) / "curve.csv").string() << "\n";
  return 0;
}

// --- evaluate ------------------------------------------------------------------

int cmd_evaluate(const Cli& c) {
  check_flags(c, {"dataset", "model", "classifier", "rows"});
  const SpeckleDataset ds = load_spkl(require_flag(c, "dataset"));
  Model<float> model = load_checkpoint<float>(require_flag(c, "model"));
  if (model.config.kind == ModelKind::classifier)
    throw UsageError(
        "evaluate: --model must be a reconstruction network; pass classifier "
        "checkpoints via --classifier");

  Model<float> clf;
  Model<float>* clf_ptr = nullptr;
  if (c.flags.count("classifier")) {
    clf = load_checkpoint<float>(c.flags.at("classifier"));
    if (clf.config.kind != ModelKind::classifier)
      throw UsageError("evaluate: --classifier checkpoint is a " +
                       std::string(model_kind_name(clf.config.kind)));
    clf_ptr = &clf;
  }

  const EvalMetrics em = evaluate(model, ds, clf_ptr);
  const std::string dir = c.out_dir.empty() ? "eval" : c.out_dir;
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "count,ssim_mean,ssim_var,mse_mean,accuracy\n"
      << em.count << ',' << fmt_double(em.ssim_mean) << ','
      << fmt_double(em.ssim_var) << ',' << fmt_double(em.mse_mean) << ','
      << fmt_double(em.accuracy) << '\n';
  specknet::detail::write_file((fs::path(dir) / "eval.csv").string(),
                               csv.str());
  const std::size_t rows = parse_u64(flag_or(c, "rows", "3"), "--rows");
  render_grid_pgm(
      (fs::path(dir) / "grid.pgm").string(),
      specknet::detail::grid_triplets(model, ds,
                                      std::max<std::size_t>(1, rows)));

  std::cout << "evaluated " << em.count << " records: ssim "
            << fmt_double(em.ssim_mean) << ", mse " << fmt_double(em.mse_mean)
            << ", accuracy " << fmt_double(em.accuracy) << "\n"
            << "wrote " << (fs::path(dir) / "eval.csv").string() << ", "
            << (fs::path(dir) / "grid.pgm").string() << "\n";
  return 0;
}

// --- experiment ----------------------------------------------------------------

int cmd_experiment(const Cli& c) {
  check_flags(c, {});
  ExperimentSpec spec;
  spec.data_dir = c.data_dir;
  spec.scale = c.scale;
  spec.seed = c.seed;
  const std::string cfg = config_text(c);
  if (!cfg.empty()) apply_config_text(spec, cfg);
  if (!c.positional.empty()) spec.name = c.positional.front();
  if (c.seed_set) spec.seed = c.seed;
  if (c.scale_set) spec.scale = c.scale;
  if (spec.name.empty())
    throw UsageError("experiment: preset name required; valid presets: " +
                     specknet::detail::preset_list_string());
  spec.output_dir =
      c.out_dir.empty() ? (fs::path("runs") / spec.name).string() : c.out_dir;

  const ExperimentResult res = run_experiment<float>(spec);
  std::cout << "preset " << spec.name << " wrote " << res.files.size()
            << " files to " << spec.output_dir << ":\n";
  for (const std::string& f : res.files) std::cout << "  " << f << '\n';
  return 0;
}

// --- inspect ---------------------------------------------------------------------

int cmd_inspect(const Cli& c) {
  check_flags(c, {});
  if (c.positional.empty())
    throw UsageError("inspect: give a .spkl, .snck, or .idx file");
  const std::string path = c.positional.front();
  const std::string head = specknet::detail::read_file(path).substr(0, 4);

  if (head == "SPKL") {
    const SpeckleDataset ds = load_spkl(path);
    std::size_t labeled = 0;
    for (const SampleRecord& r : ds.records)
      if (r.label != kSentinelLabel) ++labeled;
    std::cout << path << ": speckle dataset, " << ds.size() << " records\n";
    if (ds.size() > 0)
      std::cout << "  timestamps " << fmt_double(ds.records.front().timestamp)
                << " .. " << fmt_double(ds.records.back().timestamp)
                << " s\n  labeled " << labeled << ", unlabeled "
                << (ds.size() - labeled) << "\n";
    return 0;
  }
  if (head == "SNCK") {
    Model<float> model = load_checkpoint<float>(path);
    std::cout << path << ": model checkpoint\n";
    std::istringstream kv(model.config.to_kv());
    std::string line;
    while (std::getline(kv, line)) std::cout << "  " << line << '\n';
    std::cout << "  parameters=" << count_parameters(model) << '\n'
              << "  flops=" << count_flops(model) << '\n'
              << "  init_seed=" << model.seed << '\n';
    return 0;
  }
  if (head.size() == 4 && head[0] == 0 && head[1] == 0) {
    if (head[2] == 8 && head[3] == 3) {
      const Tensor<std::uint8_t> images = read_idx_images(path);
      std::cout << path << ": idx images, " << shape_to_string(images.shape())
                << "\n";
      return 0;
    }
    if (head[2] == 8 && head[3] == 1) {
      const std::vector<std::uint8_t> labels = read_idx_labels(path);
      std::cout << path << ": idx labels, " << labels.size() << " entries\n";
      return 0;
    }
  }
  throw FormatError(path + ": unrecognized file (expected SPKL, SNCK, or IDX)");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const Cli c = parse_cli(argc, argv);
    if (c.help) {
      std::fputs(kUsage, stdout);
      return 0;
    }
    if (c.command.empty()) {
      std::fputs(kUsage, stderr);
      return 1;
    }
    if (c.command == "gen-corpus") return cmd_gen_corpus(c);
    if (c.command == "gen-data") return cmd_gen_data(c);
    if (c.command == "train") return cmd_train(c);
    if (c.command == "evaluate") return cmd_evaluate(c);
    if (c.command == "experiment") return cmd_experiment(c);
    if (c.command == "inspect") return cmd_inspect(c);
    throw UsageError("unknown command '" + c.command +
                     "'; run specknet --help");
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "specknet: %s\n", e.what());
    return 3;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "specknet: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "specknet: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "specknet: %s\n", e.what());
    return 1;
  }
}
