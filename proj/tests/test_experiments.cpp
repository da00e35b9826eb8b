#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "specknet/corpus.hpp"
#include "specknet/experiments.hpp"

using namespace specknet;
namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

}  // namespace

class ExperimentsTest : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "specknet_experiments";
    fs::remove_all(root);
    fs::create_directories(root / "data");
    auto put = [&](CorpusSource src, std::size_t n, std::uint64_t seed) {
      const std::string tag = corpus_source_name(src);
      write_corpus_idx((root / "data" / (tag + "-images.idx")).string(),
                       (root / "data" / (tag + "-labels.idx")).string(),
                       synth_corpus(src, n, seed));
    };
    put(CorpusSource::digits, 160, 7);
    put(CorpusSource::fashion, 96, 8);
    put(CorpusSource::random, 64, 9);
  }

  static void TearDownTestSuite() { fs::remove_all(root); }

  // shrink every knob a preset shares; preset-specific ones come per test
  static ExperimentSpec tiny(const std::string& name, const std::string& out) {
    ExperimentSpec spec;
    spec.name = name;
    spec.output_dir = (root / out).string();
    spec.data_dir = (root / "data").string();
    spec.seed = 5;
    spec.overrides = {
        {"n_train", "48"},       {"n_val", "16"},
        {"camera_side", "64"},   {"calibration_images", "8"},
        {"batch_size", "16"},    {"max_epochs", "2"},
        {"patience_epochs", "2"}, {"render_rows", "2"},
    };
    return spec;
  }
};

fs::path ExperimentsTest::root;

TEST_F(ExperimentsTest, PresetListIsFixed) {
  const auto& names = experiment_presets();
  ASSERT_EQ(names.size(), 13u);
  EXPECT_EQ(names.front(), "fig2-recon");
  EXPECT_EQ(names[4], "fig4-temporal");
  EXPECT_EQ(names.back(), "supp-symmetric");
  for (const std::string& n : names)
    EXPECT_NO_THROW(preset_defaults(n, Scale::desk));
}

TEST_F(ExperimentsTest, UnknownPresetListsValidNames) {
  ExperimentSpec spec = tiny("fig9-nope", "out-unknown");
  try {
    run_experiment<float>(spec);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("fig9-nope"), std::string::npos);
    for (const std::string& n : experiment_presets())
      EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
}

TEST_F(ExperimentsTest, UnknownSettingIsRejected) {
  ExperimentSpec spec = tiny("supp-objectives", "out-badkey");
  spec.overrides["shl_hidden"] = "8";
  spec.overrides["n_trian"] = "4";
  try {
    run_experiment<float>(spec);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("n_trian"), std::string::npos);
    EXPECT_NE(msg.find("n_train"), std::string::npos);  // valid keys listed
  }
}

TEST_F(ExperimentsTest, MissingCorpusNamesTheGenerator) {
  ExperimentSpec spec = tiny("supp-objectives", "out-missing");
  spec.overrides["shl_hidden"] = "8";
  spec.data_dir = (root / "empty").string();
  fs::create_directories(spec.data_dir);
  try {
    run_experiment<float>(spec);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("gen-corpus"), std::string::npos);
    EXPECT_NE(msg.find("digits-images.idx"), std::string::npos);
  }
}

TEST_F(ExperimentsTest, ShortCorpusSaysHowMuchToGenerate) {
  ExperimentSpec spec = tiny("supp-objectives", "out-short");
  spec.overrides["shl_hidden"] = "8";
  spec.overrides["n_train"] = "256";
  try {
    run_experiment<float>(spec);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("--digits 272"), std::string::npos) << msg;
    EXPECT_NE(msg.find("160"), std::string::npos);
  }
}

TEST_F(ExperimentsTest, ObjectiveSweepWritesTheWholeArtifactSet) {
  ExperimentSpec spec = tiny("supp-objectives", "out-objectives");
  spec.overrides["shl_hidden"] = "8";
  const ExperimentResult res = run_experiment<float>(spec);

  const std::vector<std::string> want = {
      "manifest.txt",       "curve_obj-ssim.csv", "grid_obj-ssim.pgm",
      "curve_obj-xent.csv", "grid_obj-xent.pgm",  "curve_obj-mse.csv",
      "grid_obj-mse.pgm",   "summary.csv"};
  EXPECT_EQ(res.files, want);
  for (const std::string& f : want)
    EXPECT_TRUE(fs::exists(fs::path(spec.output_dir) / f)) << f;

  const TrainingCurve curve = TrainingCurve::from_csv(
      read_all(fs::path(spec.output_dir) / "curve_obj-ssim.csv"));
  EXPECT_EQ(curve.rows.size(), 2u);

  const auto summary = csv_lines(read_all(fs::path(spec.output_dir) / "summary.csv"));
  ASSERT_EQ(summary.size(), 4u);
  EXPECT_EQ(summary[0],
            "run,kind,input_side,parameters,flops,epochs,best_epoch,"
            "best_val_loss,val_ssim,val_mse,val_acc");
  EXPECT_EQ(summary[1].substr(0, 21), "obj-ssim,shl_dnn,64,3");

  EXPECT_EQ(read_all(fs::path(spec.output_dir) / "grid_obj-mse.pgm").substr(0, 3),
            "P5\n");

  const std::string man = read_all(fs::path(spec.output_dir) / "manifest.txt");
  EXPECT_NE(man.find("preset=supp-objectives"), std::string::npos);
  EXPECT_NE(man.find("figure=8(b)"), std::string::npos);
  EXPECT_NE(man.find("setting.n_train=48"), std::string::npos);
  EXPECT_NE(man.find("run.2.name=obj-mse"), std::string::npos);
  EXPECT_NE(man.find("run.0.train.objective=ssim"), std::string::npos);
  EXPECT_NE(man.find("run.1.train.objective=xent"), std::string::npos);
  EXPECT_NE(man.find("derived.corpus_fnv.digits-images.idx="),
            std::string::npos);
  EXPECT_NE(man.find("artifact.0=curve_obj-ssim.csv"), std::string::npos);
}

TEST_F(ExperimentsTest, RerunIsByteIdenticalOutsideTheWallClock) {
  ExperimentSpec a = tiny("supp-hidden", "out-rerun-a");
  a.overrides["hidden_sweep"] = "4,8";
  ExperimentSpec b = a;
  b.output_dir = (root / "out-rerun-b").string();
  run_experiment<float>(a);
  run_experiment<float>(b);

  for (const char* f : {"manifest.txt", "summary.csv"})
    EXPECT_EQ(read_all(fs::path(a.output_dir) / f),
              read_all(fs::path(b.output_dir) / f))
        << f;
  for (const char* f : {"curve_shl-h4.csv", "curve_shl-h8.csv"})
    EXPECT_EQ(strip_wall_column(read_all(fs::path(a.output_dir) / f)),
              strip_wall_column(read_all(fs::path(b.output_dir) / f)))
        << f;
  for (const char* f : {"grid_shl-h4.pgm", "grid_shl-h8.pgm"})
    EXPECT_EQ(read_all(fs::path(a.output_dir) / f),
              read_all(fs::path(b.output_dir) / f))
        << f;
}

TEST_F(ExperimentsTest, ManifestReplaysTheSameRun) {
  ExperimentSpec a = tiny("supp-hidden", "out-replay-a");
  a.overrides["hidden_sweep"] = "4,8";
  run_experiment<float>(a);
  const std::string man = read_all(fs::path(a.output_dir) / "manifest.txt");

  ExperimentSpec c;  // everything comes from the manifest
  c.output_dir = (root / "out-replay-c").string();
  c.data_dir = (root / "data").string();
  apply_config_text(c, man);
  EXPECT_EQ(c.name, "supp-hidden");
  EXPECT_EQ(c.seed, 5u);
  run_experiment<float>(c);

  EXPECT_EQ(read_all(fs::path(a.output_dir) / "summary.csv"),
            read_all(fs::path(c.output_dir) / "summary.csv"));
  EXPECT_EQ(read_all(fs::path(a.output_dir) / "manifest.txt"),
            read_all(fs::path(c.output_dir) / "manifest.txt"));
  for (const char* f : {"curve_shl-h4.csv", "curve_shl-h8.csv"})
    EXPECT_EQ(strip_wall_column(read_all(fs::path(a.output_dir) / f)),
              strip_wall_column(read_all(fs::path(c.output_dir) / f)))
        << f;
}

TEST_F(ExperimentsTest, TransferRunScoresAllFourSets) {
  ExperimentSpec spec = tiny("fig6-transfer", "out-transfer");
  spec.overrides["shl_hidden"] = "8";
  spec.overrides["eval_records"] = "8";
  const ExperimentResult res = run_experiment<float>(spec);
  EXPECT_NE(std::find(res.files.begin(), res.files.end(), "transfer.csv"),
            res.files.end());
  EXPECT_NE(std::find(res.files.begin(), res.files.end(), "grid_withheld.pgm"),
            res.files.end());

  const auto lines = csv_lines(read_all(fs::path(spec.output_dir) / "transfer.csv"));
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "set,count,ssim_mean,mse_mean");
  EXPECT_EQ(lines[1].substr(0, 8), "seen,16,");
  EXPECT_EQ(lines[2].substr(0, 11), "withheld,8,");
  EXPECT_EQ(lines[3].substr(0, 10), "fashion,8,");
  EXPECT_EQ(lines[4].substr(0, 9), "random,8,");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream is(lines[i]);
    std::string set, count, ssim_s, mse_s;
    std::getline(is, set, ',');
    std::getline(is, count, ',');
    std::getline(is, ssim_s, ',');
    std::getline(is, mse_s, ',');
    EXPECT_TRUE(std::isfinite(std::stod(ssim_s))) << lines[i];
    EXPECT_TRUE(std::isfinite(std::stod(mse_s))) << lines[i];
  }
}

TEST_F(ExperimentsTest, TemporalRunEmitsBinsAndCorrelation) {
  ExperimentSpec spec = tiny("fig4-temporal", "out-temporal");
  spec.overrides["shl_hidden"] = "8";
  spec.overrides["unet_multiplier"] = "1";
  spec.overrides["clf_epochs"] = "1";
  spec.overrides["stream_records"] = "8";
  spec.overrides["stream_refresh_seconds"] = "150";
  const ExperimentResult res = run_experiment<float>(spec);
  EXPECT_NE(std::find(res.files.begin(), res.files.end(), "temporal.csv"),
            res.files.end());

  const auto lines = csv_lines(read_all(fs::path(spec.output_dir) / "temporal.csv"));
  ASSERT_GE(lines.size(), 3u);  // header + at least two 300 s bins
  EXPECT_EQ(lines[0],
            "bin,t_start,count,ssim_mean_shl,ssim_var_shl,acc_shl,"
            "ssim_mean_unet,ssim_var_unet,acc_unet");
  std::size_t records = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream is(lines[i]);
    std::string cell;
    std::getline(is, cell, ',');  // bin index
    std::getline(is, cell, ',');  // t_start
    std::getline(is, cell, ',');  // count
    records += std::stoul(cell);
  }
  EXPECT_EQ(records, 8u);

  const auto corr = csv_lines(read_all(fs::path(spec.output_dir) / "correlation.csv"));
  ASSERT_EQ(corr.size(), 2u);
  EXPECT_EQ(corr[0], "model_a,model_b,pearson");
  EXPECT_EQ(corr[1].substr(0, 9), "shl,unet,");

  // the curves carry classifier accuracy for both models
  const auto curve = TrainingCurve::from_csv(
      read_all(fs::path(spec.output_dir) / "curve_shl.csv"));
  for (const EpochRecord& row : curve.rows) EXPECT_TRUE(row.val_acc >= 0.0);
}

TEST(ExperimentConfig, StripWallColumnDropsOnlyThatColumn) {
  EXPECT_EQ(strip_wall_column("epoch,wall_s,a,b\n1,0.5,2,3\n"),
            "epoch,a,b\n1,2,3\n");
  EXPECT_THROW(strip_wall_column("only,one\n"), FormatError);
  EXPECT_THROW(strip_wall_column("none\n"), FormatError);
}

TEST(ExperimentConfig, ApplyConfigTextRoutesKeys) {
  ExperimentSpec spec;
  apply_config_text(spec,
                    "# comment\n"
                    "preset=fig5-vgg\n"
                    "scale=paper\n"
                    "seed=42\n"
                    "setting.n_train=128\n"
                    "batch_size=32\n"
                    "figure=5\n"
                    "derived.fiber_seed=99\n"
                    "run.0.name=x\n"
                    "artifact.0=y\n");
  EXPECT_EQ(spec.name, "fig5-vgg");
  EXPECT_EQ(spec.scale, Scale::paper);
  EXPECT_EQ(spec.seed, 42u);
  EXPECT_EQ(spec.overrides.at("n_train"), "128");
  EXPECT_EQ(spec.overrides.at("batch_size"), "32");
  EXPECT_EQ(spec.overrides.size(), 2u);
  EXPECT_THROW(apply_config_text(spec, "no equals sign\n"), ConfigError);
  EXPECT_THROW(apply_config_text(spec, "scale=huge\n"), ConfigError);
}

TEST(ExperimentConfig, PaperScaleKeepsTheReferenceSizes) {
  const auto desk = preset_defaults("fig3-curves", Scale::desk);
  const auto paper = preset_defaults("fig3-curves", Scale::paper);
  EXPECT_EQ(desk.at("n_train"), "2048");
  EXPECT_EQ(paper.at("n_train"), "27685");
  EXPECT_EQ(paper.at("n_val"), "3077");
  EXPECT_EQ(paper.at("shl_hidden"), "4096");
  EXPECT_EQ(paper.at("unet_multiplier"), "4");
  EXPECT_EQ(preset_defaults("fig3d-shl-sweep", Scale::paper).at("n_train"),
            "8709");
  EXPECT_EQ(preset_defaults("fig6-transfer", Scale::paper).at("n_train"),
            "14565");
}
