#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/fiber.hpp"
#include "specknet/idx.hpp"
#include "specknet/io_util.hpp"
#include "specknet/resample.hpp"
#include "specknet/rng.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

enum class CorpusSource { digits, fashion, random };

inline const char* corpus_source_name(CorpusSource s) {
  switch (s) {
    case CorpusSource::digits: return "digits";
    case CorpusSource::fashion: return "fashion";
    default: return "random";
  }
}

inline CorpusSource corpus_source_from_name(const std::string& s) {
  if (s == "digits") return CorpusSource::digits;
  if (s == "fashion") return CorpusSource::fashion;
  if (s == "random") return CorpusSource::random;
  throw ConfigError("unknown corpus source '" + s + "'");
}

// Class index used for images that have no class (random-pixel corpora).
inline constexpr std::uint8_t kSentinelLabel = 255;

// Ground-truth images with labels, pixels normalized from 8 bits to [0,1].
struct LabeledImageSet {
  Tensor<double> images;  // [N x H x W]
  std::vector<std::uint8_t> labels;
  CorpusSource source = CorpusSource::digits;

  std::size_t size() const { return labels.size(); }
};

inline LabeledImageSet load_idx(const std::string& images_path,
                                const std::string& labels_path,
                                CorpusSource source = CorpusSource::digits) {
  Tensor<std::uint8_t> raw = read_idx_images(images_path);
  std::vector<std::uint8_t> labels = read_idx_labels(labels_path);
  if (raw.dim(0) != labels.size())
    throw FormatError(images_path + ": " + std::to_string(raw.dim(0)) +
                      " images but " + std::to_string(labels.size()) +
                      " labels in " + labels_path);
  LabeledImageSet set;
  set.images = Tensor<double>(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i)
    set.images[i] = double(raw[i]) / 255.0;
  set.labels = std::move(labels);
  set.source = source;
  return set;
}

// One simulated acquisition: what was displayed, what the camera saw (after
// the 64x64 Lanczos reduction), and when.
struct SampleRecord {
  Tensor<std::uint8_t> truth;    // [28 x 28]
  Tensor<std::uint8_t> speckle;  // [side x side], 64 in the container format
  std::uint8_t label = 0;
  double timestamp = 0.0;
};

struct SpeckleDataset {
  std::vector<SampleRecord> records;  // ordered by timestamp
  std::uint64_t fiber_seed = 0;

  std::size_t size() const { return records.size(); }
};

// --- container format -------------------------------------------------------
//
// byte layout, little-endian throughout:
//   0   magic "SPKL"
//   4   u16 version (1)
//   6   u16 reserved (0)
//   8   u64 record count
//   16  records, each 4889 bytes:
//         784 bytes truth pixels (28x28, row-major)
//         4096 bytes speckle pixels (64x64, row-major)
//         1 byte label (255 = unlabeled)
//         8 bytes f64 timestamp, seconds since run start
// Records are stored in non-decreasing timestamp order. Seeds and fiber
// parameters travel in the dataset manifest, not in this container.

inline constexpr std::uint16_t kSpklVersion = 1;

inline void save_spkl(const std::string& path, const SpeckleDataset& ds) {
  std::string out;
  out.reserve(16 + ds.records.size() * 4889);
  out.append("SPKL");
  detail::put_u16(out, kSpklVersion);
  detail::put_u16(out, 0);
  detail::put_u64(out, ds.records.size());
  double prev = -std::numeric_limits<double>::infinity();
  for (const SampleRecord& r : ds.records) {
    if (r.truth.shape() != Shape{28, 28})
      throw UsageError("save_spkl: truth must be [28x28], got " +
                       shape_to_string(r.truth.shape()));
    if (r.speckle.shape() != Shape{64, 64})
      throw UsageError("save_spkl: speckle must be [64x64], got " +
                       shape_to_string(r.speckle.shape()));
    if (r.timestamp < prev)
      throw UsageError("save_spkl: timestamps must be non-decreasing");
    prev = r.timestamp;
    out.append(reinterpret_cast<const char*>(r.truth.data()), 784);
    out.append(reinterpret_cast<const char*>(r.speckle.data()), 4096);
    out.push_back(char(r.label));
    detail::put_f64(out, r.timestamp);
  }
  detail::write_file(path, out);
}

inline SpeckleDataset load_spkl(const std::string& path,
                                std::uint64_t fiber_seed = 0) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  if (r.bytes(4, "magic") != "SPKL")
    throw FormatError(path + ": bad magic, expected \"SPKL\"");
  const std::uint16_t version = r.u16le("version");
  if (version != kSpklVersion)
    throw FormatError(path + ": unsupported version " +
                      std::to_string(version));
  r.u16le("reserved");
  const std::uint64_t count = r.u64le("record count");
  SpeckleDataset ds;
  ds.fiber_seed = fiber_seed;
  ds.records.resize(count);
  double prev = -std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < count; ++i) {
    SampleRecord& rec = ds.records[i];
    rec.truth = Tensor<std::uint8_t>({28, 28});
    const std::uint8_t* tp = r.raw(784, "truth pixels");
    std::copy(tp, tp + 784, rec.truth.data());
    rec.speckle = Tensor<std::uint8_t>({64, 64});
    const std::uint8_t* sp = r.raw(4096, "speckle pixels");
    std::copy(sp, sp + 4096, rec.speckle.data());
    rec.label = r.u8("label");
    rec.timestamp = r.f64le("timestamp");
    if (rec.timestamp < prev)
      throw FormatError(path + ": record " + std::to_string(i) +
                        " breaks timestamp order");
    prev = rec.timestamp;
  }
  if (r.remaining() != 0)
    throw FormatError(path + ": " + std::to_string(r.remaining()) +
                      " trailing bytes after last record");
  return ds;
}

// --- splits ------------------------------------------------------------------

enum class SplitStrategy { random, temporal };

namespace detail {

// canonical record order: by time, ties broken by content, so that the
// seeded random split is a function of the record multiset alone
inline bool record_before(const SampleRecord& a, const SampleRecord& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  if (a.truth.values() != b.truth.values())
    return a.truth.values() < b.truth.values();
  if (a.speckle.values() != b.speckle.values())
    return a.speckle.values() < b.speckle.values();
  return a.label < b.label;
}

}  // namespace detail

inline std::pair<SpeckleDataset, SpeckleDataset> split(
    const SpeckleDataset& ds, std::size_t n_train, std::size_t n_val,
    SplitStrategy strategy, std::uint64_t seed) {
  if (n_train + n_val > ds.size())
    throw UsageError("split: asked for " + std::to_string(n_train) + "+" +
                     std::to_string(n_val) + " records from " +
                     std::to_string(ds.size()));
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::record_before(ds.records[a], ds.records[b]);
  });
  if (strategy == SplitStrategy::random) {
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
  }
  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + long(begin),
                                 order.begin() + long(begin + count));
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return detail::record_before(ds.records[a], ds.records[b]);
    });
    SpeckleDataset out;
    out.fiber_seed = ds.fiber_seed;
    out.records.reserve(count);
    for (std::size_t i : idx) out.records.push_back(ds.records[i]);
    return out;
  };
  return {take(0, n_train), take(n_train, n_val)};
}

inline std::pair<LabeledImageSet, LabeledImageSet> withhold_digit(
    const LabeledImageSet& set, std::uint8_t digit) {
  if (set.source != CorpusSource::digits)
    throw UsageError("withhold_digit: only digit corpora have digits");
  if (digit > 9) throw UsageError("withhold_digit: digit must be 0-9");
  const std::size_t hw = set.size() ? set.images.size() / set.size() : 0;
  LabeledImageSet kept, withheld;
  kept.source = withheld.source = CorpusSource::digits;
  std::vector<std::size_t> keep_idx, hold_idx;
  for (std::size_t i = 0; i < set.size(); ++i)
    (set.labels[i] == digit ? hold_idx : keep_idx).push_back(i);
  auto gather = [&](const std::vector<std::size_t>& idx, LabeledImageSet& out) {
    Shape shape = set.images.shape();
    shape[0] = idx.size();
    out.images = Tensor<double>(shape);
    out.labels.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::copy(set.images.data() + idx[j] * hw,
                set.images.data() + (idx[j] + 1) * hw,
                out.images.data() + j * hw);
      out.labels.push_back(set.labels[idx[j]]);
    }
  };
  gather(keep_idx, kept);
  gather(hold_idx, withheld);
  return {std::move(kept), std::move(withheld)};
}

// Uncorrelated uniform 8-bit noise images; the degenerate "no spatial
// structure" corpus.
inline LabeledImageSet random_pixel_images(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw UsageError("random_pixel_images: n must be >= 1");
  LabeledImageSet set;
  set.source = CorpusSource::random;
  set.images = Tensor<double>({n, 28, 28});
  Rng rng(seed);
  for (std::size_t i = 0; i < set.images.size(); ++i)
    set.images[i] = double(rng.below(256)) / 255.0;
  set.labels.assign(n, kSentinelLabel);
  return set;
}

// --- acquisition pipeline ----------------------------------------------------

struct PipelineConfig {
  FiberConfig fiber;
  double refresh_seconds = 1.0 / 0.9;  // SLM frame period
  bool drift = false;
  double drift_interval_seconds = 300.0;  // one drift step per 5 sim-minutes
  std::size_t speckle_side = 64;
  std::size_t calibration_images = 100;

  std::string to_kv() const {
    std::ostringstream os;
    os << "refresh_seconds=" << fmt_double(refresh_seconds) << '\n';
    os << "drift=" << (drift ? 1 : 0) << '\n';
    os << "drift_interval_seconds=" << fmt_double(drift_interval_seconds)
       << '\n';
    os << "speckle_side=" << speckle_side << '\n';
    os << "calibration_images=" << calibration_images << '\n';
    std::istringstream fib(fiber.to_kv());
    std::string line;
    while (std::getline(fib, line)) os << "fiber." << line << '\n';
    return os.str();
  }

  static PipelineConfig from_kv(const std::string& text) {
    PipelineConfig c;
    std::string fiber_kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key.rfind("fiber.", 0) == 0) fiber_kv += line.substr(6) + '\n';
      else if (key == "refresh_seconds") c.refresh_seconds = std::stod(val);
      else if (key == "drift") c.drift = val != "0";
      else if (key == "drift_interval_seconds")
        c.drift_interval_seconds = std::stod(val);
      else if (key == "speckle_side") c.speckle_side = std::stoul(val);
      else if (key == "calibration_images")
        c.calibration_images = std::stoul(val);
      else throw FormatError("pipeline config: unknown key '" + key + "'");
    }
    c.fiber = FiberConfig::from_kv(fiber_kv);
    return c;
  }
};

inline std::uint8_t quantize_byte(double v) {
  return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Runs every ground truth through display -> fiber -> camera -> Lanczos,
// stamping timestamps at the refresh period and advancing fiber drift at
// every drift-interval boundary. Exposure is calibrated on the first
// calibration_images truths against the undrifted medium, then frozen.
inline SpeckleDataset build_speckle_dataset(const LabeledImageSet& truths,
                                            const PipelineConfig& p) {
  const std::size_t n = truths.size();
  if (n == 0) throw UsageError("build_speckle_dataset: empty truth set");
  const std::size_t hw = truths.images.size() / n;
  if (hw != p.fiber.n_in)
    throw ConfigError("build_speckle_dataset: fiber expects " +
                      std::to_string(p.fiber.n_in) + " input pixels, truths have " +
                      std::to_string(hw));
  if (p.refresh_seconds <= 0.0)
    throw ConfigError("build_speckle_dataset: refresh_seconds must be > 0");
  if (p.drift && p.drift_interval_seconds <= 0.0)
    throw ConfigError(
        "build_speckle_dataset: drift_interval_seconds must be > 0");

  TransmissionMatrix t = generate_transmission(p.fiber);
  const double scale =
      calibrate_exposure(t, truths.images, p.calibration_images);
  const std::size_t cam = p.fiber.camera_side;

  SpeckleDataset ds;
  ds.fiber_seed = p.fiber.seed;
  ds.records.resize(n);

  auto drift_steps_at = [&](std::size_t i) -> std::size_t {
    if (!p.drift) return 0;
    return std::size_t(std::floor(double(i) * p.refresh_seconds /
                                  p.drift_interval_seconds));
  };

  std::size_t applied = 0;
  std::size_t i = 0;
  while (i < n) {
    const std::size_t want = drift_steps_at(i);
    if (want > applied) {
      t = drift_step(t, want - applied);
      applied = want;
    }
    std::size_t j = i + 1;
    while (j < n && drift_steps_at(j) == want) ++j;

    Tensor<double> block({j - i, hw});
    std::copy(truths.images.data() + i * hw, truths.images.data() + j * hw,
              block.data());
    Tensor<double> inten = propagate_batch(t, block);

    Tensor<double> frame({cam, cam});
    for (std::size_t k = i; k < j; ++k) {
      std::copy(inten.data() + (k - i) * cam * cam,
                inten.data() + (k - i + 1) * cam * cam, frame.data());
      CameraImage cami = sense(frame, scale, double(k) * p.refresh_seconds);
      Tensor<double> norm({cam, cam});
      for (std::size_t q = 0; q < norm.size(); ++q)
        norm[q] = double(cami.pixels[q]) / 255.0;
      Tensor<double> small = lanczos_resample(norm, p.speckle_side);

      SampleRecord& rec = ds.records[k];
      rec.truth = Tensor<std::uint8_t>({28, 28});
      if (hw != 784)
        throw ConfigError("build_speckle_dataset: truths must be 28x28");
      for (std::size_t q = 0; q < 784; ++q)
        rec.truth[q] = quantize_byte(truths.images[k * hw + q]);
      rec.speckle = Tensor<std::uint8_t>({p.speckle_side, p.speckle_side});
      for (std::size_t q = 0; q < small.size(); ++q)
        rec.speckle[q] = quantize_byte(small[q]);
      rec.label = truths.labels[k];
      rec.timestamp = cami.timestamp;
    }
    i = j;
  }
  return ds;
}

// --- tensor views for training ----------------------------------------------

// Speckles as network inputs: [N x 1 x side x side] when as_image, else
// [N x side^2]; values are the stored bytes over 255.
template <typename T>
Tensor<T> speckle_inputs(const SpeckleDataset& ds, bool as_image) {
  if (ds.size() == 0) throw UsageError("speckle_inputs: empty dataset");
  const std::size_t side = ds.records[0].speckle.dim(0);
  Tensor<T> out(as_image ? Shape{ds.size(), 1, side, side}
                         : Shape{ds.size(), side * side});
  std::size_t q = 0;
  for (const SampleRecord& r : ds.records) {
    if (r.speckle.dim(0) != side)
      throw DimensionError("speckle_inputs: mixed speckle sizes");
    for (std::size_t j = 0; j < side * side; ++j)
      out[q++] = T(r.speckle[j]) / T(255);
  }
  return out;
}

// Ground truths as regression targets: [N x 28 x 28] in [0,1].
template <typename T>
Tensor<T> truth_targets(const SpeckleDataset& ds) {
  if (ds.size() == 0) throw UsageError("truth_targets: empty dataset");
  Tensor<T> out({ds.size(), 28, 28});
  std::size_t q = 0;
  for (const SampleRecord& r : ds.records)
    for (std::size_t j = 0; j < 784; ++j) out[q++] = T(r.truth[j]) / T(255);
  return out;
}

inline std::vector<std::uint8_t> record_labels(const SpeckleDataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(ds.size());
  for (const SampleRecord& r : ds.records) out.push_back(r.label);
  return out;
}

// --- manifest ----------------------------------------------------------------

inline std::string dataset_manifest(const PipelineConfig& p,
                                    std::size_t records) {
  std::ostringstream os;
  os << "records=" << records << '\n';
  os << p.to_kv();
  return os.str();
}

inline std::pair<PipelineConfig, std::size_t> parse_dataset_manifest(
    const std::string& text) {
  std::size_t records = 0;
  std::string rest;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("records=", 0) == 0)
      records = std::stoul(line.substr(8));
    else
      rest += line + '\n';
  }
  return {PipelineConfig::from_kv(rest), records};
}

}  // namespace specknet
