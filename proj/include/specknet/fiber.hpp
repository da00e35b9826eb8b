#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/gemm.hpp"
#include "specknet/resample.hpp"
#include "specknet/rng.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

// How the synthetic medium mixes light: coherent keeps complex field
// amplitudes (interference speckle); incoherent mixes intensities through a
// nonnegative real matrix.
enum class FiberMode { coherent, incoherent };

inline const char* fiber_mode_name(FiberMode m) {
  return m == FiberMode::coherent ? "coherent" : "incoherent";
}

inline FiberMode fiber_mode_from_name(const std::string& s) {
  if (s == "coherent") return FiberMode::coherent;
  if (s == "incoherent") return FiberMode::incoherent;
  throw ConfigError("unknown fiber mode '" + s + "'");
}

struct FiberConfig {
  std::size_t n_in = 784;        // input modes = ground-truth pixels
  std::size_t camera_side = 128; // sensor is camera_side^2 pixels
  FiberMode mode = FiberMode::coherent;
  bool unitary = false;          // orthonormalize columns (coherent only)
  double drift_epsilon = 0.002;  // per-step mixing weight
  std::uint64_t seed = 1;

  std::size_t n_out() const { return camera_side * camera_side; }

  std::string to_kv() const {
    std::ostringstream os;
    os << "n_in=" << n_in << '\n';
    os << "camera_side=" << camera_side << '\n';
    os << "mode=" << fiber_mode_name(mode) << '\n';
    os << "unitary=" << (unitary ? 1 : 0) << '\n';
    os << "drift_epsilon=" << fmt_double(drift_epsilon) << '\n';
    os << "seed=" << seed << '\n';
    return os.str();
  }

  static FiberConfig from_kv(const std::string& text) {
    FiberConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "n_in") c.n_in = std::stoul(val);
      else if (key == "camera_side") c.camera_side = std::stoul(val);
      else if (key == "mode") c.mode = fiber_mode_from_name(val);
      else if (key == "unitary") c.unitary = val != "0";
      else if (key == "drift_epsilon") c.drift_epsilon = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else throw FormatError("fiber config: unknown key '" + key + "'");
    }
    return c;
  }
};

// One 8-bit sensor frame.
struct CameraImage {
  Tensor<std::uint8_t> pixels;
  double timestamp = 0.0;
};

// The medium: a fixed random linear map from input modes to sensor pixels.
// `re`/`im` are the working entries including this step's jitter; the slow
// drift state lives in `base_re`/`base_im` (jitter never accumulates).
// `im` stays empty in incoherent mode. Immutable by convention: drift_step
// returns a new matrix, so concurrent propagation against a snapshot is safe.
struct TransmissionMatrix {
  FiberConfig config;
  std::size_t steps = 0;  // drift steps applied since generation
  Tensor<double> re, im;
  Tensor<double> base_re, base_im;
  double base_norm = 0.0;  // Frobenius norm at generation, preserved by drift
};

namespace detail {

inline double frobenius(const Tensor<double>& re, const Tensor<double>& im) {
  double s = 0.0;
  for (std::size_t i = 0; i < re.size(); ++i) s += re[i] * re[i];
  for (std::size_t i = 0; i < im.size(); ++i) s += im[i] * im[i];
  return std::sqrt(s);
}

// Column orthonormalization via two rounds of Cholesky-QR; for the random
// well-conditioned matrices used here this reaches machine-level
// orthogonality at GEMM speed.
inline void orthonormalize_columns(Tensor<double>& re, Tensor<double>& im) {
  using Eigen::Index;
  using Cplx = std::complex<double>;
  const Index n = Index(re.dim(0)), p = Index(re.dim(1));
  Eigen::MatrixXcd a(n, p);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < p; ++c)
      a(r, c) = Cplx(re(std::size_t(r), std::size_t(c)),
                     im(std::size_t(r), std::size_t(c)));
  for (int round = 0; round < 2; ++round) {
    const Eigen::MatrixXcd g = a.adjoint() * a;
    Eigen::LLT<Eigen::MatrixXcd> llt(g);
    if (llt.info() != Eigen::Success)
      throw UsageError("orthonormalize: gram matrix not positive definite");
    llt.matrixU().solveInPlace<Eigen::OnTheRight>(a);  // a <- a U^-1
  }
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < p; ++c) {
      re(std::size_t(r), std::size_t(c)) = a(r, c).real();
      im(std::size_t(r), std::size_t(c)) = a(r, c).imag();
    }
}

}  // namespace detail

// Draws the medium for the given seed: coherent entries are circular complex
// Gaussian with E|t|^2 = 1/n_in (so a unit-energy input keeps unit energy in
// expectation); incoherent entries are |N(0, 1/n_in)|.
inline TransmissionMatrix generate_transmission(const FiberConfig& config) {
  if (config.n_in < 1 || config.camera_side < 1)
    throw ConfigError("generate_transmission: n_in and camera_side must be >= 1");
  if (config.unitary) {
    if (config.mode != FiberMode::coherent)
      throw ConfigError("generate_transmission: unitary requires coherent mode");
    if (config.n_out() < config.n_in)
      throw ConfigError("generate_transmission: unitary needs n_out >= n_in");
  }
  TransmissionMatrix t;
  t.config = config;
  Rng rng(Rng::mix(config.seed, 0));
  const Shape shape{config.n_out(), config.n_in};
  t.re = Tensor<double>(shape);
  if (config.mode == FiberMode::coherent) {
    t.im = Tensor<double>(shape);
    const double sd = std::sqrt(0.5 / double(config.n_in));
    for (std::size_t i = 0; i < t.re.size(); ++i) {
      t.re[i] = sd * rng.normal();
      t.im[i] = sd * rng.normal();
    }
    if (config.unitary) detail::orthonormalize_columns(t.re, t.im);
  } else {
    const double sd = std::sqrt(1.0 / double(config.n_in));
    for (std::size_t i = 0; i < t.re.size(); ++i)
      t.re[i] = std::abs(sd * rng.normal());
  }
  t.base_re = t.re;
  t.base_im = t.im;
  t.base_norm = detail::frobenius(t.re, t.im);
  return t;
}

// Batch intensity propagation: truths [N x n_in] (any shape with n_in trailing
// elements per sample) in [0,1] -> intensities [N x n_out]. Coherent inputs
// enter as field amplitudes sqrt(pixel) with a spatially uniform phase.
inline Tensor<double> propagate_batch(const TransmissionMatrix& t,
                                      const Tensor<double>& truths) {
  const std::size_t n_in = t.config.n_in;
  const std::size_t n = truths.rank() >= 1 ? truths.dim(0) : 0;
  if (n == 0 || truths.size() != n * n_in)
    throw DimensionError("propagate: expected " + std::to_string(n_in) +
                         " pixels per image, got " +
                         shape_to_string(truths.shape()));
  const std::size_t n_out = t.config.n_out();
  for (std::size_t i = 0; i < truths.size(); ++i)
    if (truths[i] < 0.0)
      throw UsageError("propagate: negative pixel intensity");
  Tensor<double> out({n, n_out});
  if (t.config.mode == FiberMode::coherent) {
    Tensor<double> amp({n, n_in});
    for (std::size_t i = 0; i < truths.size(); ++i)
      amp[i] = std::sqrt(truths[i]);
    Tensor<double> fre({n, n_out}), fim({n, n_out});
    detail::gemm<double>(false, true, n, n_out, n_in, amp.data(), t.re.data(),
                         fre.data());
    detail::gemm<double>(false, true, n, n_out, n_in, amp.data(), t.im.data(),
                         fim.data());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = fre[i] * fre[i] + fim[i] * fim[i];
  } else {
    detail::gemm<double>(false, true, n, n_out, n_in, truths.data(),
                         t.re.data(), out.data());
  }
  return out;
}

// Single image -> intensity field on the camera grid.
inline Tensor<double> propagate(const TransmissionMatrix& t,
                                const Tensor<double>& truth) {
  Tensor<double> flat = truth;
  flat.reshape_in_place({1, truth.size()});
  Tensor<double> out = propagate_batch(t, flat);
  out.reshape_in_place({t.config.camera_side, t.config.camera_side});
  return out;
}

// Advances the slow drift state `steps` times: base <- (1-eps) base + eps G
// with a fresh seeded Gaussian G, rescaled back to the generation-time
// Frobenius norm, then adds an eps-scaled zero-mean jitter redrawn each step.
// eps = 0 leaves the entries bitwise unchanged. Incoherent matrices are
// clamped at zero to stay nonnegative.
inline TransmissionMatrix drift_step(const TransmissionMatrix& t,
                                     std::size_t steps) {
  TransmissionMatrix out = t;
  const double eps = t.config.drift_epsilon;
  const bool coherent = t.config.mode == FiberMode::coherent;
  const double sd = coherent ? std::sqrt(0.5 / double(t.config.n_in))
                             : std::sqrt(1.0 / double(t.config.n_in));
  for (std::size_t s = 1; s <= steps; ++s) {
    const std::size_t k = t.steps + s;
    out.steps = k;
    if (eps == 0.0) continue;
    Rng mixer(Rng::mix(t.config.seed, 2 * k));
    Rng jitter(Rng::mix(t.config.seed, 2 * k + 1));
    if (coherent) {
      for (std::size_t i = 0; i < out.base_re.size(); ++i) {
        out.base_re[i] =
            (1.0 - eps) * out.base_re[i] + eps * (sd * mixer.normal());
        out.base_im[i] =
            (1.0 - eps) * out.base_im[i] + eps * (sd * mixer.normal());
      }
    } else {
      for (std::size_t i = 0; i < out.base_re.size(); ++i)
        out.base_re[i] = (1.0 - eps) * out.base_re[i] +
                         eps * std::abs(sd * mixer.normal());
    }
    const double norm = detail::frobenius(out.base_re, out.base_im);
    const double r = norm > 0.0 ? out.base_norm / norm : 1.0;
    for (std::size_t i = 0; i < out.base_re.size(); ++i) out.base_re[i] *= r;
    for (std::size_t i = 0; i < out.base_im.size(); ++i) out.base_im[i] *= r;
    if (coherent) {
      for (std::size_t i = 0; i < out.re.size(); ++i) {
        out.re[i] = out.base_re[i] + eps * (sd * jitter.normal());
        out.im[i] = out.base_im[i] + eps * (sd * jitter.normal());
      }
    } else {
      for (std::size_t i = 0; i < out.re.size(); ++i)
        out.re[i] =
            std::max(0.0, out.base_re[i] + eps * (sd * jitter.normal()));
    }
  }
  return out;
}

// Exposure scale such that the pooled 99.5th-percentile intensity of the
// first (up to) max_images truths maps to full sensor range. Calibrated once
// per run against the undrifted medium, then frozen.
inline double calibrate_exposure(const TransmissionMatrix& t,
                                 const Tensor<double>& truths,
                                 std::size_t max_images = 100) {
  if (truths.dim(0) == 0)
    throw UsageError("calibrate_exposure: no images");
  const std::size_t n = std::min(truths.dim(0), max_images);
  Tensor<double> head = truths;
  head.reshape_in_place({truths.dim(0), truths.size() / truths.dim(0)});
  Tensor<double> sub({n, head.dim(1)});
  std::copy(head.data(), head.data() + sub.size(), sub.data());
  Tensor<double> inten = propagate_batch(t, sub);
  std::vector<double> pool(inten.data(), inten.data() + inten.size());
  const std::size_t rank = std::size_t(
      std::ceil(0.995 * double(pool.size())));
  const std::size_t k = std::min(pool.size(), std::max<std::size_t>(rank, 1)) - 1;
  std::nth_element(pool.begin(), pool.begin() + long(k), pool.end());
  const double p = pool[k];
  return p > 0.0 ? 1.0 / p : 1.0;
}

// Scale, clip to [0,1], quantize to 8 bits with round-half-away-from-zero.
inline CameraImage sense(const Tensor<double>& intensity,
                         double exposure_scale, double timestamp = 0.0) {
  CameraImage img;
  img.timestamp = timestamp;
  img.pixels = Tensor<std::uint8_t>(intensity.shape());
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    if (intensity[i] < 0.0)
      throw UsageError("sense: negative intensity");
    const double v =
        std::clamp(intensity[i] * exposure_scale, 0.0, 1.0) * 255.0;
    img.pixels[i] = std::uint8_t(std::lround(v));
  }
  return img;
}

// Least-squares inversion of the incoherent pipeline (propagate -> exposure
// -> Lanczos), ignoring quantization: solves (A^T A + lambda I) x = A^T y per
// speckle with lambda = lambda_rel * mean(diag(A^T A)). Serves as the
// learning-free reconstruction baseline.
inline Tensor<double> pseudo_inverse_reconstruct(const TransmissionMatrix& t,
                                                 double exposure_scale,
                                                 const Tensor<double>& speckles,
                                                 double lambda_rel = 1e-3) {
  if (t.config.mode != FiberMode::incoherent)
    throw UnsupportedModeError(
        "pseudo_inverse_reconstruct: coherent media have no real-valued "
        "intensity matrix to invert");
  if (speckles.rank() < 2 || speckles.dim(0) == 0)
    throw DimensionError("pseudo_inverse_reconstruct: expected [N x side x "
                         "side] speckles, got " +
                         shape_to_string(speckles.shape()));
  const std::size_t n = speckles.dim(0);
  const std::size_t s2 = speckles.size() / n;
  const std::size_t side = std::size_t(std::lround(std::sqrt(double(s2))));
  if (side * side != s2)
    throw DimensionError("pseudo_inverse_reconstruct: speckles not square");
  const std::size_t n_in = t.config.n_in;
  const std::size_t cam = t.config.camera_side;

  // forward matrix, one ground-truth pixel at a time
  Tensor<double> a({s2, n_in});
  Tensor<double> col({cam, cam});
  for (std::size_t j = 0; j < n_in; ++j) {
    for (std::size_t i = 0; i < cam * cam; ++i)
      col[i] = exposure_scale * t.re[i * n_in + j];
    Tensor<double> small = detail::lanczos_resample_raw(col, side);
    for (std::size_t i = 0; i < s2; ++i) a(i, j) = small[i];
  }

  Tensor<double> gram({n_in, n_in});
  detail::gemm<double>(true, false, n_in, n_in, s2, a.data(), a.data(),
                       gram.data());
  double diag = 0.0;
  for (std::size_t i = 0; i < n_in; ++i) diag += gram(i, i);
  const double lambda = lambda_rel * diag / double(n_in);
  for (std::size_t i = 0; i < n_in; ++i) gram(i, i) += lambda;

  Tensor<double> rhs({n_in, n});  // A^T Y^T
  detail::gemm<double>(true, true, n_in, n, s2, a.data(), speckles.data(),
                       rhs.data());

  using RMat = detail::EMat<double>;
  Eigen::Map<RMat> g(gram.data(), long(n_in), long(n_in));
  Eigen::Map<RMat> b(rhs.data(), long(n_in), long(n));
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success)
    throw UsageError("pseudo_inverse_reconstruct: normal equations not "
                     "positive definite");
  const Eigen::MatrixXd x = llt.solve(Eigen::MatrixXd(b));

  const std::size_t out_side = std::size_t(std::lround(std::sqrt(double(n_in))));
  Tensor<double> out(out_side * out_side == n_in
                         ? Shape{n, out_side, out_side}
                         : Shape{n, n_in});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n_in; ++j)
      out[i * n_in + j] = std::clamp(x(long(j), long(i)), 0.0, 1.0);
  return out;
}

}  // namespace specknet
