#pragma once

#include <string>

#include "specknet/graph.hpp"
#include "specknet/metrics.hpp"
#include "specknet/ops.hpp"

namespace specknet {

enum class Objective { ssim, mse, xent };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::ssim: return "ssim";
    case Objective::mse: return "mse";
    default: return "xent";
  }
}

inline Objective objective_from_name(const std::string& s) {
  if (s == "ssim") return Objective::ssim;
  if (s == "mse") return Objective::mse;
  if (s == "xent") return Objective::xent;
  throw ConfigError("unknown objective '" + s + "'");
}

// Per-image SSIM of predictions against a fixed target batch, composed from
// primitive graph ops so the whole thing backpropagates. Uses the two-factor
// simplification (2 mu_x mu_y + c1)(2 cov + c2) / ((mu_x^2 + mu_y^2 + c1)
// (var_x + var_y + c2)), which equals the three-factor product when the
// exponents are 1 and c3 = c2/2, and is smooth (no square roots).
// x: [B x P]; target: [B x P]. Returns [B].
template <typename T>
Var ssim_per_image(Graph<T>& g, Var x, const Tensor<T>& target,
                   T c1 = T(1e-4), T c2 = T(9e-4)) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() != 2)
    throw DimensionError("ssim_per_image: need [B,P] predictions, got " +
                         shape_to_string(X.shape()));
  if (!X.same_shape(target))
    throw DimensionError("ssim_per_image: prediction shape " +
                         shape_to_string(X.shape()) + " vs target " +
                         shape_to_string(target.shape()));
  Var y = g.input(target);
  Var mx = row_mean(g, x);
  Var my = row_mean(g, y);
  Var sxx = row_mean(g, mul(g, x, x));
  Var syy = row_mean(g, mul(g, y, y));
  Var sxy = row_mean(g, mul(g, x, y));
  Var vx = sub(g, sxx, mul(g, mx, mx));
  Var vy = sub(g, syy, mul(g, my, my));
  Var cov = sub(g, sxy, mul(g, mx, my));
  Var num = mul(g, affine(g, mul(g, mx, my), T(2), c1),
                affine(g, cov, T(2), c2));
  Var den = mul(g, affine(g, add(g, mul(g, mx, mx), mul(g, my, my)), T(1), c1),
                affine(g, add(g, vx, vy), T(1), c2));
  return div(g, num, den);
}

// 1 - mean per-image SSIM. x: [B x P] in [0,1]; target likewise.
template <typename T>
Var ssim_batch_loss(Graph<T>& g, Var x, const Tensor<T>& target) {
  return affine(g, mean_all(g, ssim_per_image(g, x, target)), T(-1), T(1));
}

// Mean squared error over all elements.
template <typename T>
Var mse_loss(Graph<T>& g, Var x, const Tensor<T>& target) {
  if (!g.value(x).same_shape(target))
    throw DimensionError("mse_loss: prediction shape " +
                         shape_to_string(g.value(x).shape()) + " vs target " +
                         shape_to_string(target.shape()));
  Var d = sub(g, x, g.input(target));
  return mean_all(g, mul(g, d, d));
}

// Mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].
template <typename T>
Var bce_loss(Graph<T>& g, Var x, const Tensor<T>& target) {
  if (!g.value(x).same_shape(target))
    throw DimensionError("bce_loss: prediction shape " +
                         shape_to_string(g.value(x).shape()) + " vs target " +
                         shape_to_string(target.shape()));
  const T eps = T(1e-7);
  Var p = clamp(g, x, eps, T(1) - eps);
  Var t = g.input(target);
  Var omt = affine(g, t, T(-1), T(1));
  Var s = add(g, mul(g, t, log_op(g, p)), mul(g, omt, log1m(g, p)));
  return affine(g, mean_all(g, s), T(-1), T(0));
}

// Dispatch on the configured training objective. Predictions and targets are
// [B x P] with values in [0,1].
template <typename T>
Var reconstruction_loss(Graph<T>& g, Var pred, const Tensor<T>& target,
                        Objective objective) {
  switch (objective) {
    case Objective::ssim: return ssim_batch_loss(g, pred, target);
    case Objective::mse: return mse_loss(g, pred, target);
    default: return bce_loss(g, pred, target);
  }
}

}  // namespace specknet
