#pragma once

// Central finite-difference oracle for gradient checks. Independent of the
// tape's backward pass: it only re-runs forward builds at perturbed inputs.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "specknet/graph.hpp"
#include "specknet/tensor.hpp"

namespace testutil {

using specknet::Graph;
using specknet::Tensor;
using specknet::Var;

// Builds a scalar loss from parameter Vars; called freshly per evaluation, so
// any internal randomness must be re-seeded identically inside the builder.
using LossBuilder =
    std::function<Var(Graph<double>&, const std::vector<Var>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

inline double forward_value(std::vector<Tensor<double>>& params,
                            const LossBuilder& build) {
  Graph<double> g;
  std::vector<Tensor<double>> sinks;
  sinks.reserve(params.size());
  for (auto& p : params) sinks.emplace_back(p.shape());
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    vars.push_back(g.param(params[i], sinks[i]));
  Var loss = build(g, vars);
  return g.value(loss)[0];
}

// Compares the tape's analytic gradient against central finite differences
// for every coordinate of every parameter tensor. Relative error uses
// |a - f| / max(1, |a|, |f|).
inline GradCheckReport grad_check(std::vector<Tensor<double>> params,
                                  const LossBuilder& build,
                                  double h = 1e-6) {
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.shape());
  {
    Graph<double> g;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      vars.push_back(g.param(params[i], analytic[i]));
    Var loss = build(g, vars);
    g.backward(loss);
  }

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double keep = params[pi][i];
      params[pi][i] = keep + h;
      const double up = forward_value(params, build);
      params[pi][i] = keep - h;
      const double dn = forward_value(params, build);
      params[pi][i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic[pi][i];
      const double rel =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = pi;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

}  // namespace testutil
