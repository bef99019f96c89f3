#pragma once

#include "nact/network.hpp"

namespace nact {

// Orthogonal splitting coefficients for a slope s in [-1, 1]:
// alpha^2 - beta^2 = s and alpha^2 + beta^2 = 1, both nonnegative.
// [[alpha, beta], [beta, -alpha]] is orthogonal, so any row or column
// of it gives a norm-1 linear stage.
struct SlopeCoeffs {
  double alpha = 1.0;
  double beta = 0.0;
};

SlopeCoeffs slope_coeffs(double s);

// Result of checking a compiled network against its source function.
// Bounds: linear stages <= k+5 and activation channels <= ceil(3k/2)+5,
// where k is the source function's non-linearity count. Identity channels
// (theta = (0,0), not abs) are free and not counted.
struct CompileReport {
  int linear_layer_count = 0;
  int n_act_count = 0;
  int abs_act_count = 0;
  double max_abs_error = 0.0;
  int probe_count = 0;
  double max_linear_spectral_norm = 0.0;
  bool counts_pass = false;
  bool spectral_pass = false;
  bool error_pass = false;
  bool pass = false;
};

inline constexpr double kCompileErrTol = 1e-9;
inline constexpr double kSpectralNormTol = 1.0 + 1e-9;

// Exact translation of an increasing function with unit tail slopes into
// k linear stages and k-1 activations (width 2).
Network compile_increasing(const CpwlFunction& f);

// Exact translation of any function with unit tail slopes: repeatedly
// flips the span between the highest maximum and the lowest minimum to
// its right, compiles the flattened function, and undoes each flip with
// one appended activation. k linear stages, k + l - 1 activations for
// 2l extreme points.
Network compile_grad1_tails(const CpwlFunction& f);

// Compiles f restricted to [lo, hi] by extending it with unit slopes
// outside the interval. Exact on [lo, hi]; at most k+2 linear stages and
// 3k/2 + 2 activations.
Network compile_bounded(const CpwlFunction& f, double lo, double hi);

// Fully general translation, exact on the whole real line. Dispatches on
// the two tail slopes: nonnegative tails get a two-sided slope adapter
// composed with a unit-tail compile; nonpositive tails add an input sign
// flip; mixed signs split at the global extreme and finish with an
// absolute-value channel. At most k+5 linear stages and ceil(3k/2)+5
// activation channels, of which at most 3 are absolute values.
Network compile(const CpwlFunction& f);

// Probes net against f on [lo, hi] (breakpoints, midpoints, endpoints,
// dense grid), counts stages and nontrivial activation channels, and
// audits every linear stage's spectral norm.
CompileReport verify_compiled(Network& net, const CpwlFunction& f, double lo,
                              double hi);

// Average slope of a scalar network over the window [x0 - delta/2,
// x0 + delta/2]. For a network whose first linear stage feeds an
// absolute-value channel with input weight w vanishing at x0, this is
// bounded by sqrt(1 - w^2) for every delta, which is how non-universality
// of two-piece activations shows up in measurements.
double long_range_slope(Network& net, double x0, double delta);

}  // namespace nact
