#pragma once

#include <utility>

namespace nact {

/// Parameters of the N-activation. abs_mode stands in for theta1 = -infinity,
/// turning the activation into the exact map |x - theta2| - theta2 (absolute
/// value when theta2 = 0); it is what compiled networks use on unbounded
/// inputs. Without abs_mode the activation is
///   x - 2*theta_min  for x <= theta_min,
///   -x               for theta_min <= x <= theta_max,
///   x - 2*theta_max  for x >= theta_max,
/// with theta_min = min(theta1, theta2), theta_max = max(theta1, theta2).
/// theta1 = theta2 = 0 gives the identity.
struct NActParams {
  double theta1 = 0.0;
  double theta2 = 0.0;
  bool abs_mode = false;
};

enum class ActKind { NAct, MaxMin, Abs, ReLU, Identity };

double n_act(double x, const NActParams& p);

struct NActGrad {
  double d_x;
  double d_theta1;
  double d_theta2;
};

/// Branchwise derivatives. At a kink the right branch is returned. When
/// theta1 == theta2 the gradient routing ties break with theta1 owning
/// theta_min and theta2 owning theta_max. In abs_mode d_theta1 is always 0.
NActGrad n_act_grad(double x, const NActParams& p);

std::pair<double, double> maxmin(double x, double y);

/// MaxMin computed as M * sigma(M * (x, y)) with M = (1/sqrt(2))[[1,1],[1,-1]]
/// and sigma = (identity, abs); equals maxmin up to float rounding.
std::pair<double, double> maxmin_as_abs_identity(double x, double y);

/// Scalar map for Abs, ReLU, or Identity.
double scalar_act(ActKind kind, double x);
/// Derivative with the right-branch convention at 0 (Abs'(0)=1, ReLU'(0)=1).
double scalar_act_grad(ActKind kind, double x);

}  // namespace nact
