#include "nact/activations.hpp"

#include <algorithm>
#include <cmath>

namespace nact {

double n_act(double x, const NActParams& p) {
  if (p.abs_mode) return std::abs(x - p.theta2) - p.theta2;
  const double tmin = std::min(p.theta1, p.theta2);
  const double tmax = std::max(p.theta1, p.theta2);
  if (x < tmin) return x - 2.0 * tmin;
  if (x < tmax) return -x;
  return x - 2.0 * tmax;
}

NActGrad n_act_grad(double x, const NActParams& p) {
  if (p.abs_mode) {
    // |x - t2| - t2; right branch at the kink x == t2.
    if (x >= p.theta2) return {1.0, 0.0, -2.0};
    return {-1.0, 0.0, 0.0};
  }
  const bool theta1_is_min = p.theta1 <= p.theta2;
  const double tmin = theta1_is_min ? p.theta1 : p.theta2;
  const double tmax = theta1_is_min ? p.theta2 : p.theta1;
  if (x >= tmax) {
    return theta1_is_min ? NActGrad{1.0, 0.0, -2.0} : NActGrad{1.0, -2.0, 0.0};
  }
  if (x >= tmin) return {-1.0, 0.0, 0.0};
  return theta1_is_min ? NActGrad{1.0, -2.0, 0.0} : NActGrad{1.0, 0.0, -2.0};
}

std::pair<double, double> maxmin(double x, double y) {
  return {std::max(x, y), std::min(x, y)};
}

std::pair<double, double> maxmin_as_abs_identity(double x, double y) {
  const double r = 1.0 / std::sqrt(2.0);
  const double u = r * (x + y);
  const double v = r * (x - y);
  const double w = std::abs(v);
  return {r * (u + w), r * (u - w)};
}

double scalar_act(ActKind kind, double x) {
  switch (kind) {
    case ActKind::Abs:
      return std::abs(x);
    case ActKind::ReLU:
      return x > 0.0 ? x : 0.0;
    default:
      return x;
  }
}

double scalar_act_grad(ActKind kind, double x) {
  switch (kind) {
    case ActKind::Abs:
      return x >= 0.0 ? 1.0 : -1.0;
    case ActKind::ReLU:
      return x >= 0.0 ? 1.0 : 0.0;
    default:
      return 1.0;
  }
}

}  // namespace nact
