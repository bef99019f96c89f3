#pragma once

#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nact {

enum class ErrorCode {
  InvalidArgument,
  Io,
  Parse,
  Diverged,
  CheckFailed,
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// A scalar 1-Lipschitz continuous piecewise-linear function, stored as
/// strictly increasing breakpoints t_1 < ... < t_k, one slope per segment
/// (slopes[i] is the slope left of t_{i+1}, slopes[k] the slope after t_k,
/// every |s| <= 1, adjacent slopes distinct), and one anchor (x0, f(x0))
/// fixing the additive constant.
class CpwlFunction {
 public:
  /// Validates and canonicalizes: rejects non-finite input, unsorted
  /// breakpoints, |slope| > 1 or a length mismatch; merges adjacent slopes
  /// that agree to within 1e-12 (dropping the breakpoint between them).
  static CpwlFunction make(std::vector<double> breakpoints,
                           std::vector<double> slopes,
                           std::pair<double, double> anchor);

  double eval(double x) const;

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& slopes() const { return slopes_; }
  std::pair<double, double> anchor() const { return anchor_; }
  /// f evaluated at each breakpoint (precomputed, exact accumulation).
  const std::vector<double>& breakpoint_values() const { return values_; }
  int nonlinearity_count() const { return static_cast<int>(breakpoints_.size()); }

 private:
  CpwlFunction() = default;
  std::vector<double> breakpoints_;
  std::vector<double> slopes_;
  std::pair<double, double> anchor_{0.0, 0.0};
  std::vector<double> values_;
};

struct Extreme {
  double x;
  bool is_max;
};

/// The N-function: breakpoints [-1/2, 1/2], slopes [1, -1, 1], anchor (0, 0).
CpwlFunction n_function();

/// Local extreme points, in increasing x. An extremum sits at the breakpoint
/// where the nearest nonzero slopes change sign; a plateau between a positive
/// and a negative slope counts once, at the plateau's left edge (and
/// symmetrically for minima). Flat segments between same-sign slopes are not
/// extremes.
std::vector<Extreme> extremes(const CpwlFunction& f);

/// max |f(x) - g(x)| over a probe set: lo, hi, every breakpoint of f inside
/// [lo, hi], all segment midpoints, and a uniform grid of >= 1000 points.
/// When both functions are piecewise linear and f's breakpoints are probed,
/// this equals the true sup-norm. Throws ErrorCode::CheckFailed if g
/// produces a non-finite value. probe_count, when given, receives the
/// number of points evaluated.
double max_abs_diff(const CpwlFunction& f,
                    const std::function<double(double)>& g, double lo,
                    double hi, int* probe_count = nullptr);

/// Seeded generator: k distinct sorted breakpoints uniform in [lo, hi],
/// k+1 slopes uniform in [-1, 1] with adjacent slopes forced distinct,
/// anchor ((lo+hi)/2, uniform in [-1, 1]). Slopes are resampled while
/// |s| < 1e-3: near-zero tail slopes push compiled-network bias magnitudes
/// toward 1/|s|, which eats the verification error budget.
CpwlFunction random_cpwl(int k, double lo, double hi, std::mt19937_64& rng);

/// Parse/serialize {"breakpoints":[...], "slopes":[...], "anchor":[x0,y0]}.
CpwlFunction cpwl_from_json(const std::string& text);
std::string cpwl_to_json(const CpwlFunction& f);

}  // namespace nact
