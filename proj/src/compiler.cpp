#include "nact/compiler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nact {
namespace {

void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

ActStage identity_abs_pair() {
  ActStage a;
  a.kind = ActKind::NAct;
  a.width = 2;
  a.phi = {{0.0, 0.0, false}, {0.0, 0.0, true}};
  return a;
}

ActStage identity_nact_pair(double theta1, double theta2) {
  ActStage a;
  a.kind = ActKind::NAct;
  a.width = 2;
  a.phi = {{0.0, 0.0, false}, {theta1, theta2, false}};
  return a;
}

ActStage scalar_nact(double theta1, double theta2, bool abs_mode) {
  ActStage a;
  a.kind = ActKind::NAct;
  a.width = 1;
  a.phi = {{theta1, theta2, abs_mode}};
  return a;
}

// Appends a linear stage, merging with a trailing linear stage when
// possible so adjacent matrix pairs become single layers.
void append_linear(Network& net, const Eigen::MatrixXd& P,
                   const Eigen::VectorXd& b) {
  if (!net.stages.empty()) {
    if (auto* d = std::get_if<DenseParams>(&net.stages.back())) {
      d->P = (P * d->P).eval();
      d->b = (P * d->b + b).eval();
      return;
    }
  }
  DenseParams d;
  d.kind = LayerKind::UnconstrainedLinear;
  d.P = P;
  d.b = b;
  net.stages.emplace_back(std::move(d));
}

void append_stages(Network& net, Network&& sub) {
  for (auto& s : sub.stages) {
    if (auto* d = std::get_if<DenseParams>(&s)) {
      append_linear(net, d->P, d->b);
    } else {
      net.stages.emplace_back(std::move(s));
    }
  }
}

Eigen::MatrixXd col2(double a, double b) {
  Eigen::MatrixXd m(2, 1);
  m << a, b;
  return m;
}

Eigen::MatrixXd row2(double a, double b) {
  Eigen::MatrixXd m(1, 2);
  m << a, b;
  return m;
}

Eigen::MatrixXd scalar1(double a) {
  Eigen::MatrixXd m(1, 1);
  m << a;
  return m;
}

Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

Network compile_linear(const CpwlFunction& f) {
  Network net;
  net.in_dim = 1;
  append_linear(net, scalar1(f.slopes()[0]), vec1(f.eval(0.0)));
  return net;
}

CpwlFunction reflect(const CpwlFunction& f) {
  const auto& bp = f.breakpoints();
  const auto& sl = f.slopes();
  std::vector<double> rbp(bp.size()), rsl(sl.size());
  for (size_t i = 0; i < bp.size(); ++i) rbp[i] = -bp[bp.size() - 1 - i];
  for (size_t i = 0; i < sl.size(); ++i) rsl[i] = -sl[sl.size() - 1 - i];
  return CpwlFunction::make(rbp, rsl, {-bp.back(), f.breakpoint_values().back()});
}

void negate_first_linear(Network& net) {
  require(!net.stages.empty(), ErrorCode::Internal,
          "cannot flip the input of an empty network");
  auto* d = std::get_if<DenseParams>(&net.stages.front());
  require(d != nullptr, ErrorCode::Internal,
          "compiled network must start with a linear stage");
  d->P = -d->P;
}

// Handles tails with slopes in [0, 1]: extends f to unit slopes outside
// [v_s, v_t] (v_s at the breakpoint-minimum level before the first kink,
// v_t at the breakpoint-maximum level after the last one), compiles the
// extension, and warps the input with a two-bend adapter so the
// composition reproduces f's original tail slopes.
Network compile_nonneg_tails(const CpwlFunction& f) {
  const auto& bp = f.breakpoints();
  const auto& sl = f.slopes();
  const auto& fv = f.breakpoint_values();
  const size_t k = bp.size();
  if (k == 0) return compile_linear(f);
  const double ss = sl.front();
  const double st = sl.back();
  require(ss >= 0.0 && st >= 0.0, ErrorCode::Internal,
          "tail adapter needs nonnegative tail slopes");

  const double minv = *std::min_element(fv.begin(), fv.end());
  const double maxv = *std::max_element(fv.begin(), fv.end());

  std::vector<double> gbp(bp.begin(), bp.end());
  std::vector<double> gsl(sl.begin(), sl.end());
  double vs = bp.front();
  double vt = bp.back();
  if (ss < 1.0) {
    if (ss > 0.0) vs = bp.front() - (fv.front() - minv) / ss;
    if (vs < bp.front()) {
      gbp.insert(gbp.begin(), vs);
      gsl.insert(gsl.begin(), 1.0);
    } else {
      gsl.front() = 1.0;
    }
  }
  if (st < 1.0) {
    if (st > 0.0) vt = bp.back() + (maxv - fv.back()) / st;
    if (vt > bp.back()) {
      gbp.push_back(vt);
      gsl.push_back(1.0);
    } else {
      gsl.back() = 1.0;
    }
  }
  CpwlFunction g = CpwlFunction::make(gbp, gsl, {bp.front(), fv.front()});

  Network net;
  net.in_dim = 1;
  if (st < 1.0) {
    SlopeCoeffs c = slope_coeffs(st);
    append_linear(net, col2(c.alpha, c.beta), vec2(0.0, -c.beta * vt));
    net.stages.emplace_back(identity_abs_pair());
    append_linear(net, row2(c.alpha, -c.beta), vec1(c.beta * c.beta * vt));
  }
  if (ss < 1.0) {
    SlopeCoeffs c = slope_coeffs(ss);
    append_linear(net, col2(c.alpha, c.beta), vec2(0.0, -c.beta * vs));
    net.stages.emplace_back(identity_abs_pair());
    append_linear(net, row2(c.alpha, c.beta), vec1(c.beta * c.beta * vs));
  }
  append_stages(net, compile_grad1_tails(g));
  return net;
}

}  // namespace

SlopeCoeffs slope_coeffs(double s) {
  require(std::isfinite(s) && std::abs(s) <= 1.0, ErrorCode::InvalidArgument,
          "slope must lie in [-1, 1]");
  return {std::sqrt((1.0 + s) / 2.0), std::sqrt((1.0 - s) / 2.0)};
}

Network compile_increasing(const CpwlFunction& f) {
  const auto& bp = f.breakpoints();
  const auto& sl = f.slopes();
  const auto& fv = f.breakpoint_values();
  for (double s : sl)
    require(s >= 0.0, ErrorCode::InvalidArgument,
            "increasing compile needs nonnegative slopes");
  require(sl.front() == 1.0 && sl.back() == 1.0, ErrorCode::InvalidArgument,
          "increasing compile needs unit tail slopes");
  const size_t k = bp.size();
  if (k == 0) return compile_linear(f);
  require(k >= 2, ErrorCode::Internal,
          "a single kink cannot join two unit-slope tails");

  // Stage j straightens the segment of slope sl[j]: split the running
  // value into (alpha x, beta x), bend the second lane between the scaled
  // segment ends, and recombine. The recombine bias keeps the invariant
  // that the partial network is the identity right of the segment, so the
  // next stage's thresholds need no shifting.
  Network net;
  net.in_dim = 1;
  for (size_t j = 1; j <= k - 1; ++j) {
    SlopeCoeffs c = slope_coeffs(sl[j]);
    append_linear(net, col2(c.alpha, c.beta), vec2(0.0, 0.0));
    net.stages.emplace_back(
        identity_nact_pair(c.beta * bp[j - 1], c.beta * bp[j]));
    append_linear(net, row2(c.alpha, c.beta),
                  vec1(2.0 * c.beta * c.beta * bp[j]));
  }
  auto& last = std::get<DenseParams>(net.stages.back());
  last.b[0] += fv.back() - bp.back();
  return net;
}

Network compile_grad1_tails(const CpwlFunction& f) {
  const auto& sl = f.slopes();
  require(sl.front() == 1.0 && sl.back() == 1.0, ErrorCode::InvalidArgument,
          "compile needs unit tail slopes");
  std::vector<Extreme> ex = extremes(f);
  if (ex.empty()) return compile_increasing(f);
  require(ex.size() % 2 == 0, ErrorCode::Internal,
          "unit-tail function must have an even number of extreme points");

  // Highest maximum (leftmost on ties), then the lowest minimum to its
  // right (leftmost on ties).
  double ks = 0.0, ks_val = -std::numeric_limits<double>::infinity();
  bool have_ks = false;
  for (const Extreme& e : ex) {
    if (!e.is_max) continue;
    double v = f.eval(e.x);
    if (!have_ks || v > ks_val) {
      ks = e.x;
      ks_val = v;
      have_ks = true;
    }
  }
  double kt = 0.0, kt_val = std::numeric_limits<double>::infinity();
  bool have_kt = false;
  for (const Extreme& e : ex) {
    if (e.is_max || e.x <= ks) continue;
    double v = f.eval(e.x);
    if (!have_kt || v < kt_val) {
      kt = e.x;
      kt_val = v;
      have_kt = true;
    }
  }
  require(have_ks && have_kt, ErrorCode::Internal,
          "extreme pair selection failed");

  const auto& bp = f.breakpoints();
  auto find_index = [&](double x) {
    auto it = std::lower_bound(bp.begin(), bp.end(), x);
    require(it != bp.end() && *it == x, ErrorCode::Internal,
            "extreme point is not a breakpoint");
    return static_cast<size_t>(it - bp.begin());
  };
  const size_t is = find_index(ks);
  const size_t it = find_index(kt);

  // g flips f between ks and kt; the two extremes there cancel, and one
  // activation with thresholds (g(ks), g(kt)) undoes the flip exactly.
  std::vector<double> gsl(sl.begin(), sl.end());
  for (size_t j = is + 1; j <= it; ++j) gsl[j] = -gsl[j];
  CpwlFunction g = CpwlFunction::make(bp, gsl, {ks, -ks_val});
  require(extremes(g).size() == ex.size() - 2, ErrorCode::Internal,
          "flip did not remove exactly two extreme points");

  Network net = compile_grad1_tails(g);
  net.stages.emplace_back(scalar_nact(g.eval(ks), g.eval(kt), false));
  return net;
}

Network compile_bounded(const CpwlFunction& f, double lo, double hi) {
  require(lo < hi, ErrorCode::InvalidArgument, "need lo < hi");
  const auto& bp = f.breakpoints();
  require(bp.empty() || (bp.front() > lo && bp.back() < hi),
          ErrorCode::InvalidArgument,
          "breakpoints must lie strictly inside the interval");
  std::vector<double> gbp;
  gbp.push_back(lo);
  gbp.insert(gbp.end(), bp.begin(), bp.end());
  gbp.push_back(hi);
  std::vector<double> gsl;
  gsl.push_back(1.0);
  gsl.insert(gsl.end(), f.slopes().begin(), f.slopes().end());
  gsl.push_back(1.0);
  CpwlFunction g = CpwlFunction::make(gbp, gsl, {lo, f.eval(lo)});
  return compile_grad1_tails(g);
}

Network compile(const CpwlFunction& f) {
  const auto& sl = f.slopes();
  if (f.breakpoints().empty()) return compile_linear(f);
  const double ss = sl.front();
  const double st = sl.back();

  if (ss >= 0.0 && st >= 0.0) return compile_nonneg_tails(f);
  if (ss <= 0.0 && st <= 0.0) {
    Network net = compile_nonneg_tails(reflect(f));
    negate_first_linear(net);
    return net;
  }

  // One tail falls and the other rises, so f has a global extreme at a
  // breakpoint. Negate the slopes on the falling side of it: the result g
  // has rising tails and |g| = |f - extreme| everywhere, so one
  // absolute-value channel and an affine output stage recover f.
  const auto& bp = f.breakpoints();
  const auto& fv = f.breakpoint_values();
  std::vector<double> gsl(sl.begin(), sl.end());
  Network net;
  if (ss < 0.0) {
    size_t vm = static_cast<size_t>(
        std::min_element(fv.begin(), fv.end()) - fv.begin());
    for (size_t j = 0; j <= vm; ++j) gsl[j] = -gsl[j];
    CpwlFunction g = CpwlFunction::make(bp, gsl, {bp[vm], 0.0});
    net = compile_nonneg_tails(g);
    net.stages.emplace_back(scalar_nact(0.0, 0.0, true));
    append_linear(net, scalar1(1.0), vec1(fv[vm]));
  } else {
    size_t vm = static_cast<size_t>(
        std::max_element(fv.begin(), fv.end()) - fv.begin());
    for (size_t j = vm + 1; j < gsl.size(); ++j) gsl[j] = -gsl[j];
    CpwlFunction g = CpwlFunction::make(bp, gsl, {bp[vm], 0.0});
    net = compile_nonneg_tails(g);
    net.stages.emplace_back(scalar_nact(0.0, 0.0, true));
    append_linear(net, scalar1(-1.0), vec1(fv[vm]));
  }
  return net;
}

CompileReport verify_compiled(Network& net, const CpwlFunction& f, double lo,
                              double hi) {
  CompileReport r;
  for (const auto& s : net.stages) {
    if (const auto* d = std::get_if<DenseParams>(&s)) {
      r.linear_layer_count++;
      PowerIterState pi;
      pi.iters = 500;
      pi.tol = 1e-13;
      double sn = spectral_norm(d->P, pi);
      r.max_linear_spectral_norm = std::max(r.max_linear_spectral_norm, sn);
    } else {
      const auto& a = std::get<ActStage>(s);
      if (a.kind != ActKind::NAct) continue;
      for (int c = 0; c < a.width; ++c) {
        NActParams p = a.effective(c);
        if (p.abs_mode) {
          r.abs_act_count++;
        } else if (p.theta1 != 0.0 || p.theta2 != 0.0) {
          r.n_act_count++;
        }
      }
    }
  }
  r.max_abs_error = max_abs_diff(
      f, [&](double x) { return net.eval1(x); }, lo, hi, &r.probe_count);
  const int k = f.nonlinearity_count();
  const int act_bound = (3 * k + 1) / 2 + 5;
  r.counts_pass = r.linear_layer_count <= k + 5 &&
                  r.n_act_count + r.abs_act_count <= act_bound;
  r.spectral_pass = r.max_linear_spectral_norm <= kSpectralNormTol;
  r.error_pass = r.max_abs_error <= kCompileErrTol;
  r.pass = r.counts_pass && r.spectral_pass && r.error_pass;
  return r;
}

double long_range_slope(Network& net, double x0, double delta) {
  require(delta > 0.0, ErrorCode::InvalidArgument, "window must be positive");
  return std::abs(net.eval1(x0 + delta / 2.0) - net.eval1(x0 - delta / 2.0)) /
         delta;
}

}  // namespace nact
