#include <cmath>
#include <random>
#include <string>

#include <doctest.h>

#include "helpers.hpp"
#include "nact/compiler.hpp"

using nact::CompileReport;
using nact::CpwlFunction;
using nact::ErrorCode;
using nact::Network;
using testutil::error_code_of;

namespace {

int count_dense(const Network& net) {
  int n = 0;
  for (const auto& s : net.stages)
    if (std::holds_alternative<nact::DenseParams>(s)) ++n;
  return n;
}

// Nontrivial activation channels, matching the verifier's convention:
// identity lanes (theta = (0,0), not abs) are free.
int count_act_channels(const Network& net) {
  int n = 0;
  for (const auto& s : net.stages) {
    const auto* a = std::get_if<nact::ActStage>(&s);
    if (!a) continue;
    for (int c = 0; c < a->width; ++c) {
      nact::NActParams eff = a->effective(c);
      if (eff.abs_mode || eff.theta1 != 0.0 || eff.theta2 != 0.0) ++n;
    }
  }
  return n;
}

double probe_range(const CpwlFunction& f) {
  double m = 0.0;
  for (double t : f.breakpoints()) m = std::max(m, std::abs(t));
  return m + 10.0;
}

}  // namespace

TEST_SUITE("compiler") {

TEST_CASE("slope_coeffs splits a slope orthogonally") {
  auto one = nact::slope_coeffs(1.0);
  CHECK(one.alpha == 1.0);
  CHECK(one.beta == 0.0);
  auto zero = nact::slope_coeffs(0.0);
  CHECK(zero.alpha == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(zero.beta == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  auto neg = nact::slope_coeffs(-1.0);
  CHECK(neg.alpha == 0.0);
  CHECK(neg.beta == 1.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    double s = u(rng);
    auto c = nact::slope_coeffs(s);
    CHECK(c.alpha >= 0.0);
    CHECK(c.beta >= 0.0);
    CHECK(c.alpha * c.alpha - c.beta * c.beta == doctest::Approx(s).epsilon(1e-14));
    CHECK(c.alpha * c.alpha + c.beta * c.beta ==
          doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(error_code_of([] { nact::slope_coeffs(1.5); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("compile_increasing reproduces a flat-middle ramp") {
  auto f = CpwlFunction::make({0.0, 1.0}, {1.0, 0.0, 1.0}, {0.0, 0.0});
  Network net = nact::compile_increasing(f);
  CHECK(net.eval1(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(net.eval1(2.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(net.eval1(-1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(count_dense(net) == 2);
  CHECK(count_act_channels(net) == 1);
  CHECK(nact::max_abs_diff(f, [&](double x) { return net.eval1(x); }, -11.0,
                           11.0) <= 1e-12);
}

TEST_CASE("compile_increasing on the identity is bias only") {
  auto f = CpwlFunction::make({}, {1.0}, {0.0, 5.0});
  Network net = nact::compile_increasing(f);
  CHECK(net.eval1(3.0) == doctest::Approx(8.0).epsilon(1e-15));
  CHECK(count_act_channels(net) == 0);
}

TEST_CASE("compile_increasing handles many segments exactly") {
  auto f = CpwlFunction::make({-2.0, -1.0, 0.5, 2.0},
                              {1.0, 0.5, 0.25, 0.8, 1.0}, {0.0, 0.3});
  Network net = nact::compile_increasing(f);
  CHECK(count_dense(net) == 4);
  CHECK(count_act_channels(net) == 3);
  CHECK(nact::max_abs_diff(f, [&](double x) { return net.eval1(x); }, -12.0,
                           12.0) <= 1e-12);
}

TEST_CASE("compile_increasing rejects unsuitable slopes") {
  CHECK(error_code_of([] {
          nact::compile_increasing(
              CpwlFunction::make({0.0}, {1.0, 0.5}, {0.0, 0.0}));
        }) == ErrorCode::InvalidArgument);
  CHECK(error_code_of([] {
          nact::compile_increasing(CpwlFunction::make(
              {-1.0, 1.0}, {1.0, -0.5, 1.0}, {0.0, 0.0}));
        }) == ErrorCode::InvalidArgument);
}

TEST_CASE("compile_grad1_tails flattens the zigzag to one activation") {
  auto f = nact::n_function();
  Network net = nact::compile_grad1_tails(f);
  for (double x : {-1e6, -3.0, -0.5, 0.0, 0.25, 0.5, 3.0, 1e6})
    CHECK(std::abs(net.eval1(x) - f.eval(x)) <= 1e-12);
  // The flip of the middle segment merges into a pure line, so a single
  // appended activation suffices.
  CHECK(count_dense(net) == 1);
  CHECK(count_act_channels(net) == 1);
}

TEST_CASE("compile_grad1_tails meets the exact counts on a no-merge instance") {
  // Four breakpoints, four extremes, no slope collisions under flipping.
  auto f = CpwlFunction::make({-1.5, -0.5, 0.5, 1.5},
                              {1.0, -0.5, 0.6, -0.7, 1.0}, {0.0, 0.0});
  REQUIRE(nact::extremes(f).size() == 4);
  Network net = nact::compile_grad1_tails(f);
  CompileReport rep = nact::verify_compiled(net, f, -11.5, 11.5);
  CHECK(rep.pass);
  CHECK(rep.max_abs_error <= 1e-12);
  // k linear stages, k + l - 1 activations.
  CHECK(rep.linear_layer_count == 4);
  CHECK(rep.n_act_count == 5);
  CHECK(rep.abs_act_count == 0);
}

TEST_CASE("compile_grad1_tails delegates for monotone input") {
  auto f = CpwlFunction::make({0.0}, {1.0, 0.25}, {0.0, 0.0});
  // Not unit right tail: rejected, same as compile_increasing.
  CHECK(error_code_of([&] { nact::compile_grad1_tails(f); }) ==
        ErrorCode::InvalidArgument);
  auto g = CpwlFunction::make({-1.0, 1.0}, {1.0, 0.25, 1.0}, {0.0, 0.0});
  Network inc = nact::compile_increasing(g);
  Network via = nact::compile_grad1_tails(g);
  for (double x = -4.0; x <= 4.0; x += 0.21)
    CHECK(via.eval1(x) == doctest::Approx(inc.eval1(x)).epsilon(1e-14));
}

TEST_CASE("compile_bounded pins the zigzag on an interval") {
  auto f = nact::n_function();
  Network net = nact::compile_bounded(f, -3.0, 3.0);
  CHECK(nact::max_abs_diff(f, [&](double x) { return net.eval1(x); }, -3.0,
                           3.0) <= 1e-12);
  // After the flip construction collapses, exactly one nontrivial
  // activation remains and it is the zigzag's own threshold pair.
  CHECK(count_act_channels(net) == 1);
  bool found = false;
  for (const auto& s : net.stages) {
    const auto* a = std::get_if<nact::ActStage>(&s);
    if (!a) continue;
    for (int c = 0; c < a->width; ++c) {
      nact::NActParams eff = a->effective(c);
      if (eff.theta1 == 0.0 && eff.theta2 == 0.0 && !eff.abs_mode) continue;
      CHECK(eff.theta1 == doctest::Approx(-0.5).epsilon(1e-12));
      CHECK(eff.theta2 == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(!eff.abs_mode);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("compile_bounded extends flat functions with unit tails") {
  auto f = CpwlFunction::make({}, {0.5}, {0.0, 0.0});
  Network net = nact::compile_bounded(f, 0.0, 1.0);
  CHECK(nact::max_abs_diff(f, [&](double x) { return net.eval1(x); }, 0.0,
                           1.0) <= 1e-12);
  // Outside the interval the compiled function continues with slope 1.
  CHECK(net.eval1(3.0) - net.eval1(2.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(net.eval1(-2.0) - net.eval1(-3.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("compile_bounded rejects breakpoints outside the interval") {
  CHECK(error_code_of([] {
          nact::compile_bounded(nact::n_function(), 0.0, 3.0);
        }) == ErrorCode::InvalidArgument);
  CHECK(error_code_of([] {
          nact::compile_bounded(nact::n_function(), 3.0, -3.0);
        }) == ErrorCode::InvalidArgument);
}

TEST_CASE("compile_bounded random instances respect the corollary counts") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    auto f = nact::random_cpwl(10, -4.0, 4.0, rng);
    const int k = f.nonlinearity_count();
    Network net = nact::compile_bounded(f, -4.0, 4.0);
    CHECK(nact::max_abs_diff(f, [&](double x) { return net.eval1(x); }, -4.0,
                             4.0) <= 1e-9);
    CHECK(count_dense(net) <= k + 2);
    CHECK(count_act_channels(net) <= (3 * k) / 2 + 2);
  }
}

TEST_CASE("compile handles the zigzag exactly out to a million") {
  auto f = nact::n_function();
  Network net = nact::compile(f);
  for (double x : {-1e6, -3.0, -0.5, 0.0, 0.25, 0.5, 3.0, 1e6})
    CHECK(std::abs(net.eval1(x) - f.eval(x)) <= 1e-12);
  CompileReport rep = nact::verify_compiled(net, f, -10.5, 10.5);
  CHECK(rep.pass);
  CHECK(rep.max_abs_error <= 1e-12);
}

TEST_CASE("compile covers the mixed-tails example within its bounds") {
  auto f = CpwlFunction::make(
      {-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0},
      {0.3, -0.8, 0.5, -0.2, 0.9, -0.5, 0.1, -0.7}, {0.0, 0.25});
  REQUIRE(f.nonlinearity_count() == 7);
  Network net = nact::compile(f);
  CompileReport rep = nact::verify_compiled(net, f, -13.0, 13.0);
  CHECK(rep.pass);
  CHECK(rep.max_abs_error <= 1e-9);
  CHECK(rep.linear_layer_count <= 12);
  CHECK(rep.n_act_count + rep.abs_act_count <= 15);
  CHECK(rep.abs_act_count <= 3);
}

TEST_CASE("compile covers each tail-sign case") {
  // Both tails negative: reflected problem.
  auto down = CpwlFunction::make({-1.0, 1.0}, {-1.0, -0.3, -1.0}, {0.0, 0.0});
  Network dn = nact::compile(down);
  CHECK(nact::max_abs_diff(down, [&](double x) { return dn.eval1(x); }, -11.0,
                           11.0) <= 1e-9);

  // Absolute value: mixed, falling then rising.
  auto vee = CpwlFunction::make({0.0}, {-1.0, 1.0}, {0.0, 0.0});
  Network nv = nact::compile(vee);
  CHECK(std::abs(nv.eval1(-5.0) - 5.0) <= 1e-12);
  CHECK(std::abs(nv.eval1(5.0) - 5.0) <= 1e-12);
  CHECK(std::abs(nv.eval1(0.0)) <= 1e-12);
  CHECK(std::abs(nv.eval1(0.3) - 0.3) <= 1e-12);

  // Negated absolute value: mixed, rising then falling.
  auto hat = CpwlFunction::make({0.0}, {1.0, -1.0}, {0.0, 0.0});
  Network nh = nact::compile(hat);
  CHECK(nact::max_abs_diff(hat, [&](double x) { return nh.eval1(x); }, -11.0,
                           11.0) <= 1e-12);

  // Plateau at the global maximum of a mixed function.
  auto plat = CpwlFunction::make({0.0, 1.0}, {1.0, 0.0, -1.0}, {0.0, 0.0});
  Network np = nact::compile(plat);
  CHECK(nact::max_abs_diff(plat, [&](double x) { return np.eval1(x); }, -11.0,
                           11.0) <= 1e-9);

  // Gentle positive tails needing the slope adapter.
  auto gentle = CpwlFunction::make({0.5}, {0.2, 0.9}, {0.0, 0.0});
  Network ng = nact::compile(gentle);
  CHECK(nact::max_abs_diff(gentle, [&](double x) { return ng.eval1(x); },
                           -10.5, 10.5) <= 1e-9);
}

TEST_CASE("compile of a linear function is a single stage") {
  auto f = CpwlFunction::make({}, {-1.0}, {1.0, 2.0});
  Network net = nact::compile(f);
  CHECK(count_dense(net) == 1);
  CHECK(count_act_channels(net) == 0);
  CHECK(net.eval1(5.0) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(net.eval1(-1.0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("compile is deterministic") {
  std::mt19937_64 rng(11);
  auto f = nact::random_cpwl(9, -5.0, 5.0, rng);
  Network a = nact::compile(f);
  Network b = nact::compile(f);
  CHECK(nact::network_to_json(a) == nact::network_to_json(b));
}

TEST_CASE("random corpus compiles and verifies") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 40; ++t) {
    int k = static_cast<int>(rng() % 13);
    auto f = nact::random_cpwl(k, -5.0, 5.0, rng);
    Network net = nact::compile(f);
    double r = probe_range(f);
    CompileReport rep = nact::verify_compiled(net, f, -r, r);
    CAPTURE(t);
    CAPTURE(k);
    CAPTURE(rep.max_abs_error);
    CHECK(rep.pass);
    CHECK(rep.abs_act_count <= 3);
  }
}

TEST_CASE("verify_compiled flags a corrupted bias") {
  auto f = nact::n_function();
  Network net = nact::compile(f);
  for (auto& s : net.stages) {
    if (auto* d = std::get_if<nact::DenseParams>(&s)) {
      d->b(0) += 1e-6;
      break;
    }
  }
  CompileReport rep = nact::verify_compiled(net, f, -10.5, 10.5);
  CHECK(!rep.error_pass);
  CHECK(!rep.pass);
  // A shifted input to a unit-slope chain moves the output by the shift.
  CHECK(rep.max_abs_error == doctest::Approx(1e-6).epsilon(1e-3));
}

TEST_CASE("verify_compiled flags stage-count violations") {
  auto f = CpwlFunction::make({}, {1.0}, {0.0, 0.0});
  Network net;
  net.in_dim = 1;
  for (int i = 0; i < 7; ++i) {
    nact::DenseParams d;
    d.kind = nact::LayerKind::UnconstrainedLinear;
    d.P = Eigen::MatrixXd::Identity(1, 1);
    d.b = Eigen::VectorXd::Zero(1);
    net.stages.push_back(d);
  }
  CompileReport rep = nact::verify_compiled(net, f, -1.0, 1.0);
  CHECK(rep.max_abs_error == 0.0);
  CHECK(rep.spectral_pass);
  CHECK(!rep.counts_pass);
  CHECK(!rep.pass);
}

TEST_CASE("verify_compiled flags inflated spectral norms") {
  auto f = CpwlFunction::make({}, {1.0}, {0.0, 0.0});
  Network net;
  net.in_dim = 1;
  nact::DenseParams d1;
  d1.kind = nact::LayerKind::UnconstrainedLinear;
  d1.P = Eigen::MatrixXd::Identity(1, 1) * 2.0;
  d1.b = Eigen::VectorXd::Zero(1);
  nact::DenseParams d2 = d1;
  d2.P = Eigen::MatrixXd::Identity(1, 1) * 0.5;
  net.stages.push_back(d1);
  net.stages.push_back(d2);
  CompileReport rep = nact::verify_compiled(net, f, -1.0, 1.0);
  CHECK(rep.error_pass);
  CHECK(rep.max_linear_spectral_norm == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(!rep.spectral_pass);
  CHECK(!rep.pass);
}

TEST_CASE("long_range_slope is capped by an early absolute channel") {
  // f(x) = a^2 x + |t| * |t (x - x0)| built as one width-2 sandwich with an
  // absolute-value lane whose input weight is t.
  for (double t : {0.3, 0.6, 0.9}) {
    const double a = std::sqrt(1.0 - t * t);
    const double x0 = 0.7;
    Network net;
    net.in_dim = 1;
    nact::DenseParams col;
    col.kind = nact::LayerKind::UnconstrainedLinear;
    col.P = Eigen::MatrixXd(2, 1);
    col.P << a, t;
    col.b = Eigen::VectorXd(2);
    col.b << 0.0, -t * x0;
    net.stages.push_back(col);
    nact::ActStage abs_lane;
    abs_lane.kind = nact::ActKind::NAct;
    abs_lane.width = 2;
    abs_lane.phi = {{0.0, 0.0, false}, {0.0, 0.0, true}};
    net.stages.push_back(abs_lane);
    nact::DenseParams row;
    row.kind = nact::LayerKind::UnconstrainedLinear;
    row.P = Eigen::MatrixXd(1, 2);
    row.P << a, t;
    row.b = Eigen::VectorXd::Zero(1);
    net.stages.push_back(row);

    for (double delta : {0.1, 1.0, 10.0}) {
      double slope = nact::long_range_slope(net, x0, delta);
      CHECK(slope <= std::sqrt(1.0 - t * t) + 1e-12);
      CHECK(slope == doctest::Approx(1.0 - t * t).epsilon(1e-10));
    }
  }

  // An identity network averages to slope 1 over any window.
  Network id;
  id.in_dim = 1;
  nact::DenseParams d;
  d.kind = nact::LayerKind::UnconstrainedLinear;
  d.P = Eigen::MatrixXd::Identity(1, 1);
  d.b = Eigen::VectorXd::Zero(1);
  id.stages.push_back(d);
  CHECK(nact::long_range_slope(id, 0.0, 2.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

}  // TEST_SUITE
