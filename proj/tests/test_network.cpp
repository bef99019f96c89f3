#include <Eigen/Dense>
#include <cmath>
#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "nact/network.hpp"

using nact::ActKind;
using nact::ActStage;
using nact::DenseParams;
using nact::ErrorCode;
using nact::LayerKind;
using nact::NActParams;
using nact::Network;
using testutil::error_code_of;

namespace {

DenseParams dense(LayerKind kind, Eigen::MatrixXd P) {
  DenseParams d;
  d.kind = kind;
  d.b = Eigen::VectorXd::Zero(P.rows());
  d.P = std::move(P);
  return d;
}

ActStage act_stage(ActKind kind, int width) {
  ActStage a;
  a.kind = kind;
  a.width = width;
  if (kind == ActKind::NAct) a.phi.assign(width, NActParams{});
  return a;
}

Eigen::MatrixXd gaussian(int r, int c, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * g(rng);
  return m;
}

// A width-n stack exercising every stage kind that keeps its width.
Network mixed_net(int n, std::mt19937_64& rng) {
  Network net;
  net.in_dim = n;
  net.stages.push_back(dense(LayerKind::AOL, gaussian(n, n, rng, 0.8)));
  ActStage na = act_stage(ActKind::NAct, n);
  na.param_scale = 0.1;
  for (int c = 0; c < n; ++c)
    na.phi[c] = {-(1.0 + c), 0.5 * c, (c % 3) == 2};
  net.stages.push_back(na);
  net.stages.push_back(dense(LayerKind::CPL, gaussian(n, n, rng, 0.8)));
  net.stages.push_back(act_stage(ActKind::MaxMin, n));
  net.stages.push_back(dense(LayerKind::SOC, gaussian(n, n, rng, 0.8)));
  net.stages.push_back(act_stage(ActKind::Abs, n));
  net.stages.push_back(dense(LayerKind::UnconstrainedLinear,
                             gaussian(n, n, rng, 0.5)));
  return net;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("empty network is the identity") {
  Network net;
  net.in_dim = 3;
  CHECK(net.out_dim() == 3);
  net.validate();
  Eigen::VectorXd x(3);
  x << 1, -2, 3;
  Eigen::VectorXd y = net.eval(x);
  CHECK((y - x).norm() == 0.0);
}

TEST_CASE("single aol identity layer adds its bias") {
  Network net;
  net.in_dim = 2;
  DenseParams d = dense(LayerKind::AOL, Eigen::MatrixXd::Identity(2, 2));
  d.b << 0.5, -1.5;
  net.stages.push_back(d);
  Eigen::VectorXd x(2);
  x << 1, 2;
  Eigen::VectorXd y = net.eval(x);
  CHECK(y(0) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(y(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("validate rejects dimension mismatches") {
  Network net;
  net.in_dim = 3;
  net.stages.push_back(dense(LayerKind::AOL, Eigen::MatrixXd::Zero(2, 3)));
  net.stages.push_back(act_stage(ActKind::Abs, 3));  // needs width 2
  CHECK(error_code_of([&] { net.validate(); }) == ErrorCode::InvalidArgument);

  Network head;
  head.in_dim = 2;
  head.stages.push_back(dense(LayerKind::AOL, Eigen::MatrixXd::Zero(2, 3)));
  CHECK(error_code_of([&] { head.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("scalar nact network evaluates the zigzag") {
  Network net;
  net.in_dim = 1;
  net.stages.push_back(dense(LayerKind::UnconstrainedLinear,
                             Eigen::MatrixXd::Identity(1, 1)));
  ActStage a = act_stage(ActKind::NAct, 1);
  a.phi[0] = {-0.5, 0.5, false};
  net.stages.push_back(a);
  CHECK(net.eval1(0.25) == -0.25);
  CHECK(net.eval1(-3.0) == -2.0);
  CHECK(net.eval1(0.0) == 0.0);

  std::mt19937_64 rng(1);
  Network wide = mixed_net(2, rng);
  CHECK(error_code_of([&] { wide.eval1(0.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("maxmin stage sorts pairs and passes an odd tail channel") {
  ActStage a = act_stage(ActKind::MaxMin, 3);
  Eigen::VectorXd x(3);
  x << 1, 4, -7;
  Eigen::VectorXd y = nact::act_forward(a, x);
  CHECK(y(0) == 4.0);
  CHECK(y(1) == 1.0);
  CHECK(y(2) == -7.0);
}

TEST_CASE("nact param_scale rescales stored thresholds") {
  ActStage a = act_stage(ActKind::NAct, 2);
  a.param_scale = 0.1;
  a.phi[0] = {-1000.0, 0.0, false};
  a.phi[1] = {0.0, 0.0, false};
  NActParams eff = a.effective(0);
  CHECK(eff.theta1 == -100.0);
  CHECK(eff.theta2 == 0.0);
  Eigen::VectorXd x(2);
  x << -42.0, -42.0;
  Eigen::VectorXd y = nact::act_forward(a, x);
  CHECK(y(0) == 42.0);   // |.| on [-100, 100]
  CHECK(y(1) == -42.0);  // identity
}

TEST_CASE("mse_loss value and gradient") {
  Eigen::VectorXd pred(2), target(2);
  pred << 1, 0;
  target << 0, 0;
  auto r = nact::mse_loss(pred, target);
  CHECK(r.loss == 0.5);
  CHECK(r.d_pred(0) == 1.0);
  CHECK(r.d_pred(1) == 0.0);

  auto zero = nact::mse_loss(target, target);
  CHECK(zero.loss == 0.0);

  std::mt19937_64 rng(3);
  Eigen::VectorXd p = gaussian(5, 1, rng, 1.0).col(0);
  Eigen::VectorXd t = gaussian(5, 1, rng, 1.0).col(0);
  auto base = nact::mse_loss(p, t);
  const double h = 1e-7;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd pp = p;
    pp(i) += h;
    double up = nact::mse_loss(pp, t).loss;
    pp(i) -= 2 * h;
    double dn = nact::mse_loss(pp, t).loss;
    CHECK(base.d_pred(i) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
  }

  Eigen::VectorXd short_t(1);
  CHECK(error_code_of([&] { nact::mse_loss(p, short_t); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("offset_ce_loss known values") {
  Eigen::VectorXd s(2);
  s << 0, 0;
  auto r = nact::offset_ce_loss(s, 0, 0.0, 1.0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(r.d_pred(0) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(r.d_pred(1) == doctest::Approx(0.5).epsilon(1e-14));

  // Subtracting the offset from the true class undoes an equal head start.
  Eigen::VectorXd ahead(2);
  ahead << 0.7, 0.0;
  auto r2 = nact::offset_ce_loss(ahead, 0, 0.7, 1.0);
  CHECK(r2.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // The temperature scales the loss of a uniform softmax.
  auto r3 = nact::offset_ce_loss(s, 0, 0.0, 0.25);
  CHECK(r3.loss == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("offset_ce_loss reduces to cross entropy and is monotone in offset") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd s = gaussian(4, 1, rng, 2.0).col(0);
    int label = static_cast<int>(rng() % 4);
    auto r = nact::offset_ce_loss(s, label, 0.0, 1.0);
    Eigen::VectorXd p = (s.array() - s.maxCoeff()).exp();
    p /= p.sum();
    CHECK(r.loss == doctest::Approx(-std::log(p(label))).epsilon(1e-10));

    double prev = r.loss;
    for (double off : {0.3, 0.9, 2.0}) {
      double cur = nact::offset_ce_loss(s, label, off, 1.0).loss;
      CHECK(cur >= prev - 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("offset_ce_loss gradient matches finite differences") {
  std::mt19937_64 rng(7);
  Eigen::VectorXd s = gaussian(5, 1, rng, 1.5).col(0);
  auto base = nact::offset_ce_loss(s, 2, 0.4, 0.25);
  const double h = 1e-7;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd sp = s;
    sp(i) += h;
    double up = nact::offset_ce_loss(sp, 2, 0.4, 0.25).loss;
    sp(i) -= 2 * h;
    double dn = nact::offset_ce_loss(sp, 2, 0.4, 0.25).loss;
    CHECK(base.d_pred(i) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("offset_ce_loss rejects bad arguments") {
  Eigen::VectorXd s(2);
  s << 0, 0;
  CHECK(error_code_of([&] { nact::offset_ce_loss(s, 2, 0.0, 1.0); }) ==
        ErrorCode::InvalidArgument);
  CHECK(error_code_of([&] { nact::offset_ce_loss(s, -1, 0.0, 1.0); }) ==
        ErrorCode::InvalidArgument);
  CHECK(error_code_of([&] { nact::offset_ce_loss(s, 0, 0.0, 0.0); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("certified_radius is the scaled top-two margin") {
  Eigen::VectorXd s(2);
  s << 2, 1;
  CHECK(nact::certified_radius(s) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));

  Eigen::VectorXd tie(3);
  tie << 1, 1, 0;
  CHECK(nact::certified_radius(tie) == 0.0);

  // A margin of 2*sqrt(2)*eps certifies radius 2*eps.
  const double eps = 36.0 / 255.0;
  Eigen::VectorXd m(2);
  m << 2.0 * std::sqrt(2.0) * eps, 0.0;
  CHECK(nact::certified_radius(m) == doctest::Approx(2 * eps).epsilon(1e-12));
  CHECK(2 * eps == doctest::Approx(0.28235).epsilon(1e-4));

  CHECK(nact::certified_radius(m, 1.0) ==
        doctest::Approx(2.0 * std::sqrt(2.0) * eps).epsilon(1e-14));

  Eigen::VectorXd one(1);
  one << 3;
  CHECK(error_code_of([&] { nact::certified_radius(one); }) ==
        ErrorCode::InvalidArgument);

  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd r = gaussian(6, 1, rng, 3.0).col(0);
    CHECK(nact::certified_radius(r) >= 0.0);
  }
}

TEST_CASE("grad_check passes on mixed stacks") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 5; ++t) {
    Network net = mixed_net(4, rng);
    Eigen::VectorXd x = gaussian(4, 1, rng, 1.0).col(0);
    auto r = nact::grad_check(net, x, 1e-6);
    CAPTURE(t);
    CHECK(r.max_rel_error <= 1e-5);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("grad_check on relu stacks") {
  std::mt19937_64 rng(13);
  Network net;
  net.in_dim = 3;
  net.stages.push_back(dense(LayerKind::UnconstrainedLinear,
                             gaussian(4, 3, rng, 0.7)));
  net.stages.push_back(act_stage(ActKind::ReLU, 4));
  net.stages.push_back(dense(LayerKind::UnconstrainedLinear,
                             gaussian(2, 4, rng, 0.7)));
  Eigen::VectorXd x = gaussian(3, 1, rng, 1.0).col(0);
  auto r = nact::grad_check(net, x, 1e-6);
  CHECK(r.max_rel_error <= 1e-5);
  CHECK(r.checked > 0);
}

TEST_CASE("grad_check skips parameters that sit on a kink") {
  Network net;
  net.in_dim = 1;
  net.stages.push_back(dense(LayerKind::UnconstrainedLinear,
                             Eigen::MatrixXd::Identity(1, 1)));
  ActStage a = act_stage(ActKind::NAct, 1);
  a.phi[0] = {0.0, 1.0, false};
  net.stages.push_back(a);
  Eigen::VectorXd x(1);
  x << 1.0;  // exactly at theta2
  auto r = nact::grad_check(net, x, 1e-6);
  CHECK(r.skipped >= 1);
  CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("batched backward accumulates and finalize matches singles") {
  std::mt19937_64 rng(17);
  Network net = mixed_net(4, rng);
  Eigen::VectorXd x1 = gaussian(4, 1, rng, 1.0).col(0);
  Eigen::VectorXd x2 = gaussian(4, 1, rng, 1.0).col(0);
  Eigen::VectorXd u1 = gaussian(4, 1, rng, 1.0).col(0);
  Eigen::VectorXd u2 = gaussian(4, 1, rng, 1.0).col(0);

  nact::Grads batch = nact::make_grads(net);
  auto [y1, t1] = nact::forward(net, x1, false);
  nact::backward(net, t1, u1, batch);
  auto [y2, t2] = nact::forward(net, x2, false);
  nact::backward(net, t2, u2, batch);
  nact::finalize_grads(net, batch);

  nact::Grads g1 = nact::backward_single(net, x1, u1);
  nact::Grads g2 = nact::backward_single(net, x2, u2);

  for (size_t s = 0; s < net.stages.size(); ++s) {
    if (batch.stages[s].d_P.size() > 0) {
      Eigen::MatrixXd sum = g1.stages[s].d_P + g2.stages[s].d_P;
      CHECK((batch.stages[s].d_P - sum).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::VectorXd bsum = g1.stages[s].d_b + g2.stages[s].d_b;
      CHECK((batch.stages[s].d_b - bsum).cwiseAbs().maxCoeff() <= 1e-12);
    }
    for (size_t c = 0; c < batch.stages[s].d_phi.size(); ++c) {
      CHECK(batch.stages[s].d_phi[c][0] ==
            doctest::Approx(g1.stages[s].d_phi[c][0] +
                            g2.stages[s].d_phi[c][0]).epsilon(1e-12));
      CHECK(batch.stages[s].d_phi[c][1] ==
            doctest::Approx(g1.stages[s].d_phi[c][1] +
                            g2.stages[s].d_phi[c][1]).epsilon(1e-12));
    }
  }

  nact::Grads scaled = nact::backward_single(net, x1, u1);
  scaled.scale(0.5);
  for (size_t s = 0; s < net.stages.size(); ++s) {
    if (scaled.stages[s].d_P.size() > 0)
      CHECK((scaled.stages[s].d_P - 0.5 * g1.stages[s].d_P)
                .cwiseAbs()
                .maxCoeff() <= 1e-15);
  }
}

TEST_CASE("json round trip preserves structure and behavior") {
  std::mt19937_64 rng(19);
  Network net = mixed_net(4, rng);
  {
    // Give the soc stage distinctive series lengths.
    auto& d = std::get<DenseParams>(net.stages[4]);
    d.k_train = 3;
    d.k_eval = 17;
  }
  std::string text = nact::network_to_json(net);
  Network back = nact::network_from_json(text);
  CHECK(back.in_dim == net.in_dim);
  CHECK(back.out_dim() == net.out_dim());
  REQUIRE(back.stages.size() == net.stages.size());

  const auto& soc = std::get<DenseParams>(back.stages[4]);
  CHECK(soc.k_train == 3);
  CHECK(soc.k_eval == 17);
  const auto& na = std::get<ActStage>(back.stages[1]);
  CHECK(na.param_scale == 0.1);
  CHECK(na.phi[2].abs_mode);
  CHECK(na.phi[0].theta1 == -1.0);

  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd x = gaussian(4, 1, rng, 1.0).col(0);
    Eigen::VectorXd a = net.eval(x);
    Eigen::VectorXd b = back.eval(x);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("legacy theta-only checkpoints load with unit param_scale") {
  const char* text = R"({
    "in_dim": 1,
    "layers": [
      {"kind": "linear", "P": [[1.0]], "b": [0.0]},
      {"kind": "act",
       "act": {"kind": "nact", "width": 1, "theta": [[-0.5, 0.5]]}}
    ]
  })";
  Network net = nact::network_from_json(text);
  const auto& a = std::get<ActStage>(net.stages[1]);
  CHECK(a.param_scale == 1.0);
  CHECK(net.eval1(0.25) == -0.25);
  CHECK(net.eval1(2.0) == 1.0);
}

TEST_CASE("corrupted checkpoints are rejected") {
  CHECK(error_code_of([] { nact::network_from_json("len(x"); }) ==
        ErrorCode::Parse);
  CHECK(error_code_of([] { nact::network_from_json(R"({"layers": []})"); }) ==
        ErrorCode::Parse);
  // Ragged matrix.
  CHECK(error_code_of([] {
          nact::network_from_json(R"({"in_dim": 2, "layers": [
            {"kind": "linear", "P": [[1, 0], [1]], "b": [0, 0]}]})");
        }) == ErrorCode::Parse);
  // Unknown kinds.
  CHECK(error_code_of([] {
          nact::network_from_json(R"({"in_dim": 1, "layers": [
            {"kind": "banana", "P": [[1]], "b": [0]}]})");
        }) == ErrorCode::Parse);
  // Declared out_dim disagrees with the stages.
  CHECK(error_code_of([] {
          nact::network_from_json(R"({"in_dim": 1, "out_dim": 7, "layers": [
            {"kind": "linear", "P": [[1]], "b": [0]}]})");
        }) == ErrorCode::Parse);
  // Incompatible stage dimensions.
  CHECK(error_code_of([] {
          nact::network_from_json(R"({"in_dim": 1, "layers": [
            {"kind": "linear", "P": [[1]], "b": [0]},
            {"kind": "act", "act": {"kind": "abs", "width": 3}}]})");
        }) == ErrorCode::InvalidArgument);
}

}  // TEST_SUITE
