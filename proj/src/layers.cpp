#include "nact/layers.hpp"

#include <cmath>

namespace nact {
namespace {

const Eigen::VectorXd& ensure_aol_diag(const DenseParams& params) {
  if (!params.cached_diag_valid) {
    params.cached_diag = aol_diag(params.P);
    params.cached_diag_valid = true;
  }
  return params.cached_diag;
}

Eigen::MatrixXd skew_part(const Eigen::MatrixXd& P) {
  if (P.rows() != P.cols())
    throw Error(ErrorCode::InvalidArgument, "SOC layer needs a square matrix");
  return 0.5 * (P - P.transpose());
}

void check_dim(const DenseParams& params, const Eigen::VectorXd& x) {
  if (x.size() != params.in_dim())
    throw Error(ErrorCode::InvalidArgument, "layer input dimension mismatch");
}

}  // namespace

Eigen::VectorXd aol_diag(const Eigen::MatrixXd& P) {
  Eigen::MatrixXd S = P.transpose() * P;
  Eigen::VectorXd r = S.cwiseAbs().rowwise().sum();
  Eigen::VectorXd d(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i)
    d[i] = r[i] > 0.0 ? 1.0 / std::sqrt(r[i]) : 1.0;
  return d;
}

Eigen::VectorXd aol_forward(const DenseParams& params,
                            const Eigen::VectorXd& x) {
  check_dim(params, x);
  const Eigen::VectorXd& d = ensure_aol_diag(params);
  return params.P * d.cwiseProduct(x) + params.b;
}

double spectral_norm(const Eigen::MatrixXd& P, PowerIterState& state) {
  if (P.size() == 0) return 0.0;
  const Eigen::Index n = P.cols();
  if (state.u.size() != n) {
    state.u.resize(n);
    // Deterministic start, slightly tilted so it is never orthogonal to the
    // dominant singular vector of a diagonal matrix.
    for (Eigen::Index i = 0; i < n; ++i)
      state.u[i] = 1.0 + 1e-3 * static_cast<double>(i);
    state.u.normalize();
  }
  double sigma = 0.0;
  state.last_rel_change = 0.0;
  for (int it = 0; it < state.iters; ++it) {
    Eigen::VectorXd v = P.transpose() * (P * state.u);
    double nv = v.norm();
    if (nv < 1e-300) return 0.0;
    state.u = v / nv;
    double next = (P * state.u).norm();
    state.last_rel_change = std::abs(next - sigma) / std::max(next, 1e-300);
    sigma = next;
    if (state.last_rel_change < state.tol) break;
  }
  return sigma;
}

Eigen::VectorXd cpl_forward(const DenseParams& params, const Eigen::VectorXd& x,
                            PowerIterState& state) {
  check_dim(params, x);
  double sigma = spectral_norm(params.P, state);
  if (sigma < 1e-12) return x;
  Eigen::VectorXd z = params.P * x + params.b;
  return x - (2.0 / (sigma * sigma)) * (params.P.transpose() * z.cwiseMax(0.0));
}

double ensure_cpl_sigma(const DenseParams& params) {
  if (!params.cached_sigma_valid) {
    params.cached_sigma = spectral_norm(params.P, params.pi);
    params.cached_sigma_valid = true;
  }
  return params.cached_sigma;
}

Eigen::VectorXd soc_forward(const DenseParams& params, const Eigen::VectorXd& x,
                            int terms) {
  check_dim(params, x);
  if (terms < 1)
    throw Error(ErrorCode::InvalidArgument, "SOC needs at least one term");
  Eigen::MatrixXd A = skew_part(params.P);
  Eigen::VectorXd term = x;
  Eigen::VectorXd acc = x;
  for (int j = 1; j <= terms; ++j) {
    term = (A * term) / static_cast<double>(j);
    acc += term;
  }
  return acc + params.b;
}

Eigen::VectorXd dense_forward(const DenseParams& params,
                              const Eigen::VectorXd& x, bool eval_mode) {
  switch (params.kind) {
    case LayerKind::AOL:
      return aol_forward(params, x);
    case LayerKind::CPL:
      return cpl_forward(params, x, params.pi);
    case LayerKind::SOC:
      return soc_forward(params, x, eval_mode ? params.k_eval : params.k_train);
    case LayerKind::UnconstrainedLinear:
      check_dim(params, x);
      return params.P * x + params.b;
  }
  throw Error(ErrorCode::Internal, "unknown layer kind");
}

Eigen::MatrixXd aol_diag_grad_term(const Eigen::MatrixXd& P,
                                   const Eigen::VectorXd& c_acc) {
  Eigen::MatrixXd S = P.transpose() * P;
  Eigen::VectorXd r = S.cwiseAbs().rowwise().sum();
  Eigen::VectorXd scale(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i)
    scale[i] = r[i] > 0.0 ? c_acc[i] * (-0.5) * std::pow(r[i], -1.5) : 0.0;
  Eigen::MatrixXd sgn = S.unaryExpr(
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
  Eigen::MatrixXd G = scale.asDiagonal() * sgn;
  return P * (G + G.transpose());
}

LayerGrads cpl_vjp(const DenseParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& upstream, double sigma_hat) {
  LayerGrads g;
  if (sigma_hat < 1e-12) {
    g.d_x = upstream;
    g.d_P = Eigen::MatrixXd::Zero(params.P.rows(), params.P.cols());
    g.d_b = Eigen::VectorXd::Zero(params.b.size());
    return g;
  }
  const double c = 2.0 / (sigma_hat * sigma_hat);
  Eigen::VectorXd z = params.P * x + params.b;
  Eigen::VectorXd m = z.cwiseMax(0.0);
  // Right-branch convention: relu'(0) = 1.
  Eigen::VectorXd d_z = (-c) * (params.P * upstream);
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (z[i] < 0.0) d_z[i] = 0.0;
  g.d_x = upstream + params.P.transpose() * d_z;
  g.d_P = (-c) * (m * upstream.transpose()) + d_z * x.transpose();
  g.d_b = d_z;
  return g;
}

LayerGrads layer_vjp(const DenseParams& params, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& upstream) {
  check_dim(params, x);
  LayerGrads g;
  switch (params.kind) {
    case LayerKind::AOL: {
      const Eigen::VectorXd& d = ensure_aol_diag(params);
      Eigen::VectorXd ptu = params.P.transpose() * upstream;
      g.d_x = d.cwiseProduct(ptu);
      g.d_b = upstream;
      g.d_P = upstream * d.cwiseProduct(x).transpose() +
              aol_diag_grad_term(params.P, ptu.cwiseProduct(x));
      return g;
    }
    case LayerKind::CPL:
      return cpl_vjp(params, x, upstream, spectral_norm(params.P, params.pi));
    case LayerKind::SOC: {
      const int T = params.k_train;
      Eigen::MatrixXd A = skew_part(params.P);
      std::vector<Eigen::VectorXd> v(T), w(T);
      v[0] = x;
      w[0] = upstream;
      for (int q = 1; q < T; ++q) v[q] = A * v[q - 1];
      for (int p = 1; p < T; ++p) w[p] = -(A * w[p - 1]);
      // d_x = sum_j (-A)^j u / j!
      Eigen::VectorXd term = upstream;
      g.d_x = upstream;
      double fact = 1.0;
      for (int j = 1; j <= T; ++j) {
        term = -(A * term);
        fact *= j;
        g.d_x += term / fact;
      }
      Eigen::MatrixXd d_A = Eigen::MatrixXd::Zero(A.rows(), A.cols());
      fact = 1.0;
      for (int j = 1; j <= T; ++j) {
        fact *= j;
        for (int p = 0; p < j; ++p) d_A += (w[p] * v[j - 1 - p].transpose()) / fact;
      }
      g.d_P = 0.5 * (d_A - d_A.transpose());
      g.d_b = upstream;
      return g;
    }
    case LayerKind::UnconstrainedLinear:
      g.d_x = params.P.transpose() * upstream;
      g.d_P = upstream * x.transpose();
      g.d_b = upstream;
      return g;
  }
  throw Error(ErrorCode::Internal, "unknown layer kind");
}

AuditResult lipschitz_audit(const DenseParams& params, int trials,
                            std::mt19937_64& rng) {
  if (trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
  const int n = params.in_dim();
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto sample = [&](double scale) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * gauss(rng);
    return v;
  };
  auto fwd = [&](const Eigen::VectorXd& x) {
    return dense_forward(params, x, /*eval_mode=*/true);
  };

  AuditResult res;
  auto probe = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    double dx = (x - y).norm();
    if (dx < 1e-300) return;
    res.empirical = std::max(res.empirical, (fwd(x) - fwd(y)).norm() / dx);
  };
  for (int t = 0; t < trials; ++t) {
    if (t % 2 == 0) {
      probe(sample(1.0), sample(t % 4 == 0 ? 1.0 : 10.0));
    } else {
      Eigen::VectorXd x = sample(1.0);
      probe(x, x + sample(1e-4));
    }
  }

  // Pairs along the top singular direction of the effective linear map, where
  // a linear layer's ratio attains its spectral norm.
  Eigen::MatrixXd W = params.P;
  if (params.kind == LayerKind::AOL)
    W = params.P * aol_diag(params.P).asDiagonal();
  PowerIterState st;
  st.iters = 500;
  st.tol = 1e-14;
  double sigma = spectral_norm(W, st);
  if (st.u.size() == n) {
    for (double t : {0.5, 5.0}) {
      probe(t * st.u, -t * st.u);
      Eigen::VectorXd x = sample(1.0);
      probe(x, x + t * st.u);
    }
  }
  if (params.kind == LayerKind::AOL ||
      params.kind == LayerKind::UnconstrainedLinear)
    res.spectral = sigma;
  return res;
}

}  // namespace nact
