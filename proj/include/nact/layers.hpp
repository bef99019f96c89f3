#pragma once

#include <Eigen/Dense>
#include <random>

#include "nact/pwl.hpp"

namespace nact {

enum class LayerKind { AOL, CPL, SOC, UnconstrainedLinear };

/// Warm-startable power-iteration cache for spectral-norm estimation.
struct PowerIterState {
  Eigen::VectorXd u;
  int iters = 100;
  double tol = 1e-10;
  double last_rel_change = 0.0;
};

/// A dense linear layer. AOL applies the diagonal rescaling D(P) so that P*D
/// has spectral norm <= 1; CPL is the residual map x - (2/|P|^2) P^T relu(Px+b);
/// SOC applies the truncated exponential of the skew part A = (P - P^T)/2
/// (k_train series terms during training, k_eval at inference).
struct DenseParams {
  LayerKind kind = LayerKind::UnconstrainedLinear;
  Eigen::MatrixXd P;
  Eigen::VectorXd b;
  int k_train = 5;
  int k_eval = 12;

  // Caches; owned by the single training thread, invalidated on updates.
  mutable PowerIterState pi;
  mutable Eigen::VectorXd cached_diag;
  mutable bool cached_diag_valid = false;
  mutable double cached_sigma = 0.0;
  mutable bool cached_sigma_valid = false;

  int in_dim() const { return static_cast<int>(P.cols()); }
  int out_dim() const {
    return kind == LayerKind::CPL ? static_cast<int>(P.cols())
                                  : static_cast<int>(P.rows());
  }
  void invalidate_caches() const {
    cached_diag_valid = false;
    cached_sigma_valid = false;
  }
};

/// D_ii = (sum_j |P^T P|_ij)^(-1/2); rows with zero absolute sum give D_ii = 1
/// (the matching column of P is zero, so the product is unaffected).
Eigen::VectorXd aol_diag(const Eigen::MatrixXd& P);

/// P * D * x + b with D = aol_diag(P) (cached on params).
Eigen::VectorXd aol_forward(const DenseParams& params,
                            const Eigen::VectorXd& x);

/// Power-iteration estimate of the spectral norm, warm-started from state.u.
/// Returns 0 for a (near-)zero matrix. Convergence shortfall is reported in
/// state.last_rel_change, never as an exception.
double spectral_norm(const Eigen::MatrixXd& P, PowerIterState& state);

/// x - (2/sigma^2) P^T relu(Px + b); returns x unchanged when |P| < 1e-12.
Eigen::VectorXd cpl_forward(const DenseParams& params, const Eigen::VectorXd& x,
                            PowerIterState& state);

/// The CPL layer's spectral-norm estimate, computed once per parameter
/// update (cached until invalidate_caches).
double ensure_cpl_sigma(const DenseParams& params);

/// sum_{j=0..terms} A^j x / j! + b with A the skew part of P.
Eigen::VectorXd soc_forward(const DenseParams& params, const Eigen::VectorXd& x,
                            int terms);

/// Forward dispatch over the layer kind; eval_mode selects SOC's k_eval.
Eigen::VectorXd dense_forward(const DenseParams& params,
                              const Eigen::VectorXd& x, bool eval_mode);

struct LayerGrads {
  Eigen::VectorXd d_x;
  Eigen::MatrixXd d_P;
  Eigen::VectorXd d_b;
};

/// Exact vector-Jacobian products of the training-time forward map. The CPL
/// spectral-norm estimate is treated as a constant (stop-gradient); the AOL
/// diagonal D(P) is differentiated through. SOC uses k_train series terms.
LayerGrads layer_vjp(const DenseParams& params, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& upstream);

/// CPL vjp against a pinned sigma estimate (the one the forward pass used).
LayerGrads cpl_vjp(const DenseParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& upstream, double sigma_hat);

/// The deferred AOL gradient path through D(P): given the per-batch
/// accumulated vector c (c_i = sum over examples of (P^T u)_i * x_i),
/// returns the d_P contribution P * (G + G^T).
Eigen::MatrixXd aol_diag_grad_term(const Eigen::MatrixXd& P,
                                   const Eigen::VectorXd& c_acc);

struct AuditResult {
  double empirical = 0.0;  // max |f(x)-f(y)| / |x-y| over sampled pairs
  double spectral = 0.0;   // sigma(P*D) for AOL, sigma(P) for unconstrained
};

/// Empirical Lipschitz bound over random pairs, nearby pairs, and pairs along
/// the layer's top singular direction. eval-mode forward (SOC uses k_eval).
AuditResult lipschitz_audit(const DenseParams& params, int trials,
                            std::mt19937_64& rng);

}  // namespace nact
