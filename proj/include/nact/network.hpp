#pragma once

#include <array>
#include <variant>
#include <vector>

#include "nact/activations.hpp"
#include "nact/layers.hpp"

namespace nact {

/// An elementwise activation stage. All channels share one kind; NAct
/// channels carry per-channel raw parameters phi with effective
/// theta = param_scale * phi (param_scale is exactly 1 for compiled networks
/// and 1/10 for trained ones, which implements the N-activation's
/// learning-rate rescale). MaxMin applies to channel pairs (0,1), (2,3), ...;
/// an odd trailing channel passes through unchanged.
struct ActStage {
  ActKind kind = ActKind::Identity;
  int width = 0;
  double param_scale = 1.0;
  std::vector<NActParams> phi;  // NAct only, size == width

  NActParams effective(int channel) const {
    const NActParams& p = phi[channel];
    return {param_scale * p.theta1, param_scale * p.theta2, p.abs_mode};
  }
};

using Stage = std::variant<DenseParams, ActStage>;

int stage_in_dim(const Stage& s);
int stage_out_dim(const Stage& s);

/// Ordered stages; consecutive dimensions must be compatible. An empty
/// network is the identity.
struct Network {
  int in_dim = 0;
  std::vector<Stage> stages;

  int out_dim() const;
  /// Throws on any dimension mismatch between consecutive stages.
  void validate() const;
  /// Scalar-in/scalar-out convenience evaluation (eval mode).
  double eval1(double x);
  Eigen::VectorXd eval(const Eigen::VectorXd& x);
};

struct Tape {
  struct Entry {
    Eigen::VectorXd input;
    double sigma_hat = 0.0;  // CPL stages: the spectral estimate used
  };
  std::vector<Entry> entries;
  Eigen::VectorXd output;
  bool eval_mode = false;
};

Eigen::VectorXd act_forward(const ActStage& act, const Eigen::VectorXd& x);

/// Runs the network, recording per-stage inputs for backward.
std::pair<Eigen::VectorXd, Tape> forward(Network& net, const Eigen::VectorXd& x,
                                         bool eval_mode);

/// Per-stage parameter gradients. AOL stages accumulate the diagonal-path
/// contribution as a c-vector that finalize_grads materializes once per
/// batch (the path is linear in c, so summing first is exact).
struct StageGrad {
  Eigen::MatrixXd d_P;
  Eigen::VectorXd d_b;
  Eigen::VectorXd aol_c;
  std::vector<std::array<double, 2>> d_phi;  // per-channel (theta1, theta2)
};

struct Grads {
  std::vector<StageGrad> stages;
  void scale(double s);
};

Grads make_grads(const Network& net);

/// Accumulates gradients for one example into grads (chain rule over the
/// stage vjps). N-activation parameter gradients are w.r.t. the raw phi,
/// i.e. already scaled by param_scale.
void backward(Network& net, const Tape& tape, const Eigen::VectorXd& upstream,
              Grads& grads);

/// Materializes deferred AOL diagonal-path terms into d_P. Call once after
/// all backward() accumulations for a batch.
void finalize_grads(const Network& net, Grads& grads);

/// forward + backward + finalize for a single example.
Grads backward_single(Network& net, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& upstream, bool eval_mode = false);

struct LossResult {
  double loss;
  Eigen::VectorXd d_pred;
};

/// Mean squared error over components.
LossResult mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);

/// Cross-entropy of softmax(s'/T) scaled by T, where s' subtracts `offset`
/// from the true-class score. offset=0, temperature=1 is standard CE.
LossResult offset_ce_loss(const Eigen::VectorXd& scores, int label,
                          double offset, double temperature);

/// (top score - runner-up)/factor; 0 on ties. For a jointly 1-Lipschitz score
/// map the score difference is sqrt(2)-Lipschitz, hence the default factor.
double certified_radius(const Eigen::VectorXd& scores,
                        double factor = 1.4142135623730951);

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // parameters whose perturbation crossed an activation kink
};

/// Central-difference check of backward() for every parameter, holding CPL
/// spectral estimates frozen (they are stop-gradients). Parameters whose
/// +/-h perturbation changes any branch decision (activation branch, relu
/// mask, maxmin order, AOL |P^T P| sign pattern) are skipped, not failed.
GradCheckResult grad_check(Network& net, const Eigen::VectorXd& x, double h);

std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text);

}  // namespace nact
