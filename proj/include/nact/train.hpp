#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nact/network.hpp"

namespace nact {

// Activation choice for a dense-layer stack built by build_mlp.
enum class ModelAct { NAct, MaxMin, Abs, ReLU };

// How N-activation thresholds are seeded before training.
//   AbsId:  even channels start as |.| (theta = (-100, 0)), odd as identity.
//   Zero:   every channel starts as identity.
//   Random: theta1 = -10^u1, theta2 = +10^u2 with u1, u2 ~ U[-5, 0].
enum class InitStrategy { AbsId, Zero, Random };

enum class Schedule { Constant, OneCycle };
enum class LossKind { Mse, OffsetCrossEntropy };

struct TrainConfig {
  // Negative selects the per-layer-kind default peak rate (AOL 10^-1.6,
  // CPL 10^-0.4, SOC 10^-1.0, Unconstrained 10^-1.6); 0 freezes the weights.
  double learning_rate = -1.0;
  double momentum = 0.9;
  bool nesterov = true;
  Schedule schedule = Schedule::OneCycle;
  int epochs = 10;
  int batch_size = 256;
  LossKind loss = LossKind::Mse;
  // Margin subtracted from the true-class logit before the softmax; 0 keeps
  // plain cross-entropy. Negative means "derive from epsilon" as 2*sqrt(2)*eps.
  double offset = -1.0;
  double temperature = 0.25;
  double epsilon = 36.0 / 255.0;
  InitStrategy nact_init = InitStrategy::AbsId;
  // Thresholds are stored as phi with theta = nact_lr_scale * phi, which
  // multiplies their effective learning rate by nact_lr_scale^2.
  double nact_lr_scale = 0.1;
  std::uint64_t seed = 0;
  // Optional per-example transform applied when assembling training batches;
  // epoch-end evaluation always sees the stored inputs. Draws from the
  // training rng stream, so runs stay seed-deterministic.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, std::mt19937_64&)>
      augment;
};

struct Dataset {
  std::vector<Eigen::VectorXd> inputs;
  // Regression targets; empty for classification.
  std::vector<Eigen::VectorXd> targets;
  // Class labels; empty for regression.
  std::vector<int> labels;

  bool classification() const { return !labels.empty(); }
  std::size_t size() const { return inputs.size(); }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  // Classification only; -1 for regression.
  double accuracy = -1.0;
  // Certified robust accuracy at eps = {36, 72, 108, 255}/255; -1 for
  // regression.
  double cra[4] = {-1.0, -1.0, -1.0, -1.0};
};

struct TrainResult {
  std::vector<EpochStats> history;
  // Largest ||f(x)-f(y)|| / ||x-y|| seen across the pairwise audits run at
  // the start, midpoint, and end of training.
  double worst_audit_ratio = 0.0;
};

// One-cycle schedule: linear warmup from peak/25 to peak over the first 30%
// of steps, then cosine decay to peak/1e4.
double one_cycle_lr(double peak, int step, int total_steps);

// Effective-theta initialization for one N-activation channel.
NActParams init_nact(InitStrategy strategy, int channel, std::mt19937_64& rng);

// Fully-connected stack: in -> width x (depth-1 hidden) -> out, one activation
// stage after each dense layer except the last. CPL and SOC layers must be
// square, so stacks using them get AOL layers at the changes of width (first
// and last). Weights are Gaussian with scale 1/sqrt(fan_in), biases zero.
Network build_mlp(int in_dim, int width, int depth, int out_dim,
                  LayerKind kind, ModelAct act, InitStrategy init,
                  double nact_param_scale, std::mt19937_64& rng);

// Minibatch SGD with Nesterov momentum. Throws Error(Diverged) if the loss
// becomes non-finite. History rows are full-training-set evaluations taken at
// the end of each epoch.
TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg);

// Largest Lipschitz ratio over `pairs` random input pairs (a mix of
// independent draws at two scales and nearby perturbations).
double network_audit(Network& net, int pairs, std::mt19937_64& rng);

// "epoch,loss,accuracy,cra36,cra72,cra108,cra255" header; classification
// fields are left empty for regression runs.
std::string history_to_csv(const std::vector<EpochStats>& history);

// Small 1-d regression benchmark: 1000 points x ~ U[-3, 3] with the
// three-segment unit-slope zigzag as target, fit by a 1 -> 40 -> 40 -> 1
// stack. NAct/MaxMin/Abs use AOL layers; ReLU uses unconstrained layers.
struct ToyConfig {
  ModelAct act = ModelAct::NAct;
  InitStrategy init = InitStrategy::AbsId;
  std::uint64_t seed = 0;
  int epochs = 1000;
};

struct ToyResult {
  TrainResult train;
  Network net;
  double final_mse = 0.0;
};

ToyResult fit_toy(const ToyConfig& cfg);

}  // namespace nact
