#include "nact/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <variant>

namespace nact {
namespace {

void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

double default_peak(LayerKind kind) {
  switch (kind) {
    case LayerKind::CPL:
      return std::pow(10.0, -0.4);
    case LayerKind::SOC:
      return std::pow(10.0, -1.0);
    case LayerKind::AOL:
    case LayerKind::UnconstrainedLinear:
      break;
  }
  return std::pow(10.0, -1.6);
}

// Peak rate per stage. Activation stages step at the rate of the dense layer
// they follow; their thresholds already carry the extra param_scale^2 damping
// through the phi storage.
std::vector<double> stage_peaks(const Network& net, const TrainConfig& cfg) {
  std::vector<double> peaks(net.stages.size(), cfg.learning_rate);
  if (cfg.learning_rate >= 0.0) return peaks;
  double cur = default_peak(LayerKind::AOL);
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    if (const auto* d = std::get_if<DenseParams>(&net.stages[s])) {
      cur = default_peak(d->kind);
    }
    peaks[s] = cur;
  }
  return peaks;
}

struct Velocity {
  Eigen::MatrixXd P;
  Eigen::VectorXd b;
  std::vector<std::array<double, 2>> phi;
};

std::vector<Velocity> make_velocity(const Network& net) {
  std::vector<Velocity> vel(net.stages.size());
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    if (const auto* d = std::get_if<DenseParams>(&net.stages[s])) {
      vel[s].P = Eigen::MatrixXd::Zero(d->P.rows(), d->P.cols());
      vel[s].b = Eigen::VectorXd::Zero(d->b.size());
    } else if (const auto* a = std::get_if<ActStage>(&net.stages[s]);
               a != nullptr && a->kind == ActKind::NAct) {
      vel[s].phi.assign(a->phi.size(), {0.0, 0.0});
    }
  }
  return vel;
}

// One SGD update with Nesterov momentum:
//   v <- mu v + g,  p <- p - lr (g + mu v)   (plain momentum steps by v).
void sgd_step(Network& net, const Grads& grads, std::vector<Velocity>& vel,
              const std::vector<double>& lr, double momentum, bool nesterov) {
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    const StageGrad& sg = grads.stages[s];
    if (auto* d = std::get_if<DenseParams>(&net.stages[s])) {
      Velocity& v = vel[s];
      v.P = momentum * v.P + sg.d_P;
      v.b = momentum * v.b + sg.d_b;
      if (nesterov) {
        d->P -= lr[s] * (sg.d_P + momentum * v.P);
        d->b -= lr[s] * (sg.d_b + momentum * v.b);
      } else {
        d->P -= lr[s] * v.P;
        d->b -= lr[s] * v.b;
      }
      d->invalidate_caches();
      continue;
    }
    auto* a = std::get_if<ActStage>(&net.stages[s]);
    if (a == nullptr || a->kind != ActKind::NAct) continue;
    Velocity& v = vel[s];
    for (std::size_t c = 0; c < a->phi.size(); ++c) {
      for (int j = 0; j < 2; ++j) {
        const double g = sg.d_phi[c][j];
        v.phi[c][j] = momentum * v.phi[c][j] + g;
        const double dir = nesterov ? g + momentum * v.phi[c][j] : v.phi[c][j];
        double& p = j == 0 ? a->phi[c].theta1 : a->phi[c].theta2;
        p -= lr[s] * dir;
      }
    }
  }
}

constexpr std::array<double, 4> kCraEps = {36.0 / 255.0, 72.0 / 255.0,
                                           108.0 / 255.0, 255.0 / 255.0};

EpochStats evaluate(Network& net, const Dataset& data, double offset,
                    double temperature, int epoch_no) {
  EpochStats st;
  st.epoch = epoch_no;
  const std::size_t n = data.size();
  double total = 0.0;
  if (data.classification()) {
    int correct = 0;
    std::array<int, 4> robust = {0, 0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd out = forward(net, data.inputs[i], true).first;
      total += offset_ce_loss(out, data.labels[i], offset, temperature).loss;
      Eigen::Index am = 0;
      out.maxCoeff(&am);
      if (am != data.labels[i]) continue;
      ++correct;
      const double r = certified_radius(out);
      for (std::size_t j = 0; j < kCraEps.size(); ++j) {
        if (r >= kCraEps[j]) ++robust[j];
      }
    }
    st.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    for (std::size_t j = 0; j < kCraEps.size(); ++j) {
      st.cra[j] = static_cast<double>(robust[j]) / static_cast<double>(n);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd out = forward(net, data.inputs[i], true).first;
      total += mse_loss(out, data.targets[i]).loss;
    }
  }
  st.loss = total / static_cast<double>(n);
  return st;
}

void check_dataset(const Network& net, const Dataset& data,
                   const TrainConfig& cfg) {
  const std::size_t n = data.size();
  require(n > 0, ErrorCode::InvalidArgument, "dataset is empty");
  require(data.labels.empty() || data.targets.empty(),
          ErrorCode::InvalidArgument,
          "dataset carries both labels and regression targets");
  const int out_dim = net.out_dim();
  for (std::size_t i = 0; i < n; ++i) {
    require(data.inputs[i].size() == net.in_dim, ErrorCode::InvalidArgument,
            "dataset input dimension does not match the network");
  }
  if (data.classification()) {
    require(data.labels.size() == n, ErrorCode::InvalidArgument,
            "one label per input required");
    require(out_dim >= 2, ErrorCode::InvalidArgument,
            "classification needs at least two output scores");
    for (int label : data.labels) {
      require(label >= 0 && label < out_dim, ErrorCode::InvalidArgument,
              "label out of range");
    }
    require(cfg.loss == LossKind::OffsetCrossEntropy,
            ErrorCode::InvalidArgument,
            "labeled datasets train with the cross-entropy loss");
  } else {
    require(data.targets.size() == n, ErrorCode::InvalidArgument,
            "one target per input required");
    for (std::size_t i = 0; i < n; ++i) {
      require(data.targets[i].size() == out_dim, ErrorCode::InvalidArgument,
              "dataset target dimension does not match the network");
    }
    require(cfg.loss == LossKind::Mse, ErrorCode::InvalidArgument,
            "regression datasets train with the squared-error loss");
  }
}

}  // namespace

double one_cycle_lr(double peak, int step, int total_steps) {
  require(total_steps > 0, ErrorCode::InvalidArgument,
          "schedule needs a positive step count");
  require(step >= 0 && step < total_steps, ErrorCode::InvalidArgument,
          "schedule step out of range");
  const double start = peak / 25.0;
  const double floor = peak / 1e4;
  const int warm = std::max(1, static_cast<int>(std::llround(0.3 * total_steps)));
  if (step < warm) {
    const double t = static_cast<double>(step) / static_cast<double>(warm);
    return start + (peak - start) * t;
  }
  const int rest = total_steps - warm;
  double t = rest > 0
                 ? static_cast<double>(step - warm) / static_cast<double>(rest)
                 : 1.0;
  t = std::clamp(t, 0.0, 1.0);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

NActParams init_nact(InitStrategy strategy, int channel, std::mt19937_64& rng) {
  switch (strategy) {
    case InitStrategy::AbsId:
      // theta1 = -100 pushes the lower kink far outside the data range, so
      // even channels act as |x| and odd ones as the identity.
      return channel % 2 == 0 ? NActParams{-100.0, 0.0, false}
                              : NActParams{0.0, 0.0, false};
    case InitStrategy::Zero:
      return {0.0, 0.0, false};
    case InitStrategy::Random: {
      std::uniform_real_distribution<double> u(-5.0, 0.0);
      const double u1 = u(rng);
      const double u2 = u(rng);
      return {-std::pow(10.0, u1), std::pow(10.0, u2), false};
    }
  }
  throw Error(ErrorCode::Internal, "unhandled init strategy");
}

Network build_mlp(int in_dim, int width, int depth, int out_dim,
                  LayerKind kind, ModelAct act, InitStrategy init,
                  double nact_param_scale, std::mt19937_64& rng) {
  require(in_dim >= 1 && width >= 1 && depth >= 1 && out_dim >= 1,
          ErrorCode::InvalidArgument, "network dimensions must be positive");
  require(nact_param_scale != 0.0 && std::isfinite(nact_param_scale),
          ErrorCode::InvalidArgument, "nact_param_scale must be nonzero");
  Network net;
  net.in_dim = in_dim;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int layer = 0; layer < depth; ++layer) {
    const int din = layer == 0 ? in_dim : width;
    const int dout = layer == depth - 1 ? out_dim : width;
    DenseParams d;
    // CPL and SOC layers are square maps, so the width-changing ends of the
    // stack fall back to AOL.
    d.kind = (kind == LayerKind::CPL || kind == LayerKind::SOC) && din != dout
                 ? LayerKind::AOL
                 : kind;
    d.P.resize(dout, din);
    const double scale = 1.0 / std::sqrt(static_cast<double>(din));
    for (int r = 0; r < dout; ++r) {
      for (int c = 0; c < din; ++c) {
        d.P(r, c) = scale * gauss(rng);
      }
    }
    d.b = Eigen::VectorXd::Zero(dout);
    net.stages.emplace_back(std::move(d));
    if (layer + 1 == depth) continue;
    ActStage a;
    a.width = dout;
    switch (act) {
      case ModelAct::NAct: {
        a.kind = ActKind::NAct;
        a.param_scale = nact_param_scale;
        a.phi.resize(dout);
        for (int c = 0; c < dout; ++c) {
          const NActParams eff = init_nact(init, c, rng);
          a.phi[c] = {eff.theta1 / nact_param_scale,
                      eff.theta2 / nact_param_scale, false};
        }
        break;
      }
      case ModelAct::MaxMin:
        a.kind = ActKind::MaxMin;
        break;
      case ModelAct::Abs:
        a.kind = ActKind::Abs;
        break;
      case ModelAct::ReLU:
        a.kind = ActKind::ReLU;
        break;
    }
    net.stages.emplace_back(std::move(a));
  }
  net.validate();
  return net;
}

double network_audit(Network& net, int pairs, std::mt19937_64& rng) {
  net.validate();
  require(pairs > 0, ErrorCode::InvalidArgument, "audit needs pairs > 0");
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = net.in_dim;
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    Eigen::VectorXd x(d), y(d);
    for (int i = 0; i < d; ++i) x[i] = gauss(rng);
    if (p % 3 == 2) {
      // Tight pairs probe the local slope.
      for (int i = 0; i < d; ++i) y[i] = x[i] + 1e-3 * gauss(rng);
    } else {
      const double scale = p % 3 == 0 ? 1.0 : 10.0;
      x *= scale;
      for (int i = 0; i < d; ++i) y[i] = scale * gauss(rng);
    }
    const double dist = (x - y).norm();
    if (dist < 1e-9) continue;
    const double gap =
        (forward(net, x, true).first - forward(net, y, true).first).norm();
    worst = std::max(worst, gap / dist);
  }
  return worst;
}

TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg) {
  net.validate();
  require(cfg.epochs >= 0, ErrorCode::InvalidArgument,
          "epochs must be nonnegative");
  require(cfg.batch_size >= 1, ErrorCode::InvalidArgument,
          "batch_size must be positive");
  require(std::isfinite(cfg.learning_rate), ErrorCode::InvalidArgument,
          "learning_rate must be finite");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0,
          ErrorCode::InvalidArgument, "momentum must lie in [0, 1)");
  require(cfg.temperature > 0.0, ErrorCode::InvalidArgument,
          "temperature must be positive");
  check_dataset(net, data, cfg);
  const double offset =
      cfg.offset < 0.0 ? 2.0 * std::sqrt(2.0) * cfg.epsilon : cfg.offset;

  const std::vector<double> peaks = stage_peaks(net, cfg);
  std::vector<Velocity> vel = make_velocity(net);
  std::mt19937_64 rng(cfg.seed);
  // Audits draw from their own stream so they never disturb the shuffle
  // sequence.
  std::mt19937_64 audit_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  result.worst_audit_ratio = network_audit(net, 1000, audit_rng);

  const std::size_t n = data.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const int steps_per_epoch = static_cast<int>((n + bs - 1) / bs);
  const int total_steps = cfg.epochs * steps_per_epoch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> lrs(peaks.size(), 0.0);
  const int mid_epoch = (cfg.epochs + 1) / 2;

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      Grads grads = make_grads(net);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        Eigen::VectorXd augmented;
        const Eigen::VectorXd* xin = &data.inputs[i];
        if (cfg.augment) {
          augmented = cfg.augment(data.inputs[i], rng);
          xin = &augmented;
        }
        auto [out, tape] = forward(net, *xin, false);
        const LossResult l =
            data.classification()
                ? offset_ce_loss(out, data.labels[i], offset, cfg.temperature)
                : mse_loss(out, data.targets[i]);
        require(std::isfinite(l.loss), ErrorCode::Diverged,
                "training loss became non-finite at epoch " +
                    std::to_string(epoch + 1));
        backward(net, tape, l.d_pred, grads);
      }
      finalize_grads(net, grads);
      grads.scale(1.0 / static_cast<double>(end - start));
      for (std::size_t s = 0; s < peaks.size(); ++s) {
        lrs[s] = cfg.schedule == Schedule::OneCycle
                     ? one_cycle_lr(peaks[s], step, total_steps)
                     : peaks[s];
      }
      sgd_step(net, grads, vel, lrs, cfg.momentum, cfg.nesterov);
      ++step;
    }
    EpochStats st = evaluate(net, data, offset, cfg.temperature, epoch + 1);
    require(std::isfinite(st.loss), ErrorCode::Diverged,
            "evaluation loss became non-finite at epoch " +
                std::to_string(epoch + 1));
    result.history.push_back(st);
    if (epoch + 1 == mid_epoch || epoch + 1 == cfg.epochs) {
      result.worst_audit_ratio = std::max(
          result.worst_audit_ratio, network_audit(net, 1000, audit_rng));
    }
  }
  return result;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,loss,accuracy,cra36,cra72,cra108,cra255\n";
  for (const EpochStats& st : history) {
    os << st.epoch << ',' << st.loss;
    if (st.accuracy >= 0.0) {
      os << ',' << st.accuracy;
      for (double c : st.cra) os << ',' << c;
    } else {
      os << ",,,,,";
    }
    os << '\n';
  }
  return os.str();
}

ToyResult fit_toy(const ToyConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const CpwlFunction target = n_function();
  Dataset data;
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  constexpr int kPoints = 1000;
  data.inputs.reserve(kPoints);
  data.targets.reserve(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    const double x = unif(rng);
    data.inputs.push_back(Eigen::VectorXd::Constant(1, x));
    data.targets.push_back(Eigen::VectorXd::Constant(1, target.eval(x)));
  }

  const LayerKind kind = cfg.act == ModelAct::ReLU
                             ? LayerKind::UnconstrainedLinear
                             : LayerKind::AOL;
  ToyResult res;
  res.net = build_mlp(1, 40, 3, 1, kind, cfg.act, cfg.init,
                      /*nact_param_scale=*/0.1, rng);

  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.schedule = Schedule::Constant;
  tc.epochs = cfg.epochs;
  tc.batch_size = 100;
  tc.loss = LossKind::Mse;
  tc.nact_init = cfg.init;
  tc.seed = cfg.seed;
  res.train = train(res.net, data, tc);
  res.final_mse = evaluate(res.net, data, 0.0, 1.0, cfg.epochs).loss;
  return res;
}

}  // namespace nact
