#include "nact/network.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace nact {
namespace {

void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

Eigen::VectorXd cpl_apply(const DenseParams& p, const Eigen::VectorXd& x,
                          double sigma) {
  if (sigma < 1e-12) return x;
  Eigen::VectorXd z = p.P * x + p.b;
  return x - (2.0 / (sigma * sigma)) * (p.P.transpose() * z.cwiseMax(0.0));
}

}  // namespace

int stage_in_dim(const Stage& s) {
  if (const auto* d = std::get_if<DenseParams>(&s)) return d->in_dim();
  return std::get<ActStage>(s).width;
}

int stage_out_dim(const Stage& s) {
  if (const auto* d = std::get_if<DenseParams>(&s)) return d->out_dim();
  return std::get<ActStage>(s).width;
}

int Network::out_dim() const {
  return stages.empty() ? in_dim : stage_out_dim(stages.back());
}

void Network::validate() const {
  int cur = in_dim;
  for (const auto& s : stages) {
    require(stage_in_dim(s) == cur, ErrorCode::InvalidArgument,
            "stage input dimension does not match the previous stage");
    if (const auto* a = std::get_if<ActStage>(&s)) {
      if (a->kind == ActKind::NAct)
        require(static_cast<int>(a->phi.size()) == a->width,
                ErrorCode::InvalidArgument,
                "NAct stage needs one parameter pair per channel");
    }
    cur = stage_out_dim(s);
  }
}

Eigen::VectorXd act_forward(const ActStage& act, const Eigen::VectorXd& x) {
  Eigen::VectorXd y(x.size());
  switch (act.kind) {
    case ActKind::NAct:
      for (int i = 0; i < x.size(); ++i) y[i] = n_act(x[i], act.effective(i));
      return y;
    case ActKind::MaxMin: {
      int i = 0;
      for (; i + 1 < x.size(); i += 2) {
        auto [mx, mn] = maxmin(x[i], x[i + 1]);
        y[i] = mx;
        y[i + 1] = mn;
      }
      if (i < x.size()) y[i] = x[i];
      return y;
    }
    default:
      for (int i = 0; i < x.size(); ++i) y[i] = scalar_act(act.kind, x[i]);
      return y;
  }
}

Eigen::VectorXd Network::eval(const Eigen::VectorXd& x) {
  return forward(*this, x, /*eval_mode=*/true).first;
}

double Network::eval1(double x) {
  Eigen::VectorXd v(1);
  v[0] = x;
  Eigen::VectorXd out = eval(v);
  require(out.size() == 1, ErrorCode::InvalidArgument,
          "eval1 needs a scalar-output network");
  return out[0];
}

std::pair<Eigen::VectorXd, Tape> forward(Network& net, const Eigen::VectorXd& x,
                                         bool eval_mode) {
  require(x.size() == net.in_dim, ErrorCode::InvalidArgument,
          "network input dimension mismatch");
  Tape tape;
  tape.eval_mode = eval_mode;
  Eigen::VectorXd cur = x;
  for (auto& s : net.stages) {
    Tape::Entry entry;
    entry.input = cur;
    if (auto* d = std::get_if<DenseParams>(&s)) {
      if (d->kind == LayerKind::CPL) {
        entry.sigma_hat = ensure_cpl_sigma(*d);
        cur = cpl_apply(*d, cur, entry.sigma_hat);
      } else {
        cur = dense_forward(*d, cur, eval_mode);
      }
    } else {
      cur = act_forward(std::get<ActStage>(s), cur);
    }
    tape.entries.push_back(std::move(entry));
  }
  tape.output = cur;
  return {cur, std::move(tape)};
}

void Grads::scale(double s) {
  for (auto& g : stages) {
    if (g.d_P.size()) g.d_P *= s;
    if (g.d_b.size()) g.d_b *= s;
    if (g.aol_c.size()) g.aol_c *= s;
    for (auto& t : g.d_phi) {
      t[0] *= s;
      t[1] *= s;
    }
  }
}

Grads make_grads(const Network& net) {
  Grads grads;
  grads.stages.resize(net.stages.size());
  for (size_t i = 0; i < net.stages.size(); ++i) {
    if (const auto* d = std::get_if<DenseParams>(&net.stages[i])) {
      grads.stages[i].d_P = Eigen::MatrixXd::Zero(d->P.rows(), d->P.cols());
      grads.stages[i].d_b = Eigen::VectorXd::Zero(d->b.size());
      if (d->kind == LayerKind::AOL)
        grads.stages[i].aol_c = Eigen::VectorXd::Zero(d->P.cols());
    } else {
      const auto& a = std::get<ActStage>(net.stages[i]);
      if (a.kind == ActKind::NAct)
        grads.stages[i].d_phi.assign(a.phi.size(), {0.0, 0.0});
    }
  }
  return grads;
}

void backward(Network& net, const Tape& tape, const Eigen::VectorXd& upstream,
              Grads& grads) {
  require(tape.entries.size() == net.stages.size(), ErrorCode::InvalidArgument,
          "tape does not match the network");
  require(grads.stages.size() == net.stages.size(), ErrorCode::InvalidArgument,
          "gradient accumulator does not match the network");
  Eigen::VectorXd up = upstream;
  for (int i = static_cast<int>(net.stages.size()) - 1; i >= 0; --i) {
    const Eigen::VectorXd& x = tape.entries[i].input;
    StageGrad& sg = grads.stages[i];
    if (auto* d = std::get_if<DenseParams>(&net.stages[i])) {
      switch (d->kind) {
        case LayerKind::AOL: {
          // The diagonal path is deferred: accumulate c, materialize in
          // finalize_grads (exact, since the term is linear in c).
          const Eigen::VectorXd& diag = aol_diag(d->P);
          Eigen::VectorXd ptu = d->P.transpose() * up;
          sg.d_P += up * diag.cwiseProduct(x).transpose();
          sg.aol_c += ptu.cwiseProduct(x);
          sg.d_b += up;
          up = diag.cwiseProduct(ptu);
          break;
        }
        case LayerKind::CPL: {
          LayerGrads lg = cpl_vjp(*d, x, up, tape.entries[i].sigma_hat);
          sg.d_P += lg.d_P;
          sg.d_b += lg.d_b;
          up = lg.d_x;
          break;
        }
        default: {
          LayerGrads lg = layer_vjp(*d, x, up);
          sg.d_P += lg.d_P;
          sg.d_b += lg.d_b;
          up = lg.d_x;
          break;
        }
      }
    } else {
      const auto& a = std::get<ActStage>(net.stages[i]);
      Eigen::VectorXd next(up.size());
      switch (a.kind) {
        case ActKind::NAct:
          for (int c = 0; c < up.size(); ++c) {
            NActGrad g = n_act_grad(x[c], a.effective(c));
            next[c] = up[c] * g.d_x;
            sg.d_phi[c][0] += up[c] * g.d_theta1 * a.param_scale;
            sg.d_phi[c][1] += up[c] * g.d_theta2 * a.param_scale;
          }
          break;
        case ActKind::MaxMin: {
          int c = 0;
          for (; c + 1 < up.size(); c += 2) {
            // Ties route the max output's gradient to the first channel.
            if (x[c] >= x[c + 1]) {
              next[c] = up[c];
              next[c + 1] = up[c + 1];
            } else {
              next[c] = up[c + 1];
              next[c + 1] = up[c];
            }
          }
          if (c < up.size()) next[c] = up[c];
          break;
        }
        default:
          for (int c = 0; c < up.size(); ++c)
            next[c] = up[c] * scalar_act_grad(a.kind, x[c]);
          break;
      }
      up = next;
    }
  }
}

void finalize_grads(const Network& net, Grads& grads) {
  for (size_t i = 0; i < net.stages.size(); ++i) {
    const auto* d = std::get_if<DenseParams>(&net.stages[i]);
    if (!d || d->kind != LayerKind::AOL) continue;
    StageGrad& sg = grads.stages[i];
    if (sg.aol_c.size() == 0) continue;
    sg.d_P += aol_diag_grad_term(d->P, sg.aol_c);
    sg.aol_c.setZero();
  }
}

Grads backward_single(Network& net, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& upstream, bool eval_mode) {
  auto [out, tape] = forward(net, x, eval_mode);
  (void)out;
  Grads grads = make_grads(net);
  backward(net, tape, upstream, grads);
  finalize_grads(net, grads);
  return grads;
}

LossResult mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  require(pred.size() == target.size() && pred.size() > 0,
          ErrorCode::InvalidArgument, "prediction/target length mismatch");
  Eigen::VectorXd diff = pred - target;
  double n = static_cast<double>(pred.size());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

LossResult offset_ce_loss(const Eigen::VectorXd& scores, int label,
                          double offset, double temperature) {
  require(temperature > 0.0, ErrorCode::InvalidArgument,
          "temperature must be positive");
  require(label >= 0 && label < scores.size(), ErrorCode::InvalidArgument,
          "label out of range");
  Eigen::VectorXd shifted = scores;
  shifted[label] -= offset;
  Eigen::VectorXd logits = shifted / temperature;
  double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp();
  double z = p.sum();
  p /= z;
  double loss = -temperature * (logits[label] - m - std::log(z));
  Eigen::VectorXd d = p;
  d[label] -= 1.0;
  return {loss, d};
}

double certified_radius(const Eigen::VectorXd& scores, double factor) {
  require(scores.size() >= 2, ErrorCode::InvalidArgument,
          "certified radius needs at least two scores");
  double top = -std::numeric_limits<double>::infinity();
  double second = top;
  for (int i = 0; i < scores.size(); ++i) {
    if (scores[i] > top) {
      second = top;
      top = scores[i];
    } else if (scores[i] > second) {
      second = scores[i];
    }
  }
  return (top - second) / factor;
}

namespace {

// Branch decisions that make the network piecewise smooth in its parameters;
// finite differences are only compared when these are unchanged under the
// +/-h perturbations.
void collect_signature(const Network& net, const Eigen::VectorXd& x,
                       const std::vector<double>& frozen_sigmas,
                       std::vector<int>& sig, Eigen::VectorXd* out) {
  Eigen::VectorXd cur = x;
  for (size_t i = 0; i < net.stages.size(); ++i) {
    if (const auto* d = std::get_if<DenseParams>(&net.stages[i])) {
      if (d->kind == LayerKind::AOL) {
        Eigen::MatrixXd S = d->P.transpose() * d->P;
        for (Eigen::Index r = 0; r < S.rows(); ++r)
          for (Eigen::Index c = 0; c < S.cols(); ++c)
            sig.push_back(S(r, c) > 0.0 ? 1 : (S(r, c) < 0.0 ? -1 : 0));
        cur = aol_forward(*d, cur);
      } else if (d->kind == LayerKind::CPL) {
        Eigen::VectorXd z = d->P * cur + d->b;
        for (Eigen::Index r = 0; r < z.size(); ++r)
          sig.push_back(z[r] >= 0.0 ? 1 : 0);
        cur = cpl_apply(*d, cur, frozen_sigmas[i]);
      } else {
        cur = dense_forward(*d, cur, /*eval_mode=*/false);
      }
    } else {
      const auto& a = std::get<ActStage>(net.stages[i]);
      switch (a.kind) {
        case ActKind::NAct:
          for (int c = 0; c < cur.size(); ++c) {
            NActParams p = a.effective(c);
            if (p.abs_mode) {
              sig.push_back(cur[c] >= p.theta2 ? 1 : 0);
            } else {
              double tmin = std::min(p.theta1, p.theta2);
              double tmax = std::max(p.theta1, p.theta2);
              sig.push_back(cur[c] < tmin ? 0 : (cur[c] < tmax ? 1 : 2));
            }
          }
          break;
        case ActKind::MaxMin:
          for (int c = 0; c + 1 < cur.size(); c += 2)
            sig.push_back(cur[c] >= cur[c + 1] ? 1 : 0);
          break;
        case ActKind::Abs:
        case ActKind::ReLU:
          for (int c = 0; c < cur.size(); ++c)
            sig.push_back(cur[c] >= 0.0 ? 1 : 0);
          break;
        default:
          break;
      }
      cur = act_forward(a, cur);
    }
  }
  if (out) *out = cur;
}

void invalidate_all(Network& net) {
  for (auto& s : net.stages)
    if (auto* d = std::get_if<DenseParams>(&s)) d->invalidate_caches();
}

}  // namespace

GradCheckResult grad_check(Network& net, const Eigen::VectorXd& x, double h) {
  require(h > 0.0, ErrorCode::InvalidArgument, "step size must be positive");
  net.validate();
  invalidate_all(net);
  auto [out, tape] = forward(net, x, /*eval_mode=*/false);

  std::vector<double> sigmas(net.stages.size(), 0.0);
  for (size_t i = 0; i < net.stages.size(); ++i)
    sigmas[i] = tape.entries[i].sigma_hat;

  Eigen::VectorXd u(out.size());
  for (int i = 0; i < out.size(); ++i) u[i] = 1.0 + 0.37 * i;
  u.normalize();

  Grads grads = make_grads(net);
  backward(net, tape, u, grads);
  finalize_grads(net, grads);

  std::vector<int> base_sig;
  collect_signature(net, x, sigmas, base_sig, nullptr);

  GradCheckResult res;
  auto loss_and_sig = [&](std::vector<int>& sig) {
    Eigen::VectorXd y;
    sig.clear();
    collect_signature(net, x, sigmas, sig, &y);
    return u.dot(y);
  };
  auto check_param = [&](double* p, double analytic) {
    double saved = *p;
    std::vector<int> sig_p, sig_m;
    *p = saved + h;
    invalidate_all(net);
    double lp = loss_and_sig(sig_p);
    *p = saved - h;
    invalidate_all(net);
    double lm = loss_and_sig(sig_m);
    *p = saved;
    invalidate_all(net);
    if (sig_p != base_sig || sig_m != base_sig) {
      res.skipped++;
      return;
    }
    double fd = (lp - lm) / (2.0 * h);
    double err = std::abs(analytic - fd) /
                 std::max({std::abs(analytic), std::abs(fd), 1e-2});
    res.max_rel_error = std::max(res.max_rel_error, err);
    res.checked++;
  };

  for (size_t i = 0; i < net.stages.size(); ++i) {
    if (auto* d = std::get_if<DenseParams>(&net.stages[i])) {
      for (Eigen::Index r = 0; r < d->P.rows(); ++r)
        for (Eigen::Index c = 0; c < d->P.cols(); ++c)
          check_param(&d->P(r, c), grads.stages[i].d_P(r, c));
      for (Eigen::Index r = 0; r < d->b.size(); ++r)
        check_param(&d->b[r], grads.stages[i].d_b[r]);
    } else {
      auto& a = std::get<ActStage>(net.stages[i]);
      if (a.kind != ActKind::NAct) continue;
      for (size_t c = 0; c < a.phi.size(); ++c) {
        if (!a.phi[c].abs_mode)
          check_param(&a.phi[c].theta1, grads.stages[i].d_phi[c][0]);
        check_param(&a.phi[c].theta2, grads.stages[i].d_phi[c][1]);
      }
    }
  }
  return res;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw Error(ErrorCode::Parse, "ragged matrix in checkpoint");
    for (size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

std::string act_kind_name(ActKind k) {
  switch (k) {
    case ActKind::NAct:
      return "nact";
    case ActKind::MaxMin:
      return "maxmin";
    case ActKind::Abs:
      return "abs";
    case ActKind::ReLU:
      return "relu";
    case ActKind::Identity:
      return "identity";
  }
  return "identity";
}

ActKind act_kind_from_name(const std::string& s) {
  if (s == "nact") return ActKind::NAct;
  if (s == "maxmin") return ActKind::MaxMin;
  if (s == "abs") return ActKind::Abs;
  if (s == "relu") return ActKind::ReLU;
  if (s == "identity") return ActKind::Identity;
  throw Error(ErrorCode::Parse, "unknown activation kind: " + s);
}

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::AOL:
      return "aol";
    case LayerKind::CPL:
      return "cpl";
    case LayerKind::SOC:
      return "soc";
    case LayerKind::UnconstrainedLinear:
      return "linear";
  }
  return "linear";
}

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "aol") return LayerKind::AOL;
  if (s == "cpl") return LayerKind::CPL;
  if (s == "soc") return LayerKind::SOC;
  if (s == "linear") return LayerKind::UnconstrainedLinear;
  throw Error(ErrorCode::Parse, "unknown layer kind: " + s);
}

}  // namespace

std::string network_to_json(const Network& net) {
  nlohmann::json j;
  j["in_dim"] = net.in_dim;
  j["out_dim"] = net.out_dim();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& s : net.stages) {
    nlohmann::json entry;
    if (const auto* d = std::get_if<DenseParams>(&s)) {
      entry["kind"] = layer_kind_name(d->kind);
      entry["P"] = matrix_to_json(d->P);
      entry["b"] = std::vector<double>(d->b.data(), d->b.data() + d->b.size());
      if (d->kind == LayerKind::SOC) {
        entry["k_train"] = d->k_train;
        entry["k_eval"] = d->k_eval;
      }
    } else {
      const auto& a = std::get<ActStage>(s);
      entry["kind"] = "act";
      nlohmann::json act;
      act["kind"] = act_kind_name(a.kind);
      act["width"] = a.width;
      if (a.kind == ActKind::NAct) {
        act["param_scale"] = a.param_scale;
        nlohmann::json theta = nlohmann::json::array();
        nlohmann::json phi = nlohmann::json::array();
        nlohmann::json abs_mode = nlohmann::json::array();
        for (int c = 0; c < a.width; ++c) {
          NActParams eff = a.effective(c);
          theta.push_back({eff.theta1, eff.theta2});
          phi.push_back({a.phi[c].theta1, a.phi[c].theta2});
          abs_mode.push_back(a.phi[c].abs_mode);
        }
        act["theta"] = std::move(theta);
        act["phi"] = std::move(phi);
        act["abs_mode"] = std::move(abs_mode);
      }
      entry["act"] = std::move(act);
    }
    layers.push_back(std::move(entry));
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

Network network_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Parse, std::string("invalid JSON: ") + e.what());
  }
  try {
    Network net;
    net.in_dim = j.at("in_dim").get<int>();
    for (const auto& entry : j.at("layers")) {
      std::string kind = entry.at("kind").get<std::string>();
      if (kind == "act") {
        const auto& aj = entry.at("act");
        ActStage a;
        a.kind = act_kind_from_name(aj.at("kind").get<std::string>());
        a.width = aj.at("width").get<int>();
        if (a.kind == ActKind::NAct) {
          a.param_scale = aj.value("param_scale", 1.0);
          std::vector<std::vector<double>> pairs;
          if (aj.contains("phi")) {
            pairs = aj.at("phi").get<std::vector<std::vector<double>>>();
          } else {
            pairs = aj.at("theta").get<std::vector<std::vector<double>>>();
            a.param_scale = 1.0;
          }
          std::vector<bool> abs_mode(pairs.size(), false);
          if (aj.contains("abs_mode"))
            abs_mode = aj.at("abs_mode").get<std::vector<bool>>();
          if (pairs.size() != abs_mode.size())
            throw Error(ErrorCode::Parse, "theta/abs_mode length mismatch");
          for (size_t c = 0; c < pairs.size(); ++c) {
            if (pairs[c].size() != 2)
              throw Error(ErrorCode::Parse, "theta entries must be pairs");
            a.phi.push_back({pairs[c][0], pairs[c][1], bool(abs_mode[c])});
          }
        }
        net.stages.emplace_back(std::move(a));
      } else {
        DenseParams d;
        d.kind = layer_kind_from_name(kind);
        d.P = matrix_from_json(entry.at("P"));
        auto bv = entry.at("b").get<std::vector<double>>();
        d.b = Eigen::Map<Eigen::VectorXd>(bv.data(), bv.size());
        d.k_train = entry.value("k_train", 5);
        d.k_eval = entry.value("k_eval", 12);
        net.stages.emplace_back(std::move(d));
      }
    }
    net.validate();
    if (j.contains("out_dim") && j.at("out_dim").get<int>() != net.out_dim())
      throw Error(ErrorCode::Parse, "checkpoint out_dim disagrees with stages");
    return net;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Parse, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace nact
