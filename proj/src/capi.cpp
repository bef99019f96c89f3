#include "nact/nact.h"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <utility>

#include "nact/compiler.hpp"
#include "nact/data.hpp"
#include "nact/network.hpp"
#include "nact/pwl.hpp"
#include "nact/train.hpp"

using nlohmann::json;

struct nact_cpwl {
  nact::CpwlFunction f;
};

struct nact_network {
  nact::Network net;
};

namespace {

thread_local std::string t_last_error;

nact_status status_of(nact::ErrorCode code) {
  switch (code) {
    case nact::ErrorCode::InvalidArgument:
      return NACT_ERR_INVALID_ARGUMENT;
    case nact::ErrorCode::Io:
      return NACT_ERR_IO;
    case nact::ErrorCode::Parse:
      return NACT_ERR_PARSE;
    case nact::ErrorCode::Diverged:
      return NACT_ERR_DIVERGED;
    case nact::ErrorCode::CheckFailed:
      return NACT_ERR_CHECK_FAILED;
    case nact::ErrorCode::Internal:
      break;
  }
  return NACT_ERR_INTERNAL;
}

// Runs fn, translating exceptions into status codes + thread-local message.
template <typename Fn>
nact_status guard(Fn&& fn) {
  try {
    fn();
    return NACT_OK;
  } catch (const nact::Error& e) {
    t_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    t_last_error = e.what();
    return NACT_ERR_PARSE;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return NACT_ERR_INTERNAL;
  }
}

void require(bool cond, nact::ErrorCode code, const std::string& what) {
  if (!cond) throw nact::Error(code, what);
}

void require_arg(bool cond, const char* what) {
  require(cond, nact::ErrorCode::InvalidArgument, what);
}

// Heap copy released by nact_string_free (malloc/free pairing, so the
// boundary stays C-clean).
char* copy_out(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  require(p != nullptr, nact::ErrorCode::Internal, "out of memory");
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

json parse_config(const char* config_json) {
  if (config_json == nullptr || *config_json == '\0') return json::object();
  json cfg = json::parse(config_json, nullptr, /*allow_exceptions=*/false);
  require(!cfg.is_discarded() && cfg.is_object(), nact::ErrorCode::Parse,
          "config must be a JSON object");
  return cfg;
}

nact::LayerKind parse_layer_kind(const std::string& s) {
  if (s == "aol") return nact::LayerKind::AOL;
  if (s == "cpl") return nact::LayerKind::CPL;
  if (s == "soc") return nact::LayerKind::SOC;
  if (s == "unconstrained") return nact::LayerKind::UnconstrainedLinear;
  throw nact::Error(nact::ErrorCode::InvalidArgument,
                    "unknown layer_type: " + s);
}

nact::ModelAct parse_activation(const std::string& s) {
  if (s == "nact") return nact::ModelAct::NAct;
  if (s == "maxmin") return nact::ModelAct::MaxMin;
  if (s == "abs") return nact::ModelAct::Abs;
  if (s == "relu") return nact::ModelAct::ReLU;
  throw nact::Error(nact::ErrorCode::InvalidArgument,
                    "unknown activation: " + s);
}

nact::InitStrategy parse_init(const std::string& s) {
  if (s == "absid") return nact::InitStrategy::AbsId;
  if (s == "zero") return nact::InitStrategy::Zero;
  if (s == "random") return nact::InitStrategy::Random;
  throw nact::Error(nact::ErrorCode::InvalidArgument,
                    "unknown nact_init: " + s);
}

nact::ModelAct act_from(const json& cfg) {
  return parse_activation(cfg.value("activation", std::string("nact")));
}

// Dataset selection shared by train and certify.
nact::Dataset load_dataset(const json& cfg, bool test_split) {
  const std::string name = cfg.value("dataset", std::string("moons"));
  if (name == "moons") {
    const int per_class = cfg.value("moons_per_class", 500);
    const double noise = cfg.value("moons_noise", 0.1);
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    // The synthetic set has no held-out split; certify on it reuses the
    // training draw unless the caller picks another seed.
    return nact::two_moons(per_class, noise, seed);
  }
  if (name == "cifar10") {
    require(cfg.contains("data_dir"), nact::ErrorCode::InvalidArgument,
            "cifar10 needs data_dir");
    nact::Cifar10 all = nact::load_cifar10(cfg.at("data_dir").get<std::string>());
    return test_split ? std::move(all.test) : std::move(all.train);
  }
  throw nact::Error(nact::ErrorCode::InvalidArgument,
                    "unknown dataset: " + name);
}

nact::Network build_from_config(const json& cfg, int in_dim, int out_dim) {
  const int width = cfg.value("width", 16);
  const int depth = cfg.value("depth", 3);
  const nact::LayerKind kind =
      parse_layer_kind(cfg.value("layer_type", std::string("aol")));
  const nact::InitStrategy init =
      parse_init(cfg.value("nact_init", std::string("absid")));
  const double param_scale = cfg.value("nact_param_scale", 0.1);
  std::mt19937_64 rng(cfg.value("seed", std::uint64_t{0}));
  return nact::build_mlp(in_dim, width, depth, out_dim, kind, act_from(cfg),
                         init, param_scale, rng);
}

nact::TrainConfig train_config_from(const json& cfg) {
  nact::TrainConfig tc;
  tc.learning_rate = cfg.value("lr", -1.0);
  tc.momentum = cfg.value("momentum", 0.9);
  tc.nesterov = cfg.value("nesterov", true);
  const std::string sched = cfg.value("schedule", std::string("one_cycle"));
  if (sched == "one_cycle") {
    tc.schedule = nact::Schedule::OneCycle;
  } else if (sched == "constant") {
    tc.schedule = nact::Schedule::Constant;
  } else {
    throw nact::Error(nact::ErrorCode::InvalidArgument,
                      "unknown schedule: " + sched);
  }
  tc.epochs = cfg.value("epochs", 20);
  tc.batch_size = cfg.value("batch_size", 256);
  tc.epsilon = cfg.value("epsilon", 36.0 / 255.0);
  tc.offset = cfg.value("offset", -1.0);
  tc.temperature = cfg.value("temperature", 0.25);
  tc.nact_init = parse_init(cfg.value("nact_init", std::string("absid")));
  tc.nact_lr_scale = cfg.value("nact_param_scale", 0.1);
  tc.seed = cfg.value("seed", std::uint64_t{0});
  return tc;
}

json report_to_json(const nact::CompileReport& r) {
  return json{{"linear_layer_count", r.linear_layer_count},
              {"n_act_count", r.n_act_count},
              {"abs_act_count", r.abs_act_count},
              {"max_abs_error", r.max_abs_error},
              {"probe_count", r.probe_count},
              {"max_linear_spectral_norm", r.max_linear_spectral_norm},
              {"counts_pass", r.counts_pass},
              {"spectral_pass", r.spectral_pass},
              {"error_pass", r.error_pass},
              {"pass", r.pass}};
}

json stats_to_json(const nact::EpochStats& st) {
  json j{{"epoch", st.epoch}, {"loss", st.loss}};
  if (st.accuracy >= 0.0) {
    j["accuracy"] = st.accuracy;
    j["cra36"] = st.cra[0];
    j["cra72"] = st.cra[1];
    j["cra108"] = st.cra[2];
    j["cra255"] = st.cra[3];
  }
  return j;
}

}  // namespace

extern "C" {

const char* nact_last_error(void) { return t_last_error.c_str(); }

void nact_string_free(char* s) { std::free(s); }

nact_status nact_cpwl_create(const double* breakpoints, size_t n_breakpoints,
                             const double* slopes, size_t n_slopes,
                             double anchor_x, double anchor_y,
                             nact_cpwl** out) {
  return guard([&] {
    require_arg(out != nullptr, "out must not be NULL");
    require_arg(breakpoints != nullptr || n_breakpoints == 0,
                "breakpoints must not be NULL");
    require_arg(slopes != nullptr, "slopes must not be NULL");
    auto f = nact::CpwlFunction::make(
        std::vector<double>(breakpoints, breakpoints + n_breakpoints),
        std::vector<double>(slopes, slopes + n_slopes),
        {anchor_x, anchor_y});
    *out = new nact_cpwl{std::move(f)};
  });
}

nact_status nact_cpwl_n_function(nact_cpwl** out) {
  return guard([&] {
    require_arg(out != nullptr, "out must not be NULL");
    *out = new nact_cpwl{nact::n_function()};
  });
}

nact_status nact_cpwl_random(int kinks, double lo, double hi, uint64_t seed,
                             nact_cpwl** out) {
  return guard([&] {
    require_arg(out != nullptr, "out must not be NULL");
    std::mt19937_64 rng(seed);
    *out = new nact_cpwl{nact::random_cpwl(kinks, lo, hi, rng)};
  });
}

nact_status nact_cpwl_from_json(const char* text, nact_cpwl** out) {
  return guard([&] {
    require_arg(out != nullptr && text != nullptr,
                "text and out must not be NULL");
    *out = new nact_cpwl{nact::cpwl_from_json(text)};
  });
}

nact_status nact_cpwl_to_json(const nact_cpwl* f, char** out) {
  return guard([&] {
    require_arg(f != nullptr && out != nullptr, "f and out must not be NULL");
    *out = copy_out(nact::cpwl_to_json(f->f));
  });
}

nact_status nact_cpwl_eval(const nact_cpwl* f, double x, double* out) {
  return guard([&] {
    require_arg(f != nullptr && out != nullptr, "f and out must not be NULL");
    *out = f->f.eval(x);
  });
}

void nact_cpwl_free(nact_cpwl* f) { delete f; }

nact_status nact_compile(const nact_cpwl* f, nact_network** out) {
  return guard([&] {
    require_arg(f != nullptr && out != nullptr, "f and out must not be NULL");
    *out = new nact_network{nact::compile(f->f)};
  });
}

nact_status nact_compile_bounded(const nact_cpwl* f, double lo, double hi,
                                 nact_network** out) {
  return guard([&] {
    require_arg(f != nullptr && out != nullptr, "f and out must not be NULL");
    *out = new nact_network{nact::compile_bounded(f->f, lo, hi)};
  });
}

nact_status nact_verify(nact_network* net, const nact_cpwl* f, double lo,
                        double hi, char** report_json, int* pass) {
  return guard([&] {
    require_arg(net != nullptr && f != nullptr, "net and f must not be NULL");
    const nact::CompileReport r =
        nact::verify_compiled(net->net, f->f, lo, hi);
    if (report_json != nullptr) {
      *report_json = copy_out(report_to_json(r).dump(2));
    }
    if (pass != nullptr) *pass = r.pass ? 1 : 0;
  });
}

nact_status nact_long_range_slope(nact_network* net, double x0, double delta,
                                  double* out) {
  return guard([&] {
    require_arg(net != nullptr && out != nullptr,
                "net and out must not be NULL");
    *out = nact::long_range_slope(net->net, x0, delta);
  });
}

nact_status nact_network_from_json(const char* text, nact_network** out) {
  return guard([&] {
    require_arg(text != nullptr && out != nullptr,
                "text and out must not be NULL");
    *out = new nact_network{nact::network_from_json(text)};
  });
}

nact_status nact_network_to_json(const nact_network* net, char** out) {
  return guard([&] {
    require_arg(net != nullptr && out != nullptr,
                "net and out must not be NULL");
    *out = copy_out(nact::network_to_json(net->net));
  });
}

nact_status nact_network_dims(const nact_network* net, int* in_dim,
                              int* out_dim) {
  return guard([&] {
    require_arg(net != nullptr, "net must not be NULL");
    if (in_dim != nullptr) *in_dim = net->net.in_dim;
    if (out_dim != nullptr) *out_dim = net->net.out_dim();
  });
}

nact_status nact_network_eval(nact_network* net, const double* x, size_t n,
                              double* y, size_t m) {
  return guard([&] {
    require_arg(net != nullptr && x != nullptr && y != nullptr,
                "net, x and y must not be NULL");
    require_arg(n == static_cast<size_t>(net->net.in_dim),
                "x length must equal in_dim");
    require_arg(m == static_cast<size_t>(net->net.out_dim()),
                "y length must equal out_dim");
    Eigen::VectorXd xv(n);
    for (size_t i = 0; i < n; ++i) xv[static_cast<Eigen::Index>(i)] = x[i];
    const Eigen::VectorXd yv = net->net.eval(xv);
    for (size_t i = 0; i < m; ++i) y[i] = yv[static_cast<Eigen::Index>(i)];
  });
}

void nact_network_free(nact_network* net) { delete net; }

nact_status nact_build_mlp(const char* config_json, nact_network** out) {
  return guard([&] {
    require_arg(out != nullptr, "out must not be NULL");
    const json cfg = parse_config(config_json);
    const int in_dim = cfg.value("in_dim", 2);
    const int out_dim = cfg.value("out_dim", 2);
    *out = new nact_network{build_from_config(cfg, in_dim, out_dim)};
  });
}

nact_status nact_network_audit(nact_network* net, int pairs, uint64_t seed,
                               double* worst) {
  return guard([&] {
    require_arg(net != nullptr && worst != nullptr,
                "net and worst must not be NULL");
    std::mt19937_64 rng(seed);
    *worst = nact::network_audit(net->net, pairs, rng);
  });
}

nact_status nact_grad_check_random(nact_network* net, uint64_t seed, double h,
                                   double* max_rel_error, int* checked,
                                   int* skipped) {
  return guard([&] {
    require_arg(net != nullptr, "net must not be NULL");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd x(net->net.in_dim);
    for (int i = 0; i < net->net.in_dim; ++i) x[i] = gauss(rng);
    const nact::GradCheckResult r =
        nact::grad_check(net->net, x, h > 0.0 ? h : 1e-6);
    if (max_rel_error != nullptr) *max_rel_error = r.max_rel_error;
    if (checked != nullptr) *checked = r.checked;
    if (skipped != nullptr) *skipped = r.skipped;
  });
}

nact_status nact_fit_toy(const char* config_json, char** result_json,
                         nact_network** net_out) {
  return guard([&] {
    const json cfg = parse_config(config_json);
    nact::ToyConfig tc;
    tc.act = act_from(cfg);
    tc.init = parse_init(cfg.value("nact_init", std::string("absid")));
    tc.seed = cfg.value("seed", std::uint64_t{0});
    tc.epochs = cfg.value("epochs", 1000);
    nact::ToyResult res = nact::fit_toy(tc);
    if (result_json != nullptr) {
      const json j{{"history_csv", nact::history_to_csv(res.train.history)},
                   {"final_mse", res.final_mse},
                   {"worst_audit_ratio", res.train.worst_audit_ratio}};
      *result_json = copy_out(j.dump(2));
    }
    if (net_out != nullptr) *net_out = new nact_network{std::move(res.net)};
  });
}

nact_status nact_train(const char* config_json, char** result_json,
                       nact_network** net_out) {
  return guard([&] {
    const json cfg = parse_config(config_json);
    nact::Dataset data =
        load_dataset(cfg, cfg.value("split", std::string("train")) == "test");
    require(data.classification(), nact::ErrorCode::InvalidArgument,
            "train expects a labeled dataset");
    int classes = 0;
    for (int label : data.labels) classes = std::max(classes, label + 1);
    classes = std::max(classes, 2);
    const int in_dim = static_cast<int>(data.inputs.front().size());
    nact::Network net = build_from_config(cfg, in_dim, classes);
    nact::TrainConfig tc = train_config_from(cfg);
    tc.loss = nact::LossKind::OffsetCrossEntropy;
    if (cfg.value("augment", false)) {
      require(cfg.value("dataset", std::string("moons")) == "cifar10",
              nact::ErrorCode::InvalidArgument,
              "augmentation applies to cifar10 inputs only");
      tc.augment = [](const Eigen::VectorXd& img, std::mt19937_64& rng) {
        return nact::augment_cifar_image(img, rng);
      };
    }
    const nact::TrainResult tr = nact::train(net, data, tc);
    if (result_json != nullptr) {
      json j{{"history_csv", nact::history_to_csv(tr.history)},
             {"worst_audit_ratio", tr.worst_audit_ratio}};
      if (!tr.history.empty()) j["final"] = stats_to_json(tr.history.back());
      *result_json = copy_out(j.dump(2));
    }
    if (net_out != nullptr) *net_out = new nact_network{std::move(net)};
  });
}

nact_status nact_certify(nact_network* net, const char* config_json,
                         char** report_csv) {
  return guard([&] {
    require_arg(net != nullptr && report_csv != nullptr,
                "net and report_csv must not be NULL");
    const json cfg = parse_config(config_json);
    nact::Dataset data =
        load_dataset(cfg, cfg.value("split", std::string("test")) == "test");
    require(data.classification(), nact::ErrorCode::InvalidArgument,
            "certify expects a labeled dataset");
    const double factor = cfg.value("radius_factor", std::sqrt(2.0));
    static constexpr double kEps[4] = {36.0 / 255.0, 72.0 / 255.0,
                                       108.0 / 255.0, 255.0 / 255.0};
    std::ostringstream os;
    os << std::setprecision(17);
    os << "index,label,predicted,correct,radius,rob36,rob72,rob108,rob255\n";
    double acc = 0.0, mean_radius = 0.0;
    double cra[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n = data.size();
    for (std::size_t i = 0; i < n; ++i) {
      require(data.inputs[i].size() == net->net.in_dim,
              nact::ErrorCode::InvalidArgument,
              "dataset input dimension does not match the network");
      const Eigen::VectorXd scores = net->net.eval(data.inputs[i]);
      Eigen::Index pred = 0;
      scores.maxCoeff(&pred);
      const bool correct = pred == data.labels[i];
      const double radius = nact::certified_radius(scores, factor);
      os << i << ',' << data.labels[i] << ',' << pred << ','
         << (correct ? 1 : 0) << ',' << radius;
      for (int e = 0; e < 4; ++e) {
        const bool rob = correct && radius >= kEps[e];
        os << ',' << (rob ? 1 : 0);
        cra[e] += rob ? 1.0 : 0.0;
      }
      os << '\n';
      acc += correct ? 1.0 : 0.0;
      mean_radius += radius;
    }
    os << "aggregate,,," << acc / n << ',' << mean_radius / n;
    for (int e = 0; e < 4; ++e) os << ',' << cra[e] / n;
    os << '\n';
    *report_csv = copy_out(os.str());
  });
}

}  // extern "C"
