// Command-line front end. Talks to the library exclusively through the C
// interface in nact/nact.h; exit codes are 0 (pass), 1 (a check failed),
// 2 (usage or I/O error).
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nact/nact.h"

using nlohmann::json;

namespace {

int fail_code(nact_status s) {
  return s == NACT_ERR_DIVERGED || s == NACT_ERR_CHECK_FAILED ? 1 : 2;
}

void ok(nact_status s, const std::string& context) {
  if (s == NACT_OK) return;
  std::cerr << context << ": " << nact_last_error() << '\n';
  std::exit(fail_code(s));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    std::cerr << "cannot open " << path << '\n';
    std::exit(2);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out.good()) {
    std::cerr << "cannot write " << path << '\n';
    std::exit(2);
  }
}

using CpwlPtr = std::unique_ptr<nact_cpwl, decltype(&nact_cpwl_free)>;
using NetPtr = std::unique_ptr<nact_network, decltype(&nact_network_free)>;
using StrPtr = std::unique_ptr<char, decltype(&nact_string_free)>;

CpwlPtr load_cpwl(const std::string& path) {
  nact_cpwl* f = nullptr;
  ok(nact_cpwl_from_json(read_file(path).c_str(), &f), path);
  return CpwlPtr(f, &nact_cpwl_free);
}

NetPtr load_network(const std::string& path) {
  nact_network* net = nullptr;
  ok(nact_network_from_json(read_file(path).c_str(), &net), path);
  return NetPtr(net, &nact_network_free);
}

// Flags shared by the commands that build or train a model.
struct ModelFlags {
  std::uint64_t seed = 0;
  std::string activation = "nact";
  std::string layer_type = "aol";
  std::string nact_init = "absid";
  int width = 16;
  int depth = 3;
};

void add_model_flags(CLI::App* cmd, ModelFlags* mf) {
  cmd->add_option("--seed", mf->seed, "Seed for every random draw");
  cmd->add_option("--activation", mf->activation,
                  "nact | maxmin | abs | relu-unconstrained");
  cmd->add_option("--layer-type", mf->layer_type,
                  "aol | cpl | soc | unconstrained");
  cmd->add_option("--nact-init", mf->nact_init, "absid | zero | random");
  cmd->add_option("--width", mf->width, "Hidden width");
  cmd->add_option("--depth", mf->depth, "Number of dense layers");
}

// The relu baseline always runs on unconstrained layers.
json model_config(const ModelFlags& mf) {
  json cfg;
  cfg["seed"] = mf.seed;
  cfg["width"] = mf.width;
  cfg["depth"] = mf.depth;
  cfg["nact_init"] = mf.nact_init;
  if (mf.activation == "relu-unconstrained" || mf.activation == "relu") {
    cfg["activation"] = "relu";
    cfg["layer_type"] = "unconstrained";
  } else {
    cfg["activation"] = mf.activation;
    cfg["layer_type"] = mf.layer_type;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build, train and certify 1-Lipschitz networks"};
  app.require_subcommand(1);

  // compile
  auto* compile = app.add_subcommand(
      "compile", "Translate a piecewise-linear function into a network");
  std::string compile_in;
  std::string compile_out = "network.json";
  double compile_lo = 0.0, compile_hi = 0.0;
  compile->add_option("function", compile_in, "Function JSON path")
      ->required();
  compile->add_option("--out", compile_out, "Network JSON output path");
  auto* lo_opt = compile->add_option(
      "--lo", compile_lo, "Left edge of a bounded-interval compile");
  auto* hi_opt = compile->add_option(
      "--hi", compile_hi, "Right edge of a bounded-interval compile");
  lo_opt->needs(hi_opt);
  hi_opt->needs(lo_opt);

  // verify
  auto* verify = app.add_subcommand(
      "verify", "Check a compiled network against its source function");
  std::string verify_fn, verify_net, verify_out;
  double verify_lo = -10.0, verify_hi = 10.0;
  verify->add_option("function", verify_fn, "Function JSON path")->required();
  verify->add_option("network", verify_net, "Network JSON path")->required();
  verify->add_option("--lo", verify_lo, "Left edge of the check interval");
  verify->add_option("--hi", verify_hi, "Right edge of the check interval");
  verify->add_option("--out", verify_out, "Report JSON output path");

  // fit-toy
  auto* fit_toy = app.add_subcommand(
      "fit-toy", "Fit the three-segment zigzag regression benchmark");
  ModelFlags toy_mf;
  int toy_epochs = 1000;
  std::string toy_out = "toy_out";
  add_model_flags(fit_toy, &toy_mf);
  fit_toy->add_option("--epochs", toy_epochs, "Training epochs");
  fit_toy->add_option("--out", toy_out, "Output directory");

  // train
  auto* train = app.add_subcommand("train", "Train a classifier");
  ModelFlags train_mf;
  std::string train_data_dir, train_out = "train_out";
  int train_epochs = 20, train_batch = 256;
  double train_lr = -1.0, train_eps = 36.0 / 255.0;
  bool train_augment = false;
  add_model_flags(train, &train_mf);
  train->add_option("--data-dir", train_data_dir,
                    "CIFAR-10 binary directory (omit for the built-in "
                    "two-moons set)");
  train->add_option("--epochs", train_epochs, "Training epochs");
  train->add_option("--batch-size", train_batch, "Minibatch size");
  train->add_option("--lr", train_lr,
                    "Peak learning rate (negative = per-layer-kind default)");
  train->add_option("--epsilon", train_eps, "Loss-offset radius");
  train->add_flag("--augment", train_augment,
                  "Random crop and flip (cifar10 only)");
  train->add_option("--out", train_out, "Output directory");

  // certify
  auto* certify = app.add_subcommand(
      "certify", "Per-example certified radii for a trained classifier");
  std::string cert_ckpt, cert_data_dir, cert_split = "test";
  std::string cert_out = "cert_report.csv";
  std::uint64_t cert_seed = 0;
  certify->add_option("checkpoint", cert_ckpt, "Network JSON path")
      ->required();
  certify->add_option("--data-dir", cert_data_dir,
                      "CIFAR-10 binary directory (omit for two-moons)");
  certify->add_option("--split", cert_split, "train | test (cifar10 only)");
  certify->add_option("--seed", cert_seed, "Seed for the two-moons draw");
  certify->add_option("--out", cert_out, "Report CSV output path");

  // grad-check
  auto* grad_check = app.add_subcommand(
      "grad-check", "Compare analytic gradients with finite differences");
  ModelFlags gc_mf;
  gc_mf.width = 8;
  std::string gc_ckpt;
  double gc_step = 1e-6, gc_tol = 1e-5;
  grad_check->add_option("checkpoint", gc_ckpt,
                         "Network JSON path (omit to build a fresh stack)");
  add_model_flags(grad_check, &gc_mf);
  grad_check->add_option("--step", gc_step, "Finite-difference step");
  grad_check->add_option("--tol", gc_tol, "Max relative error to pass");

  // audit
  auto* audit = app.add_subcommand(
      "audit", "Empirical Lipschitz bound over random input pairs");
  ModelFlags audit_mf;
  std::string audit_ckpt;
  int audit_pairs = 1000;
  double audit_tol = 1.0 + 1e-6;
  audit->add_option("checkpoint", audit_ckpt,
                    "Network JSON path (omit to build a fresh stack)");
  add_model_flags(audit, &audit_mf);
  audit->add_option("--pairs", audit_pairs, "Number of input pairs");
  audit->add_option("--tol", audit_tol, "Largest ratio to pass");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (compile->parsed()) {
    CpwlPtr f = load_cpwl(compile_in);
    nact_network* raw = nullptr;
    if (lo_opt->count() > 0) {
      ok(nact_compile_bounded(f.get(), compile_lo, compile_hi, &raw),
         "compile");
    } else {
      ok(nact_compile(f.get(), &raw), "compile");
    }
    NetPtr net(raw, &nact_network_free);
    char* text = nullptr;
    ok(nact_network_to_json(net.get(), &text), "serialize");
    StrPtr guard(text, &nact_string_free);
    write_file(compile_out, text);
    std::cout << "wrote " << compile_out << '\n';
    return 0;
  }

  if (verify->parsed()) {
    CpwlPtr f = load_cpwl(verify_fn);
    NetPtr net = load_network(verify_net);
    char* report = nullptr;
    int pass = 0;
    ok(nact_verify(net.get(), f.get(), verify_lo, verify_hi, &report, &pass),
       "verify");
    StrPtr guard(report, &nact_string_free);
    std::cout << report << '\n';
    if (!verify_out.empty()) write_file(verify_out, report);
    return pass ? 0 : 1;
  }

  if (fit_toy->parsed()) {
    json cfg = model_config(toy_mf);
    cfg["epochs"] = toy_epochs;
    char* result = nullptr;
    nact_network* raw = nullptr;
    ok(nact_fit_toy(cfg.dump().c_str(), &result, &raw), "fit-toy");
    StrPtr result_guard(result, &nact_string_free);
    NetPtr net(raw, &nact_network_free);
    const json res = json::parse(result);

    const std::filesystem::path dir(toy_out);
    write_file((dir / "history.csv").string(),
               res.at("history_csv").get<std::string>());
    char* net_text = nullptr;
    ok(nact_network_to_json(net.get(), &net_text), "serialize");
    StrPtr net_guard(net_text, &nact_string_free);
    write_file((dir / "network.json").string(), net_text);

    // Dense sampling of the learned function for plotting.
    json samples;
    samples["x"] = json::array();
    samples["y"] = json::array();
    for (int i = 0; i <= 600; ++i) {
      const double x = -3.0 + 6.0 * i / 600.0;
      double y = 0.0;
      ok(nact_network_eval(net.get(), &x, 1, &y, 1), "sample");
      samples["x"].push_back(x);
      samples["y"].push_back(y);
    }
    write_file((dir / "learned_function.json").string(), samples.dump());

    json summary{{"final_mse", res.at("final_mse")},
                 {"worst_audit_ratio", res.at("worst_audit_ratio")},
                 {"out_dir", toy_out}};
    std::cout << summary.dump(2) << '\n';
    return 0;
  }

  if (train->parsed()) {
    json cfg = model_config(train_mf);
    cfg["epochs"] = train_epochs;
    cfg["batch_size"] = train_batch;
    cfg["lr"] = train_lr;
    cfg["epsilon"] = train_eps;
    if (!train_data_dir.empty()) {
      cfg["dataset"] = "cifar10";
      cfg["data_dir"] = train_data_dir;
    }
    if (train_augment) cfg["augment"] = true;
    char* result = nullptr;
    nact_network* raw = nullptr;
    ok(nact_train(cfg.dump().c_str(), &result, &raw), "train");
    StrPtr result_guard(result, &nact_string_free);
    NetPtr net(raw, &nact_network_free);
    const json res = json::parse(result);

    const std::filesystem::path dir(train_out);
    write_file((dir / "history.csv").string(),
               res.at("history_csv").get<std::string>());
    char* net_text = nullptr;
    ok(nact_network_to_json(net.get(), &net_text), "serialize");
    StrPtr net_guard(net_text, &nact_string_free);
    write_file((dir / "checkpoint.json").string(), net_text);

    json summary{{"worst_audit_ratio", res.at("worst_audit_ratio")},
                 {"out_dir", train_out}};
    if (res.contains("final")) summary["final"] = res.at("final");
    std::cout << summary.dump(2) << '\n';
    return 0;
  }

  if (certify->parsed()) {
    NetPtr net = load_network(cert_ckpt);
    json cfg;
    cfg["split"] = cert_split;
    cfg["seed"] = cert_seed;
    if (!cert_data_dir.empty()) {
      cfg["dataset"] = "cifar10";
      cfg["data_dir"] = cert_data_dir;
    }
    char* report = nullptr;
    ok(nact_certify(net.get(), cfg.dump().c_str(), &report), "certify");
    StrPtr guard(report, &nact_string_free);
    write_file(cert_out, report);
    const std::string text(report);
    const auto last_row = text.rfind("aggregate");
    if (last_row != std::string::npos) {
      std::cout << text.substr(last_row);
    }
    std::cout << "wrote " << cert_out << '\n';
    return 0;
  }

  if (grad_check->parsed()) {
    NetPtr net = gc_ckpt.empty()
                     ? [&] {
                         nact_network* raw = nullptr;
                         ok(nact_build_mlp(model_config(gc_mf).dump().c_str(),
                                           &raw),
                            "build");
                         return NetPtr(raw, &nact_network_free);
                       }()
                     : load_network(gc_ckpt);
    double max_rel = 0.0;
    int checked = 0, skipped = 0;
    ok(nact_grad_check_random(net.get(), gc_mf.seed, gc_step, &max_rel,
                              &checked, &skipped),
       "grad-check");
    const bool pass = max_rel <= gc_tol;
    std::cout << json{{"max_rel_error", max_rel},
                      {"checked", checked},
                      {"skipped", skipped},
                      {"pass", pass}}
                     .dump(2)
              << '\n';
    return pass ? 0 : 1;
  }

  if (audit->parsed()) {
    NetPtr net = audit_ckpt.empty()
                     ? [&] {
                         nact_network* raw = nullptr;
                         ok(nact_build_mlp(
                                model_config(audit_mf).dump().c_str(), &raw),
                            "build");
                         return NetPtr(raw, &nact_network_free);
                       }()
                     : load_network(audit_ckpt);
    double worst = 0.0;
    ok(nact_network_audit(net.get(), audit_pairs, audit_mf.seed, &worst),
       "audit");
    const bool pass = worst <= audit_tol;
    std::cout << json{{"worst_ratio", worst},
                      {"pairs", audit_pairs},
                      {"pass", pass}}
                     .dump(2)
              << '\n';
    return pass ? 0 : 1;
  }

  return 2;
}
