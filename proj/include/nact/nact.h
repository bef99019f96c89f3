/* C interface to the 1-Lipschitz network toolkit. Every object lives behind
 * an opaque handle; every fallible call returns a status code and leaves a
 * message for nact_last_error() on failure. Strings returned through char**
 * out-parameters are heap copies owned by the caller; release them with
 * nact_string_free. Handles are not thread-safe; share them only with
 * external synchronization. */
#ifndef NACT_NACT_H_
#define NACT_NACT_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nact_status {
  NACT_OK = 0,
  NACT_ERR_INVALID_ARGUMENT = 1,
  NACT_ERR_IO = 2,
  NACT_ERR_PARSE = 3,
  NACT_ERR_DIVERGED = 4,
  NACT_ERR_CHECK_FAILED = 5,
  NACT_ERR_INTERNAL = 6
} nact_status;

/* A scalar 1-Lipschitz piecewise-linear function. */
typedef struct nact_cpwl nact_cpwl;
/* A stack of constrained linear layers and activation stages. */
typedef struct nact_network nact_network;

/* Message for the most recent failure on the calling thread ("" if none).
 * Valid until the next failing call on the same thread. */
const char* nact_last_error(void);

/* Releases a string returned through any char** out-parameter. NULL is ok. */
void nact_string_free(char* s);

/* ---------- piecewise-linear functions ---------- */

/* Breakpoints strictly increasing, one more slope than breakpoints, every
 * |slope| <= 1; anchor pins the value at one point. Adjacent equal slopes
 * are merged. */
nact_status nact_cpwl_create(const double* breakpoints, size_t n_breakpoints,
                             const double* slopes, size_t n_slopes,
                             double anchor_x, double anchor_y, nact_cpwl** out);

/* The three-segment zigzag with kinks at -1/2 and 1/2 and f(0) = 0. */
nact_status nact_cpwl_n_function(nact_cpwl** out);

/* Seeded random function with `kinks` breakpoints in [lo, hi]. */
nact_status nact_cpwl_random(int kinks, double lo, double hi, uint64_t seed,
                             nact_cpwl** out);

nact_status nact_cpwl_from_json(const char* text, nact_cpwl** out);
nact_status nact_cpwl_to_json(const nact_cpwl* f, char** out);
nact_status nact_cpwl_eval(const nact_cpwl* f, double x, double* out);
void nact_cpwl_free(nact_cpwl* f);

/* ---------- compiling functions into networks ---------- */

/* Translates f into a width-2 stack of norm-bounded linear stages and
 * two-threshold activations that evaluates to f exactly, everywhere. */
nact_status nact_compile(const nact_cpwl* f, nact_network** out);

/* Same, but exact only on [lo, hi] and smaller: at most k+2 linear stages
 * for k breakpoints. */
nact_status nact_compile_bounded(const nact_cpwl* f, double lo, double hi,
                                 nact_network** out);

/* Checks a compiled network against its source: sup-norm error over
 * [lo, hi], stage-count bounds, and per-stage spectral norms. *pass is 1
 * iff every check passed; *report_json carries the measurements. The call
 * fails only on invalid inputs, not on a failed check. */
nact_status nact_verify(nact_network* net, const nact_cpwl* f, double lo,
                        double hi, char** report_json, int* pass);

/* (f(x0 + delta/2) - f(x0 - delta/2)) / delta for a scalar network. */
nact_status nact_long_range_slope(nact_network* net, double x0, double delta,
                                  double* out);

/* ---------- networks ---------- */

nact_status nact_network_from_json(const char* text, nact_network** out);
nact_status nact_network_to_json(const nact_network* net, char** out);
nact_status nact_network_dims(const nact_network* net, int* in_dim,
                              int* out_dim);

/* Deterministic inference-mode evaluation; x has n = in_dim components,
 * y receives m = out_dim. */
nact_status nact_network_eval(nact_network* net, const double* x, size_t n,
                              double* y, size_t m);
void nact_network_free(nact_network* net);

/* Builds a fresh fully-connected stack from a JSON config with keys
 * in_dim, out_dim, width, depth, layer_type (aol|cpl|soc|unconstrained),
 * activation (nact|maxmin|abs|relu), nact_init (absid|zero|random),
 * nact_param_scale, seed. All keys optional. */
nact_status nact_build_mlp(const char* config_json, nact_network** out);

/* Max |f(x)-f(y)| / |x-y| over `pairs` seeded random input pairs. */
nact_status nact_network_audit(nact_network* net, int pairs, uint64_t seed,
                               double* worst);

/* Compares analytic gradients against central differences (step h, or a
 * default when h <= 0) at a seeded Gaussian input. Parameters whose
 * perturbation crosses an activation branch are skipped, not failed. */
nact_status nact_grad_check_random(nact_network* net, uint64_t seed, double h,
                                   double* max_rel_error, int* checked,
                                   int* skipped);

/* ---------- training and certification ---------- */

/* 1-d regression benchmark: fits the three-segment zigzag on 1000 uniform
 * points from [-3, 3] with a width-40, three-layer stack. Config keys
 * (optional): activation (nact|maxmin|abs|relu), nact_init, seed, epochs.
 * Result JSON: {"history_csv", "final_mse", "worst_audit_ratio"}. */
nact_status nact_fit_toy(const char* config_json, char** result_json,
                         nact_network** net_out);

/* Builds and trains a classifier. Config keys (optional unless noted):
 * dataset ("moons" or "cifar10"), data_dir (cifar10 only), split ("train"),
 * augment (bool), moons_per_class, moons_noise, width, depth, layer_type,
 * activation, nact_init, nact_param_scale, lr (negative selects per-layer-kind
 * defaults), momentum, nesterov, schedule ("one_cycle"|"constant"),
 * epochs, batch_size, epsilon, offset (absent: 2*sqrt(2)*epsilon),
 * temperature, seed. Result JSON:
 * {"history_csv", "worst_audit_ratio", "final": {...}}. */
nact_status nact_train(const char* config_json, char** result_json,
                       nact_network** net_out);

/* Per-example certified radii and robust-correct flags on a dataset.
 * Config keys as nact_train's dataset keys, plus radius_factor (default
 * sqrt(2)). Emits CSV rows index,label,predicted,correct,radius,rob36,
 * rob72,rob108,rob255 and one trailing aggregate row whose correct and
 * rob* fields hold the dataset means. */
nact_status nact_certify(nact_network* net, const char* config_json,
                         char** report_csv);

#ifdef __cplusplus
}
#endif

#endif /* NACT_NACT_H_ */
