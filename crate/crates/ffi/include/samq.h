#ifndef SAMQ_H
#define SAMQ_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum SamqStatus {
  SAMQ_STATUS_OK = 0,
  SAMQ_STATUS_INVALID_ARGUMENT = 1,
  SAMQ_STATUS_CONVERGENCE = 2,
  SAMQ_STATUS_COVERAGE = 3,
  SAMQ_STATUS_REWARD_BOUND = 4,
  SAMQ_STATUS_BOUND_UNDEFINED = 5,
  SAMQ_STATUS_DIAGNOSTIC_UNAVAILABLE = 6,
  SAMQ_STATUS_IO = 7,
  SAMQ_STATUS_PARSE = 8,
  SAMQ_STATUS_NULL_POINTER = 9,
  SAMQ_STATUS_PANIC = 10,
} SamqStatus;

/**
 * State aggregation.
 */
typedef struct SamqAggregation SamqAggregation;

/**
 * Transition dataset.
 */
typedef struct SamqDataset SamqDataset;

/**
 * Tabular MDP.
 */
typedef struct SamqMdp SamqMdp;

/**
 * Q-function on a finite state set.
 */
typedef struct SamqQFunction SamqQFunction;

/**
 * Inputs of the finite-sample bound; mirrors the library struct.
 */
typedef struct SamqBoundInputs {
  size_t n_s;
  size_t n_a;
  double gamma;
  double r_max;
  double c_h;
  double c_uni;
  double c_q;
  double c_clustering;
  double n;
  double delta;
  double theta_card;
} SamqBoundInputs;

typedef struct SamqBound {
  double bias;
  double variance;
  double total;
  /**
   * Precondition margin when the status is `BoundUndefined`.
   */
  double margin;
} SamqBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated,
 * truncated to `len`). Returns the full message length, 0 if none.
 */
size_t samq_last_error(char *buf, size_t len);

/**
 * Builds the bus environment from a JSON config; `config_json` may be null for defaults.
 */
enum SamqStatus samq_bus_env_new(const char *config_json, struct SamqMdp **out);

/**
 * Parses an MDP document.
 */
enum SamqStatus samq_mdp_from_json(const char *json, struct SamqMdp **out);

void samq_mdp_free(struct SamqMdp *mdp);

/**
 * Number of states, or 0 for a null handle.
 */
size_t samq_mdp_n_states(const struct SamqMdp *mdp);

/**
 * Number of actions, or 0 for a null handle.
 */
size_t samq_mdp_n_actions(const struct SamqMdp *mdp);

/**
 * Solves the soft Bellman fixed point. `out_q` holds `n_states * n_actions`
 * values, row-major by state; `out_iterations` may be null.
 */
enum SamqStatus samq_soft_q_solve(const struct SamqMdp *mdp,
                                  const double *theta,
                                  size_t n_theta,
                                  double tol,
                                  size_t max_iter,
                                  double *out_q,
                                  size_t *out_iterations);

/**
 * Simulates `n` i.i.d. transitions with uniform initial states.
 */
enum SamqStatus samq_simulate(const struct SamqMdp *mdp,
                              const double *theta,
                              size_t n_theta,
                              size_t n,
                              uint64_t seed,
                              struct SamqDataset **out);

/**
 * Reads a dataset CSV and its metadata sidecar.
 */
enum SamqStatus samq_dataset_read_csv(const char *path, struct SamqDataset **out);

enum SamqStatus samq_dataset_write_csv(const struct SamqDataset *dataset, const char *path);

/**
 * Number of transitions, or 0 for a null handle.
 */
size_t samq_dataset_len(const struct SamqDataset *dataset);

void samq_dataset_free(struct SamqDataset *dataset);

/**
 * Estimates Q on the dataset's states with a logit policy of the given degree.
 */
enum SamqStatus samq_estimate_q(const struct SamqDataset *dataset,
                                double gamma,
                                size_t degree,
                                size_t anchor,
                                struct SamqQFunction **out);

size_t samq_qfunction_n_states(const struct SamqQFunction *q);

void samq_qfunction_free(struct SamqQFunction *q);

/**
 * K-means aggregation of the Q-function's states on their Q-vectors.
 */
enum SamqStatus samq_cluster_states(const struct SamqQFunction *q,
                                    size_t n_s,
                                    uint64_t seed,
                                    struct SamqAggregation **out);

/**
 * Quantile-grid aggregation of the dataset's observed states.
 */
enum SamqStatus samq_ad_hoc_aggregation(const struct SamqDataset *dataset,
                                        size_t n_s,
                                        struct SamqAggregation **out);

/**
 * Identity aggregation over the MDP's states.
 */
enum SamqStatus samq_identity_aggregation(const struct SamqMdp *mdp, struct SamqAggregation **out);

size_t samq_aggregation_n_s(const struct SamqAggregation *agg);

/**
 * JSON document of the aggregation; release with [`samq_string_free`].
 */
enum SamqStatus samq_aggregation_to_json(const struct SamqAggregation *agg, char **out);

void samq_aggregation_free(struct SamqAggregation *agg);

void samq_string_free(char *s);

/**
 * Aggregated NF-MLE with default Nelder-Mead options. Rewards come from the
 * dataset metadata. `out_theta` holds `n_theta` values; `out_log_likelihood` may be null.
 */
enum SamqStatus samq_nfmle_estimate(const struct SamqDataset *dataset,
                                    const struct SamqAggregation *agg,
                                    const double *theta_init,
                                    size_t n_theta,
                                    double *out_theta,
                                    double *out_log_likelihood);

/**
 * Evaluates the finite-sample bound. On `BoundUndefined` only `out->margin` is set.
 */
enum SamqStatus samq_theorem2_bound(const struct SamqBoundInputs *inputs, struct SamqBound *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAMQ_H */
