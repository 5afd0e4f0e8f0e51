/* Generated by cbindgen from mtpp-ffi. Do not edit. */

#ifndef MTPP_H
#define MTPP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum MtppStatus {
  MTPP_STATUS_OK = 0,
  MTPP_STATUS_NULL_POINTER = 1,
  MTPP_STATUS_INVALID_ARGUMENT = 2,
  MTPP_STATUS_IO = 3,
  MTPP_STATUS_PARSE = 4,
  MTPP_STATUS_VALIDATION = 5,
  MTPP_STATUS_SHAPE_MISMATCH = 6,
  MTPP_STATUS_VERSION_MISMATCH = 7,
  MTPP_STATUS_INVALID_PARAMS = 8,
  MTPP_STATUS_DIVERGENCE = 9,
  MTPP_STATUS_INTERNAL = 10,
} MtppStatus;

/*
 A set of user records.
 */
typedef struct MtppDataset MtppDataset;

/*
 A loaded history model (encoder or tabular).
 */
typedef struct MtppModel MtppModel;

/*
 Action policy parameters.
 */
typedef struct MtppPolicy MtppPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or an empty string.
 Valid until the next call into the library from the same thread.
 */
const char *mtpp_last_error(void);

/*
 Library version, a static NUL-terminated string.
 */
const char *mtpp_version(void);

/*
 Loads a model file (encoder or tabular).

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MtppStatus mtpp_model_load(const char *path, struct MtppModel **out);

/*
 # Safety
 `model` must come from this library and not be used afterwards.
 */
void mtpp_model_free(struct MtppModel *model);

/*
 Event vocabulary of a model: type count, action count, request type.

 # Safety
 All pointers must be valid.
 */
enum MtppStatus mtpp_model_schema(const struct MtppModel *model,
                                  uint32_t *num_types,
                                  uint32_t *num_actions,
                                  uint32_t *request_type);

/*
 Loads a policy file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MtppStatus mtpp_policy_load(const char *path, struct MtppPolicy **out);

/*
 The uniform policy over the model's actions.

 # Safety
 `model` and `out` must be valid pointers.
 */
enum MtppStatus mtpp_policy_uniform(const struct MtppModel *model, struct MtppPolicy **out);

/*
 # Safety
 `policy` must come from this library and not be used afterwards.
 */
void mtpp_policy_free(struct MtppPolicy *policy);

/*
 Loads an event log for `model`'s vocabulary. `windows` is either
 `"t0,t_max"`, a windows file path, or null for `<events>.windows.jsonl`.

 # Safety
 String arguments must be NUL-terminated; `model` and `out` valid.
 */
enum MtppStatus mtpp_dataset_load(const char *events,
                                  const char *windows,
                                  const struct MtppModel *model,
                                  struct MtppDataset **out);

/*
 Writes the event log to `path` and the windows to `<path>.windows.jsonl`.

 # Safety
 `dataset` must be valid and `path` NUL-terminated.
 */
enum MtppStatus mtpp_dataset_save(const struct MtppDataset *dataset, const char *path);

/*
 Number of user records.

 # Safety
 Both pointers must be valid.
 */
enum MtppStatus mtpp_dataset_len(const struct MtppDataset *dataset, size_t *out);

/*
 Number of events of record `user`.

 # Safety
 Both pointers must be valid.
 */
enum MtppStatus mtpp_dataset_num_events(const struct MtppDataset *dataset,
                                        size_t user,
                                        size_t *out);

/*
 Simulates `n` users over `[t0, t0 + t_max]`. `policy` may be null for
 the uniform policy.

 # Safety
 `model` and `out` must be valid; `policy` valid or null.
 */
enum MtppStatus mtpp_simulate(const struct MtppModel *model,
                              const struct MtppPolicy *policy,
                              size_t n,
                              double t0,
                              double t_max,
                              uint64_t seed,
                              struct MtppDataset **out);

/*
 Total log-likelihood of `dataset` in `total`; per-user values are also
 written to `per_user` (capacity `per_user_len`) when it is not null.

 # Safety
 `per_user` must hold at least `per_user_len` doubles when not null.
 */
enum MtppStatus mtpp_loglik(const struct MtppModel *model,
                            const struct MtppDataset *dataset,
                            double *per_user,
                            size_t per_user_len,
                            double *total);

/*
 Monte-Carlo expected utility with per-type rewards and per-action costs.

 # Safety
 Arrays must hold the given number of doubles; `policy` may be null.
 */
enum MtppStatus mtpp_expected_utility(const struct MtppModel *model,
                                      const struct MtppPolicy *policy,
                                      const double *type_rewards,
                                      size_t num_rewards,
                                      const double *action_costs,
                                      size_t num_costs,
                                      size_t n,
                                      double t0,
                                      double t_max,
                                      uint64_t seed,
                                      double *mean,
                                      double *se);

/*
 Density of the piecewise-power delay law at `tau`.

 # Safety
 `out` must be valid.
 */
enum MtppStatus mtpp_pp_density(double alpha,
                                double beta,
                                double tau_star,
                                double tau,
                                double *out);

/*
 CDF of the piecewise-power delay law at `tau`.

 # Safety
 `out` must be valid.
 */
enum MtppStatus mtpp_pp_cdf(double alpha, double beta, double tau_star, double tau, double *out);

/*
 Quantile at level `eta` in `[0, 1)`.

 # Safety
 `out` must be valid.
 */
enum MtppStatus mtpp_pp_inverse_cdf(double alpha,
                                    double beta,
                                    double tau_star,
                                    double eta,
                                    double *out);

/*
 # Safety
 `dataset` must come from this library and not be used afterwards.
 */
void mtpp_dataset_free(struct MtppDataset *dataset);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTPP_H */
