#ifndef CAPMATCH_H
#define CAPMATCH_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CapmatchStatus {
  CAPMATCH_STATUS_OK = 0,
  CAPMATCH_STATUS_NULL_POINTER = 1,
  CAPMATCH_STATUS_INVALID_UTF8 = 2,
  CAPMATCH_STATUS_INVALID_INPUT = 3,
  CAPMATCH_STATUS_IO = 4,
  /**
   * The quantity is not defined for the input (for example a zero base
   * accuracy).
   */
  CAPMATCH_STATUS_UNDEFINED = 5,
  CAPMATCH_STATUS_PANIC = 6,
} CapmatchStatus;

typedef enum CapmatchStrategy {
  CAPMATCH_STRATEGY_STRICT = 0,
  CAPMATCH_STRATEGY_SINGLE_CLASS = 1,
  CAPMATCH_STRATEGY_MULTI_CLASS = 2,
} CapmatchStrategy;

typedef enum CapmatchExclusion {
  CAPMATCH_EXCLUSION_NONE = 0,
  CAPMATCH_EXCLUSION_PER_CLASS = 1,
  CAPMATCH_EXCLUSION_GLOBAL_DROP = 2,
} CapmatchExclusion;

/**
 * A validated term dictionary.
 */
typedef struct CapmatchDictionary CapmatchDictionary;

/**
 * A dictionary bound to a strategy and exclusion mode.
 */
typedef struct CapmatchLabeler CapmatchLabeler;

/**
 * Labels for one caption. `classes` is owned by the library; release it
 * with [`capmatch_labels_free`].
 */
typedef struct CapmatchLabels {
  uint32_t *classes;
  size_t len;
  /**
   * No label was assigned.
   */
  bool dropped;
  /**
   * Global-drop mode only: the caption matched and leaves the corpus.
   */
  bool filtered;
} CapmatchLabels;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *capmatch_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *capmatch_last_error(void);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CapmatchStatus capmatch_dictionary_from_json(const char *json,
                                                  struct CapmatchDictionary **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CapmatchStatus capmatch_dictionary_from_path(const char *path,
                                                  struct CapmatchDictionary **out);

/**
 * Number of classes in the dictionary, 0 for a null handle.
 *
 * # Safety
 * `dict` must be null or a handle from this library.
 */
size_t capmatch_dictionary_class_count(const struct CapmatchDictionary *dict);

/**
 * # Safety
 * `dict` must be null or a handle from this library, freed at most once.
 */
void capmatch_dictionary_free(struct CapmatchDictionary *dict);

/**
 * Builds a labeler from a dictionary; the dictionary handle stays owned by
 * the caller. `mc_cap` is used only by the multi-class strategy.
 *
 * # Safety
 * `dict` must be a handle from this library and `out` a valid pointer.
 */
enum CapmatchStatus capmatch_labeler_new(const struct CapmatchDictionary *dict,
                                         enum CapmatchStrategy strategy,
                                         size_t mc_cap,
                                         enum CapmatchExclusion exclusion,
                                         struct CapmatchLabeler **out);

/**
 * # Safety
 * `labeler` must be null or a handle from this library, freed at most once.
 */
void capmatch_labeler_free(struct CapmatchLabeler *labeler);

/**
 * Labels one caption record given as a JSON object (sample_id plus any of
 * title, tags, description, alt_text).
 *
 * # Safety
 * `labeler` must be a handle from this library, `record_json` a
 * NUL-terminated string and `out` a valid pointer.
 */
enum CapmatchStatus capmatch_label_record_json(const struct CapmatchLabeler *labeler,
                                               const char *record_json,
                                               struct CapmatchLabels *out);

/**
 * Labels a bare caption string, treated as a title.
 *
 * # Safety
 * `labeler` must be a handle from this library, `caption` a NUL-terminated
 * string and `out` a valid pointer.
 */
enum CapmatchStatus capmatch_label_text(const struct CapmatchLabeler *labeler,
                                        const char *caption,
                                        struct CapmatchLabels *out);

/**
 * Releases the class array of `labels` and resets it to empty.
 *
 * # Safety
 * `labels` must be null or filled by this library.
 */
void capmatch_labels_free(struct CapmatchLabels *labels);

/**
 * Unweighted mean of shift accuracies in [0, 1].
 *
 * # Safety
 * `values` must point to `len` doubles; `out` must be valid.
 */
enum CapmatchStatus capmatch_average_robustness(const double *values, size_t len, double *out);

/**
 * Average robustness divided by base accuracy; `Undefined` when the base
 * accuracy is not positive.
 *
 * # Safety
 * `out` must be valid.
 */
enum CapmatchStatus capmatch_effective_robustness_ratio(double avg_robustness,
                                                        double base_accuracy,
                                                        double *out);

/**
 * Mean of the `k` largest values.
 *
 * # Safety
 * `values` must point to `len` doubles; `out` must be valid.
 */
enum CapmatchStatus capmatch_top_k_mean(const double *values, size_t len, size_t k, double *out);

/**
 * Whether two marginals of one grid share their mean within `tolerance`.
 *
 * # Safety
 * `first`/`second` must point to `first_len`/`second_len` doubles;
 * `pass` must be valid; `difference` may be null.
 */
enum CapmatchStatus capmatch_marginal_check(const double *first,
                                            size_t first_len,
                                            const double *second,
                                            size_t second_len,
                                            double tolerance,
                                            bool *pass,
                                            double *difference);

/**
 * Whether utilization equals label accuracy times coverage within
 * `tolerance`.
 *
 * # Safety
 * `consistent` must be valid; `residual` may be null.
 */
enum CapmatchStatus capmatch_audit_identity(double label_accuracy,
                                            double coverage,
                                            double utilization,
                                            double tolerance,
                                            bool *consistent,
                                            double *residual);

/**
 * Runs a batch command from a JSON run config (the same fields as the
 * command-line config file, including `command`). `exit_code` receives 0,
 * 1 or 2 as the command-line tool would return.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `exit_code` valid.
 */
enum CapmatchStatus capmatch_run_json(const char *config_json, int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPMATCH_H */
