/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef TFQKD_H
#define TFQKD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TFQKD_FLAG_Y1_CLAMPED 1

#define TFQKD_FLAG_E1PH_DENOMINATOR (1 << 1)

#define TFQKD_FLAG_E1PH_CLAMPED (1 << 2)

#define TFQKD_FLAG_RATE_CLAMPED (1 << 3)

#define TFQKD_FLAG_NO_WINDOWS (1 << 4)

#define TFQKD_FLAG_NO_Z_DETECTIONS (1 << 5)

typedef enum TfqkdStatus {
  TFQKD_STATUS_OK = 0,
  TFQKD_STATUS_NULL_POINTER = 1,
  TFQKD_STATUS_INVALID_PARAMETER = 2,
  TFQKD_STATUS_DOMAIN = 3,
  TFQKD_STATUS_PARSE = 4,
  TFQKD_STATUS_INVARIANT = 5,
  TFQKD_STATUS_IO = 6,
  TFQKD_STATUS_INDEX_OUT_OF_RANGE = 7,
  TFQKD_STATUS_INVALID_UTF8 = 8,
  TFQKD_STATUS_PANIC = 9,
} TfqkdStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct TfqkdConfig TfqkdConfig;

/**
 * Opaque set of report rows with their labels.
 */
typedef struct TfqkdReports TfqkdReports;

/**
 * Finite-size security parameters.
 */
typedef struct TfqkdParams {
  double eps_cor;
  double eps_pa;
  double eps_hat;
  double eps_pe;
  double f_ec;
} TfqkdParams;

/**
 * Inputs of the key-rate formula (after-pairing quantities plus n_vy + n_yv).
 */
typedef struct TfqkdBounds {
  double n1_before;
  double n1_after;
  double e1ph_before;
  double e1ph_after;
  double n_t;
  double e_t;
  double n_vy_plus_n_yv;
} TfqkdBounds;

typedef struct TfqkdKeyRate {
  double r_per_pulse;
  double r_bps;
  double entropy_phase;
  double leak_ec;
  double r_tail;
  double r_unclamped;
  /**
   * Bitwise OR of `TFQKD_FLAG_*`.
   */
  uint32_t flags;
} TfqkdKeyRate;

/**
 * One report row; the label is fetched separately with `tfqkd_reports_label`.
 */
typedef struct TfqkdReport {
  uint32_t channels;
  double r_per_pulse;
  double r_bps;
  double n1_before;
  double n1_after;
  double e1ph_before;
  double e1ph_after;
  double n_t;
  double e_t;
  double leak_ec;
  double r_tail;
  double z_error;
  double x_error;
  uint32_t flags;
} TfqkdReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *tfqkd_last_error(void);

/**
 * Default security parameters (all ε = 1e-10, f = 1.16).
 */
struct TfqkdParams tfqkd_params_default(void);

/**
 * Binary Shannon entropy of `x` in [0, 1].
 *
 * # Safety
 * `out` must be null or point to writable memory for one double.
 */
enum TfqkdStatus tfqkd_binary_entropy(double x, double *out_value);

/**
 * Per-pulse tail correction for `n_total` windows and `n_vy + n_yv` detections.
 *
 * # Safety
 * `params` must be null (defaults) or valid; `out_value` must be writable.
 */
enum TfqkdStatus tfqkd_r_tail(double n_total,
                              double n_vy_plus_n_yv,
                              const struct TfqkdParams *params,
                              double *out_value);

/**
 * Secure key rate for the given bounds.
 *
 * # Safety
 * `bounds` and `out_rate` must be valid; `params` may be null for defaults.
 */
enum TfqkdStatus tfqkd_key_rate(const struct TfqkdBounds *bounds,
                                const struct TfqkdParams *params,
                                double n_total,
                                double effective_rate,
                                uint32_t parallel_channels,
                                struct TfqkdKeyRate *out_rate);

/**
 * Closed-form single-photon yield lower bound from per-window rates.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum TfqkdStatus tfqkd_y1_lower_bound(double mu_x,
                                      double mu_y,
                                      double s_x,
                                      double s_y,
                                      double s00,
                                      double *out_value);

/**
 * Phase-error upper bound; `Domain` when the denominator is not positive.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum TfqkdStatus tfqkd_e1ph_upper_bound(double mu_x,
                                        double t_delta,
                                        double s00,
                                        double y1_lower,
                                        double *out_value);

/**
 * Bundled default configuration.
 *
 * # Safety
 * `out_config` must be writable; the handle is released with `tfqkd_config_free`.
 */
enum TfqkdStatus tfqkd_config_bundled(struct TfqkdConfig **out_config);

/**
 * Parse a TOML configuration.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string; `out_config` must be writable.
 */
enum TfqkdStatus tfqkd_config_from_toml(const char *toml_text, struct TfqkdConfig **out_config);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void tfqkd_config_free(struct TfqkdConfig *config);

/**
 * # Safety
 * `config` must be a valid handle.
 */
enum TfqkdStatus tfqkd_config_set_n_windows(struct TfqkdConfig *config, uint64_t n_windows);

/**
 * # Safety
 * `config` must be a valid handle.
 */
enum TfqkdStatus tfqkd_config_set_seed(struct TfqkdConfig *config, uint64_t seed);

/**
 * Number of configured wavelength channels (0 for a null handle).
 *
 * # Safety
 * `config` must be null or a valid handle.
 */
size_t tfqkd_config_channel_count(const struct TfqkdConfig *config);

/**
 * Optical frequency (Hz) of line `n` of comb A or B (`comb` = 0 or 1).
 *
 * # Safety
 * `config` must be a valid handle and `out_hz` writable.
 */
enum TfqkdStatus tfqkd_line_frequency(const struct TfqkdConfig *config,
                                      uint32_t comb,
                                      int32_t n,
                                      double *out_hz);

/**
 * Simulate every channel; the reports hold one row per channel plus the ensemble.
 *
 * # Safety
 * `config` must be valid and `out_reports` writable.
 */
enum TfqkdStatus tfqkd_simulate(const struct TfqkdConfig *config,
                                struct TfqkdReports **out_reports);

/**
 * Key rates for every column of a ledger CSV given as text. `config` may be
 * null to use the bundled source and finite-key settings.
 *
 * # Safety
 * `csv_text` must be NUL-terminated; `out_reports` writable.
 */
enum TfqkdStatus tfqkd_keyrate_csv(const struct TfqkdConfig *config,
                                   const char *csv_text,
                                   struct TfqkdReports **out_reports);

/**
 * # Safety
 * `reports` must be null or a valid handle.
 */
size_t tfqkd_reports_count(const struct TfqkdReports *reports);

/**
 * # Safety
 * `reports` must be valid and `out_report` writable.
 */
enum TfqkdStatus tfqkd_reports_get(const struct TfqkdReports *reports,
                                   size_t index,
                                   struct TfqkdReport *out_report);

/**
 * Channel label of row `index`, or null when out of range. Valid while the handle lives.
 *
 * # Safety
 * `reports` must be null or a valid handle.
 */
const char *tfqkd_reports_label(const struct TfqkdReports *reports, size_t index);

/**
 * # Safety
 * `reports` must be null or a handle from this library not yet freed.
 */
void tfqkd_reports_free(struct TfqkdReports *reports);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TFQKD_H */
