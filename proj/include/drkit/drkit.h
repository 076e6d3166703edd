/* C interface of the drkit shared library.
 *
 * Every function returns a status code (DRK_OK on success). On failure the
 * message is available from drk_last_error() on the calling thread until the
 * next call into the library. Matrices are 3x3 row-major arrays of 9 doubles,
 * planar transforms are (dx, dy, dpsi). */
#ifndef DRKIT_H
#define DRKIT_H

#include <stddef.h>

#if defined(DRK_BUILDING_LIBRARY)
#define DRK_API __attribute__((visibility("default")))
#else
#define DRK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum drk_status {
    DRK_OK = 0,
    DRK_INVALID_ARGUMENT = 1,
    DRK_SCHEMA = 2,
    DRK_MISSING_DEPENDENCY = 3,
    DRK_CONSISTENCY = 4,
    DRK_NUMERICAL = 5,
    DRK_UNOBSERVABLE = 10,
    DRK_DOMAIN = 11,
    DRK_DEGENERATE_COVARIANCE = 12,
    DRK_NO_CONSENSUS = 13,
    DRK_TOO_MANY_CORRELATED = 14,
    DRK_INSUFFICIENT_EPOCHS = 15,
    DRK_DIRECTION_UNDEFINED = 16,
    DRK_CHAIN_BROKEN = 17,
    DRK_SEGMENT_TOO_SHORT = 18,
    DRK_INTERNAL = 99
};

typedef struct drk_series drk_series;
typedef struct drk_rls drk_rls;
typedef struct drk_covest drk_covest;

DRK_API const char* drk_version(void);
DRK_API const char* drk_last_error(void);
DRK_API const char* drk_status_name(int status);
/* Process exit code for a status: 0, 2 schema, 3 missing, 4 consistency, 5 numerical, else 1. */
DRK_API int drk_exit_code(int status);

/* Runs a subcommand (simulate, calibrate, covest, fuse, monitor, plotdata)
 * with a JSON config. On success *summary_json receives a JSON summary to be
 * released with drk_free_string; it may be NULL when not wanted. */
DRK_API int drk_run(const char* command, const char* config_json, char** summary_json);
DRK_API void drk_free_string(char* s);

/* Time series of one sensor channel; timestamps must increase. */
DRK_API int drk_series_create(const char* sensor_id, const char* channel, size_t dim, drk_series** out);
DRK_API void drk_series_destroy(drk_series* series);
DRK_API int drk_series_push(drk_series* series, double t, const double* values);
DRK_API size_t drk_series_size(const drk_series* series);
/* Linear interpolation; DRK_DOMAIN outside the covered span. */
DRK_API int drk_series_interpolate(const drk_series* series, double t, double* values);
DRK_API int drk_estimate_time_delay(const drk_series* reference, const drk_series* delayed, double search_window,
                                    size_t filter_window, double* delay, double* correlation_peak);

/* Recursive least squares for y = scale * x + offset. */
DRK_API int drk_rls_create(double forgetting, drk_rls** out);
DRK_API void drk_rls_destroy(drk_rls* rls);
DRK_API int drk_rls_update(drk_rls* rls, double x, double y);
/* covariance: 2x2 row-major over (scale, offset); may be NULL. */
DRK_API int drk_rls_result(const drk_rls* rls, double* scale, double* offset, double* covariance);

/* Sliding-window covariance estimation from k odometers. correlated_pairs
 * holds n_pairs index pairs (a0, b0, a1, b1, ...). */
DRK_API int drk_covest_create(size_t k, size_t window, const size_t* correlated_pairs, size_t n_pairs,
                              drk_covest** out);
DRK_API void drk_covest_destroy(drk_covest* est);
/* transforms: k rows of (dx, dy, dpsi). */
DRK_API int drk_covest_push(drk_covest* est, const double* transforms);
/* Refreshes the estimate; DRK_INSUFFICIENT_EPOCHS until the window holds 7 epochs. */
DRK_API int drk_covest_estimate(drk_covest* est);
DRK_API int drk_covest_covariance(const drk_covest* est, size_t index, double* cov);
DRK_API int drk_covest_cross(const drk_covest* est, size_t a, size_t b, double* cross);

DRK_API int drk_chi2_quantile(double p, int dof, double* quantile);
/* cross = E[e_candidate e_reference^T], may be NULL. */
DRK_API int drk_nis_test(const double* candidate, const double* candidate_cov, const double* reference,
                         const double* reference_cov, const double* cross, double alpha, double* nis,
                         double* threshold, int* accepted);
DRK_API int drk_fuse_pair(const double* a, const double* a_cov, const double* b, const double* b_cov,
                          const double* cross, double* fused, double* fused_cov);
/* Noise-corrected distance between two fixes with isotropic sigmas. */
DRK_API int drk_correct_segment_distance(double measured, double sigma1, double sigma2, double* distance);

#ifdef __cplusplus
}
#endif

#endif
