/*
 * sfgp: non-rigid point-set registration with multi-annotator Gaussian
 * process regression.
 *
 * Every fallible call returns an sfgp_status; on failure a thread-local
 * message is available from sfgp_last_error(). Handles returned through an
 * `out` parameter are owned by the caller and released with the matching
 * *_free function. Pointers returned by accessors are borrowed and stay valid
 * until the owning handle is freed.
 */
#ifndef SFGP_SFGP_H
#define SFGP_SFGP_H

#include <stddef.h>
#include <stdint.h>

#if defined(SFGP_BUILDING_LIBRARY)
#define SFGP_API __attribute__((visibility("default")))
#else
#define SFGP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sfgp_status {
    SFGP_OK = 0,
    SFGP_ERR_INVALID_ARGUMENT = 1,
    SFGP_ERR_INVALID_CONFIG = 2,
    SFGP_ERR_NUMERICAL = 3,
    SFGP_ERR_ANCHOR_MISMATCH = 4,
    SFGP_ERR_RANK_TOO_LARGE = 5,
    SFGP_ERR_UNSUPPORTED = 6,
    SFGP_ERR_DEGENERATE = 7,
    SFGP_ERR_NO_MASS = 8,
    SFGP_ERR_ALL_MISSING = 9,
    SFGP_ERR_NO_ANNOTATION = 10,
    SFGP_ERR_IO = 11,
    SFGP_ERR_INTERNAL = 99
} sfgp_status;

typedef struct sfgp_pointset sfgp_pointset;
typedef struct sfgp_kernel sfgp_kernel;
typedef struct sfgp_result sfgp_result;
typedef struct sfgp_instance sfgp_instance;

SFGP_API const char* sfgp_version(void);
SFGP_API const char* sfgp_status_string(sfgp_status status);
/* Message of the last failed call on this thread ("" if none). */
SFGP_API const char* sfgp_last_error(void);

/* ---- point sets ---------------------------------------------------------- */

/* `coords` is row-major, n rows of `dim` (2 or 3) values. */
SFGP_API sfgp_status sfgp_pointset_create(const double* coords, size_t n, int dim, sfgp_pointset** out);
SFGP_API void sfgp_pointset_free(sfgp_pointset* points);
SFGP_API size_t sfgp_pointset_size(const sfgp_pointset* points);
SFGP_API int sfgp_pointset_dim(const sfgp_pointset* points);
SFGP_API const double* sfgp_pointset_coords(const sfgp_pointset* points);
SFGP_API sfgp_status sfgp_pointset_read_csv(const char* path, sfgp_pointset** out);
SFGP_API sfgp_status sfgp_pointset_write_csv(const sfgp_pointset* points, const char* path);
SFGP_API double sfgp_pointset_mean_nn_distance(const sfgp_pointset* points);

/* The 98-point 2D fish outline used by the benchmarks. */
SFGP_API sfgp_status sfgp_fish_reference(sfgp_pointset** out);

/* ---- configuration ------------------------------------------------------- */

typedef enum sfgp_variance_mode { SFGP_VARIANCE_PER_POINT = 0, SFGP_VARIANCE_SCALAR = 1 } sfgp_variance_mode;
typedef enum sfgp_threshold_mode { SFGP_THRESHOLD_ON = 0, SFGP_THRESHOLD_OFF = 1 } sfgp_threshold_mode;
typedef enum sfgp_correspondence_mode {
    SFGP_CORRESPONDENCE_MULTI_ANNOTATOR = 0,
    SFGP_CORRESPONDENCE_CLOSEST_POINT = 1
} sfgp_correspondence_mode;

typedef struct sfgp_config {
    double omega;
    double p_min;
    double sigma2_init; /* NaN: squared mean nearest-neighbour distance */
    int max_iters;
    double rel_tol;
    double jitter; /* NaN: 1e-8 x mean kernel diagonal */
    sfgp_variance_mode variance_mode;
    sfgp_threshold_mode threshold_mode;
    sfgp_correspondence_mode correspondence_mode;
    int precenter;
    uint64_t seed;
} sfgp_config;

SFGP_API void sfgp_config_default(sfgp_config* cfg);
SFGP_API sfgp_status sfgp_config_validate(const sfgp_config* cfg);

SFGP_API size_t sfgp_variant_count(void);
SFGP_API const char* sfgp_variant_name(size_t index);
/* Sets the mode fields for a named variant (SFGP_Full, SFGP_bcpdReg,
 * GPReg_noTresh, GPClosestPnt); other fields are left untouched. */
SFGP_API sfgp_status sfgp_config_apply_variant(sfgp_config* cfg, const char* name);

/* ---- kernels ------------------------------------------------------------- */

SFGP_API sfgp_status sfgp_kernel_se(double amplitude2, double lengthscale, sfgp_kernel** out);
SFGP_API sfgp_status sfgp_kernel_sum(const sfgp_kernel* const* terms, size_t n_terms, sfgp_kernel** out);
SFGP_API sfgp_status sfgp_kernel_scaled(double factor, const sfgp_kernel* inner, sfgp_kernel** out);
/* Truncated sample covariance of `n_samples` training deformations, each a
 * stacked vector of length N*d registered to `anchor`. */
SFGP_API sfgp_status sfgp_kernel_pca_build(const double* samples, size_t n_samples, const sfgp_pointset* anchor,
                                           size_t rank, sfgp_kernel** out);
SFGP_API sfgp_status sfgp_kernel_pca_save(const sfgp_kernel* kernel, const char* path);
SFGP_API sfgp_status sfgp_kernel_pca_load(const char* path, const sfgp_pointset* anchor, sfgp_kernel** out);
/* k(x, y) for kernels without a PCA term. */
SFGP_API sfgp_status sfgp_kernel_eval(const sfgp_kernel* kernel, const double* x, const double* y, int dim,
                                      double* out);
SFGP_API void sfgp_kernel_free(sfgp_kernel* kernel);

/* ---- registration -------------------------------------------------------- */

typedef struct sfgp_iteration {
    int iter;
    double mean_displacement_change;
    size_t n_inliers;
    size_t n_missing;
    double mean_sigma2;
    double elapsed_ms;
} sfgp_iteration;

typedef void (*sfgp_trace_fn)(const sfgp_iteration* record, void* user);

typedef struct sfgp_result_info {
    int iters;
    int converged;
    int failed;
    int collapsed;
    size_t n_inliers;
    size_t n_missing;
    double min_sigma2; /* smallest registration variance seen at any iteration */
    double jitter;
    size_t underflow_columns;
    int all_finite;
} sfgp_result_info;

/* `trace` may be NULL. */
SFGP_API sfgp_status sfgp_register(const sfgp_pointset* reference, const sfgp_pointset* target,
                                   const sfgp_kernel* kernel, const sfgp_config* cfg, sfgp_trace_fn trace,
                                   void* user, sfgp_result** out);
SFGP_API sfgp_status sfgp_result_info_get(const sfgp_result* result, sfgp_result_info* info);
SFGP_API const sfgp_pointset* sfgp_result_deformed(const sfgp_result* result);
/* Missing reference indices; returns the total count and copies at most
 * `capacity` of them into `out` (which may be NULL). */
SFGP_API size_t sfgp_result_missing(const sfgp_result* result, size_t* out, size_t capacity);
SFGP_API const double* sfgp_result_sigma2(const sfgp_result* result, size_t* n);
SFGP_API size_t sfgp_result_trace(const sfgp_result* result, sfgp_iteration* out, size_t capacity);
SFGP_API sfgp_status sfgp_result_write_summary(const sfgp_result* result, const char* path);
/* One key=value line per iteration. */
SFGP_API sfgp_status sfgp_result_write_trace(const sfgp_result* result, const char* path);
SFGP_API void sfgp_result_free(sfgp_result* result);

/* ---- synthetic data ------------------------------------------------------ */

typedef struct sfgp_perturbation {
    double warp_amplitude;
    double warp_bandwidth;
    int warp_controls;
    double missing_width;
    int64_t missing_center; /* reference index, -1 for random */
    double outlier_ratio;
    double noise_std;
    double rotation_max;
    uint64_t seed;
} sfgp_perturbation;

SFGP_API void sfgp_perturbation_default(sfgp_perturbation* spec);
/* Warp amplitude and noise std for the benchmark levels (rotation 0.1 rad). */
SFGP_API sfgp_status sfgp_perturbation_from_levels(int deformation_level, int noise_level, sfgp_perturbation* spec);
SFGP_API sfgp_status sfgp_generate(const sfgp_pointset* reference, const sfgp_perturbation* spec,
                                   sfgp_instance** out);
SFGP_API const sfgp_pointset* sfgp_instance_target(const sfgp_instance* instance);
SFGP_API const sfgp_pointset* sfgp_instance_ground_truth(const sfgp_instance* instance);
SFGP_API const unsigned char* sfgp_instance_missing_mask(const sfgp_instance* instance, size_t* n);
SFGP_API const unsigned char* sfgp_instance_outlier_mask(const sfgp_instance* instance, size_t* n);
SFGP_API sfgp_status sfgp_instance_write(const sfgp_instance* instance, const char* dir);
SFGP_API sfgp_status sfgp_instance_read(const char* dir, sfgp_instance** out);
SFGP_API void sfgp_instance_free(sfgp_instance* instance);

SFGP_API uint64_t sfgp_derive_seed(uint64_t master, uint64_t stream, uint64_t index);

/* ---- metrics ------------------------------------------------------------- */

/* Undefined quantities are NaN: errors of an empty subset or of a failed run,
 * recall without true missing points, precision with no predicted ones. */
typedef struct sfgp_metrics {
    int success;
    double error_all;
    double error_missing;
    double error_nonmissing;
    double recall;
    double precision;
} sfgp_metrics;

SFGP_API sfgp_status sfgp_evaluate(const sfgp_result* result, const sfgp_instance* instance, sfgp_metrics* out);
/* Same for a deformed reference loaded from disk. */
SFGP_API sfgp_status sfgp_evaluate_points(const sfgp_pointset* deformed, const size_t* missing, size_t n_missing,
                                          const sfgp_instance* instance, sfgp_metrics* out);
SFGP_API sfgp_status sfgp_success_ratio(const int* failed, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif /* SFGP_SFGP_H */
