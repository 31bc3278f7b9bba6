/* C interface to lmbridge. All handles are opaque and owned by the caller
 * once returned; release them with the matching *_free function.
 * Functions return LMB_OK or an error status; lmb_last_error() then holds a
 * message for the calling thread. */
#ifndef LMBRIDGE_LMBRIDGE_H
#define LMBRIDGE_LMBRIDGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(LMB_BUILDING_LIBRARY)
#define LMB_API __attribute__((visibility("default")))
#else
#define LMB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lmb_status {
  LMB_OK = 0,
  LMB_ERR_INVALID_ARGUMENT = 1,
  LMB_ERR_DOMAIN = 2,
  LMB_ERR_ALIGNMENT = 3,
  LMB_ERR_SIMULATION_BLOWUP = 4,
  LMB_ERR_TRAINING = 5,
  LMB_ERR_ESTIMATION = 6,
  LMB_ERR_IO = 7,
  LMB_ERR_INTERNAL = 8
} lmb_status;

typedef struct lmb_shape lmb_shape;
typedef struct lmb_process lmb_process;
typedef struct lmb_model lmb_model;
typedef struct lmb_path lmb_path;
typedef struct lmb_sweep lmb_sweep;
typedef struct lmb_mean_trajectory lmb_mean_trajectory;

LMB_API const char* lmb_version(void);
LMB_API const char* lmb_last_error(void);
LMB_API const char* lmb_status_name(lmb_status status);
/* Independent stream seed derived from a base seed (SplitMix64). */
LMB_API uint64_t lmb_derive_seed(uint64_t base, uint64_t stream);
/* 0 restores the default (hardware concurrency). */
LMB_API lmb_status lmb_set_threads(unsigned threads);

/* ---- shapes ---- */

/* points: n x dim, row-major. */
LMB_API lmb_status lmb_shape_from_points(const double* points, size_t n, size_t dim, lmb_shape** out);
LMB_API lmb_status lmb_shape_from_csv(const char* path, lmb_shape** out);

typedef struct lmb_synth_params {
  double radius;
  double semi_axis_x;
  double semi_axis_y;
  double perturbation;
  size_t harmonics;
} lmb_synth_params;

LMB_API void lmb_synth_params_defaults(lmb_synth_params* params);
/* kind: "circle", "ellipse" or "blob". */
LMB_API lmb_status lmb_shape_synth(const char* kind, size_t n, const lmb_synth_params* params, uint64_t seed,
                                   lmb_shape** out);
/* Closed outline CSV (x,y[,z] per row) resampled to n landmarks by arc length. */
LMB_API lmb_status lmb_shape_resample(const char* outline_csv, size_t n, lmb_shape** out);
/* Similarity-aligns target onto reference; residual (may be NULL) receives the summed squared distance. */
LMB_API lmb_status lmb_shape_align(const lmb_shape* reference, const lmb_shape* target, lmb_shape** out,
                                   double* residual);
LMB_API size_t lmb_shape_size(const lmb_shape* shape);
LMB_API size_t lmb_shape_dim(const lmb_shape* shape);
/* Copies the n x dim row-major points; len must be at least n * dim. */
LMB_API lmb_status lmb_shape_points(const lmb_shape* shape, double* out, size_t len);
LMB_API lmb_status lmb_shape_write_csv(const lmb_shape* shape, const char* path);
LMB_API void lmb_shape_free(lmb_shape* shape);

/* ---- processes ---- */

typedef struct lmb_kernel {
  double variance;
  double lengthscale;
} lmb_kernel;

typedef struct lmb_grid {
  double t0;
  double t1;
  size_t steps;
} lmb_grid;

LMB_API lmb_status lmb_process_kunita(lmb_kernel kernel, size_t landmarks, size_t dim, lmb_process** out);
LMB_API lmb_status lmb_process_frozen_brownian(lmb_kernel kernel, const lmb_shape* frozen, lmb_process** out);
LMB_API lmb_status lmb_process_with_variance(const lmb_process* process, double variance, lmb_process** out);
LMB_API void lmb_process_free(lmb_process* process);

/* log N(x1; x0, (t1 - t0) Sigma) for a frozen_brownian process. */
LMB_API lmb_status lmb_brownian_loglik(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1,
                                       double elapsed, double* out);

/* ---- paths ---- */

/* Forward Euler-Maruyama from x0 with noise seeded by seed. */
LMB_API lmb_status lmb_simulate(const lmb_process* process, const lmb_shape* x0, lmb_grid grid, uint64_t seed,
                                lmb_path** out);
LMB_API size_t lmb_path_rows(const lmb_path* path);
LMB_API size_t lmb_path_cols(const lmb_path* path);
LMB_API lmb_status lmb_path_times(const lmb_path* path, double* out, size_t len);
/* rows x cols, row-major. */
LMB_API lmb_status lmb_path_states(const lmb_path* path, double* out, size_t len);
/* CSV columns t,x1,...,x{n d}. */
LMB_API lmb_status lmb_path_write_csv(const lmb_path* path, const char* file);
LMB_API void lmb_path_free(lmb_path* path);

/* ---- score models ---- */

typedef struct lmb_train_config {
  size_t iterations;
  size_t paths_per_batch;
  double learning_rate;
  double final_learning_rate_factor;
  uint64_t seed;
  double guard_band; /* negative: two time steps */
  size_t widths[8];
  size_t width_count;
  size_t embed_dim;
  double variance_min; /* both <= 0: train at the process variance only */
  double variance_max;
  size_t validation_paths;
  size_t validation_every;
} lmb_train_config;

LMB_API void lmb_train_config_defaults(lmb_train_config* config);
LMB_API lmb_status lmb_train_score(const lmb_process* process, const lmb_shape* x_start, lmb_grid grid,
                                   const lmb_train_config* config, lmb_model** out);
/* CSV columns iteration,train_loss,validation_loss (empty only for a loaded model). */
LMB_API lmb_status lmb_model_write_training_log(const lmb_model* model, const char* file);
LMB_API lmb_status lmb_model_save(const lmb_model* model, const char* file);
LMB_API lmb_status lmb_model_load(const char* file, lmb_model** out);
LMB_API size_t lmb_model_state_dim(const lmb_model* model);
/* Learned grad log p(x_t | x_start) at time t and variance v; x and out have state_dim entries. */
LMB_API lmb_status lmb_model_score(const lmb_model* model, double t, const double* x, double v, double* out);
LMB_API void lmb_model_free(lmb_model* model);

/* ---- bridges and likelihoods ---- */

typedef enum lmb_proposal {
  LMB_PROPOSAL_ANALYTIC_EXACT = 0, /* forward Brownian bridge, exact transitions */
  LMB_PROPOSAL_ANALYTIC_EULER = 1, /* forward Doob drift, Euler transitions */
  LMB_PROPOSAL_REVERSE = 2         /* reverse-time bridge, analytic or learned score */
} lmb_proposal;

typedef enum lmb_mode { LMB_MODE_FULL_GAUSSIAN = 0, LMB_MODE_VARIANCE_PROFILE = 1 } lmb_mode;

typedef struct lmb_bridge_config {
  lmb_proposal proposal;
  const lmb_model* model; /* reverse bridges: NULL selects the analytic score */
  int include_divergence;
  size_t guard_steps; /* 0: 1 for forward, 2 for reverse bridges */
} lmb_bridge_config;

LMB_API void lmb_bridge_config_defaults(lmb_bridge_config* config);
/* One bridge path from x0 to x1 with both pinned endpoints included. */
LMB_API lmb_status lmb_sample_bridge(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1,
                                     lmb_grid grid, const lmb_bridge_config* config, uint64_t seed, lmb_path** out);

typedef struct lmb_estimator_config {
  size_t samples;
  lmb_mode mode;
  uint64_t seed;
  lmb_bridge_config bridge;
} lmb_estimator_config;

LMB_API void lmb_estimator_config_defaults(lmb_estimator_config* config);

typedef struct lmb_estimate {
  double variance;
  double loglik;
  double ess;
  size_t n_samples;
  size_t m_steps;
  uint64_t seed;
  lmb_mode mode;
} lmb_estimate;

LMB_API lmb_status lmb_estimate_loglik(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1,
                                       lmb_grid grid, const lmb_estimator_config* config, lmb_estimate* out);
/* JSON object {v, loglik, ess, n_samples, m_steps, seed, mode}. */
LMB_API lmb_status lmb_estimate_write_json(const lmb_estimate* estimate, const char* file);

LMB_API lmb_status lmb_loglik_sweep(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1,
                                    lmb_grid grid, const double* variances, size_t count,
                                    const lmb_estimator_config* config, lmb_sweep** out);
LMB_API size_t lmb_sweep_size(const lmb_sweep* sweep);
LMB_API size_t lmb_sweep_argmax(const lmb_sweep* sweep);
LMB_API lmb_status lmb_sweep_get(const lmb_sweep* sweep, size_t index, lmb_estimate* out);
/* CSV columns v,loglik,ess. */
LMB_API lmb_status lmb_sweep_write_csv(const lmb_sweep* sweep, const char* file);
LMB_API void lmb_sweep_free(lmb_sweep* sweep);

/* ---- inference ---- */

typedef struct lmb_optimizer_config {
  size_t max_iterations;
  double tolerance;
  double initial_step;
  double shrink;
  double sufficient_increase;
  int fresh_noise;
  uint64_t seed;
} lmb_optimizer_config;

LMB_API void lmb_optimizer_config_defaults(lmb_optimizer_config* config);

typedef struct lmb_variance_result {
  double variance;
  double loglik;
  int converged; /* 0: iteration limit reached, variance is the last accepted iterate */
  size_t iterations;
} lmb_variance_result;

/* Gradient ascent in log v. Frozen-Brownian processes with analytic forward proposals use
 * exact pathwise gradients; other combinations use central differences on common noise. */
LMB_API lmb_status lmb_infer_variance(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1,
                                      lmb_grid grid, const lmb_estimator_config* estimator,
                                      const lmb_optimizer_config* optimizer, double init_variance,
                                      lmb_variance_result* out);

/* Diffusion mean of observations under a frozen_brownian process with analytic forward proposals. */
LMB_API lmb_status lmb_diffusion_mean(const lmb_process* process, const lmb_shape* const* observations, size_t count,
                                      const lmb_shape* init, lmb_grid grid, const lmb_estimator_config* estimator,
                                      const lmb_optimizer_config* optimizer, lmb_mean_trajectory** out);
LMB_API size_t lmb_mean_trajectory_size(const lmb_mean_trajectory* trajectory);
LMB_API int lmb_mean_trajectory_converged(const lmb_mean_trajectory* trajectory);
/* coords receives state_dim values (may be NULL); loglik may be NULL. */
LMB_API lmb_status lmb_mean_trajectory_get(const lmb_mean_trajectory* trajectory, size_t index, double* coords,
                                           size_t len, double* loglik);
/* CSV columns iteration,loglik,x1,...,x{n d}. */
LMB_API lmb_status lmb_mean_trajectory_write_csv(const lmb_mean_trajectory* trajectory, const char* file);
LMB_API void lmb_mean_trajectory_free(lmb_mean_trajectory* trajectory);

#ifdef __cplusplus
}
#endif

#endif
