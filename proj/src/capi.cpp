#include "lmbridge/lmbridge.h"

#include <memory>
#include <string>
#include <vector>

#include "lmbridge/bridge.hpp"
#include "lmbridge/error.hpp"
#include "lmbridge/infer.hpp"
#include "lmbridge/likelihood.hpp"
#include "lmbridge/parallel.hpp"
#include "lmbridge/score.hpp"
#include "lmbridge/shapes.hpp"
#include "text_io.hpp"

struct lmb_shape {
  lmb::LandmarkShape shape;
};
struct lmb_process {
  lmb::ProcessSpec spec;
};
struct lmb_model {
  std::shared_ptr<const lmb::ScoreModel> model;
  std::vector<lmb::TrainingRecord> log;
};
struct lmb_path {
  lmb::TimedPath path;
};
struct lmb_sweep {
  lmb::SweepResult sweep;
};
struct lmb_mean_trajectory {
  lmb::MeanTrajectory trajectory;
};

namespace {

thread_local std::string last_error;

class InvalidArgument : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class F>
lmb_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return LMB_OK;
  } catch (const InvalidArgument& e) {
    last_error = e.what();
    return LMB_ERR_INVALID_ARGUMENT;
  } catch (const lmb::AlignmentError& e) {
    last_error = e.what();
    return LMB_ERR_ALIGNMENT;
  } catch (const lmb::SimulationBlowup& e) {
    last_error = e.what();
    return LMB_ERR_SIMULATION_BLOWUP;
  } catch (const lmb::TrainingError& e) {
    last_error = e.what();
    return LMB_ERR_TRAINING;
  } catch (const lmb::EstimationError& e) {
    last_error = e.what();
    return LMB_ERR_ESTIMATION;
  } catch (const lmb::IoError& e) {
    last_error = e.what();
    return LMB_ERR_IO;
  } catch (const lmb::DomainError& e) {
    last_error = e.what();
    return LMB_ERR_DOMAIN;
  } catch (const std::exception& e) {
    last_error = e.what();
    return LMB_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return LMB_ERR_INTERNAL;
  }
}

template <class T>
const T& need(const T* p, const char* what) {
  if (!p) throw InvalidArgument(std::string(what) + " must not be NULL");
  return *p;
}

std::string need(const char* s, const char* what) {
  if (!s) throw InvalidArgument(std::string(what) + " must not be NULL");
  return s;
}

template <class T>
void need_out(T** out) {
  if (!out) throw InvalidArgument("output pointer must not be NULL");
  *out = nullptr;
}

lmb::TimeGrid to_grid(lmb_grid g) { return lmb::TimeGrid(g.t0, g.t1, g.steps); }

lmb::TimedPath timed(const lmb::PathSample& p) {
  lmb::TimedPath out;
  out.states = p.states;
  for (lmb::Index r = 0; r < p.states.rows(); ++r) out.times.push_back(p.time(r));
  return out;
}

lmb::LikelihoodMode to_mode(lmb_mode mode) {
  switch (mode) {
    case LMB_MODE_FULL_GAUSSIAN: return lmb::LikelihoodMode::full_gaussian;
    case LMB_MODE_VARIANCE_PROFILE: return lmb::LikelihoodMode::variance_profile;
  }
  throw InvalidArgument("unknown likelihood mode");
}

lmb_mode from_mode(lmb::LikelihoodMode mode) {
  return mode == lmb::LikelihoodMode::full_gaussian ? LMB_MODE_FULL_GAUSSIAN : LMB_MODE_VARIANCE_PROFILE;
}

std::shared_ptr<const lmb::ScoreModel> model_of(const lmb_bridge_config& c) {
  return c.model ? c.model->model : nullptr;
}

lmb::BridgeSpec reverse_spec(const lmb::ProcessSpec& proc, const lmb::Vector& x0, const lmb::Vector& x1,
                             const lmb::TimeGrid& grid, const lmb_bridge_config& c) {
  lmb::BridgeSpec spec;
  spec.base = proc;
  spec.x_start = x0;
  spec.t0 = grid.t0();
  spec.x_end = x1;
  spec.t1 = grid.t1();
  spec.score = c.model ? lmb::ScoreSource::learned(model_of(c)) : lmb::ScoreSource::analytic();
  spec.include_divergence = c.include_divergence != 0;
  spec.guard_steps = c.guard_steps ? c.guard_steps : 2;
  return spec;
}

bool is_analytic(lmb_proposal p) { return p == LMB_PROPOSAL_ANALYTIC_EXACT || p == LMB_PROPOSAL_ANALYTIC_EULER; }

lmb::BridgeTransition transition_of(lmb_proposal p) {
  return p == LMB_PROPOSAL_ANALYTIC_EULER ? lmb::BridgeTransition::euler : lmb::BridgeTransition::exact;
}

lmb::ProposalFactory factory(const lmb::Vector& x0, const lmb::Vector& x1, const lmb::TimeGrid& grid,
                             const lmb_bridge_config& c) {
  if (is_analytic(c.proposal)) {
    const auto transition = transition_of(c.proposal);
    const std::size_t guard = c.guard_steps ? c.guard_steps : 1;
    return [=](const lmb::ProcessSpec& proc) {
      return lmb::analytic_bridge_proposal(proc, x0, x1, grid, transition, guard);
    };
  }
  if (c.proposal != LMB_PROPOSAL_REVERSE) throw InvalidArgument("unknown proposal kind");
  return [=](const lmb::ProcessSpec& proc) {
    return lmb::reverse_bridge_proposal(reverse_spec(proc, x0, x1, grid, c), grid);
  };
}

lmb::EstimatorConfig estimator_of(const lmb_estimator_config& c) {
  return {c.samples, to_mode(c.mode), c.seed};
}

lmb::OptimizerConfig optimizer_of(const lmb_optimizer_config& c) {
  lmb::OptimizerConfig o;
  o.max_iterations = c.max_iterations;
  o.tolerance = c.tolerance;
  o.initial_step = c.initial_step;
  o.shrink = c.shrink;
  o.sufficient_increase = c.sufficient_increase;
  o.fresh_noise = c.fresh_noise != 0;
  o.seed = c.seed;
  return o;
}

lmb_estimate to_c(const lmb::LogLikEstimate& e) {
  return {e.variance, e.value, e.ess, e.n_samples, e.m_steps, e.seed, from_mode(e.mode)};
}

lmb::LogLikEstimate from_c(const lmb_estimate& e) {
  lmb::LogLikEstimate out;
  out.variance = e.variance;
  out.value = e.loglik;
  out.ess = e.ess;
  out.n_samples = e.n_samples;
  out.m_steps = e.m_steps;
  out.seed = e.seed;
  out.mode = to_mode(e.mode);
  return out;
}

void check_endpoints(const lmb::ProcessSpec& proc, const lmb_shape& a, const lmb_shape& b) {
  if (a.shape.state_dim() != proc.state_dim() || b.shape.state_dim() != proc.state_dim())
    throw lmb::DomainError("shape dimensions do not match the process");
}

}  // namespace

extern "C" {

const char* lmb_version(void) { return LMBRIDGE_VERSION; }

const char* lmb_last_error(void) { return last_error.c_str(); }

const char* lmb_status_name(lmb_status status) {
  switch (status) {
    case LMB_OK: return "ok";
    case LMB_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case LMB_ERR_DOMAIN: return "domain_error";
    case LMB_ERR_ALIGNMENT: return "alignment_error";
    case LMB_ERR_SIMULATION_BLOWUP: return "simulation_blowup";
    case LMB_ERR_TRAINING: return "training_error";
    case LMB_ERR_ESTIMATION: return "estimation_error";
    case LMB_ERR_IO: return "io_error";
    case LMB_ERR_INTERNAL: return "internal_error";
  }
  return "unknown";
}

uint64_t lmb_derive_seed(uint64_t base, uint64_t stream) { return lmb::derive_seed(base, stream); }

lmb_status lmb_set_threads(unsigned threads) {
  return guarded([&] { lmb::set_thread_count(threads); });
}

lmb_status lmb_shape_from_points(const double* points, size_t n, size_t dim, lmb_shape** out) {
  return guarded([&] {
    need_out(out);
    if (!points) throw InvalidArgument("points must not be NULL");
    lmb::Matrix m = Eigen::Map<const lmb::RowMatrix>(points, static_cast<lmb::Index>(n), static_cast<lmb::Index>(dim));
    *out = new lmb_shape{lmb::LandmarkShape(std::move(m))};
  });
}

lmb_status lmb_shape_from_csv(const char* path, lmb_shape** out) {
  return guarded([&] {
    need_out(out);
    *out = new lmb_shape{lmb::read_landmarks_csv(need(path, "path"))};
  });
}

void lmb_synth_params_defaults(lmb_synth_params* params) {
  if (!params) return;
  const lmb::SynthParams d;
  *params = {d.radius, d.semi_axis_x, d.semi_axis_y, d.perturbation, static_cast<size_t>(d.harmonics)};
}

lmb_status lmb_shape_synth(const char* kind, size_t n, const lmb_synth_params* params, uint64_t seed,
                           lmb_shape** out) {
  return guarded([&] {
    need_out(out);
    lmb::SynthParams p;
    if (params) {
      p.radius = params->radius;
      p.semi_axis_x = params->semi_axis_x;
      p.semi_axis_y = params->semi_axis_y;
      p.perturbation = params->perturbation;
      p.harmonics = static_cast<decltype(p.harmonics)>(params->harmonics);
    }
    *out = new lmb_shape{
        lmb::synth_shape(lmb::parse_synth_kind(need(kind, "kind")), static_cast<lmb::Index>(n), p, seed)};
  });
}

lmb_status lmb_shape_resample(const char* outline_csv, size_t n, lmb_shape** out) {
  return guarded([&] {
    need_out(out);
    *out = new lmb_shape{
        lmb::resample_outline(lmb::read_points_csv(need(outline_csv, "outline_csv")), static_cast<lmb::Index>(n))};
  });
}

lmb_status lmb_shape_align(const lmb_shape* reference, const lmb_shape* target, lmb_shape** out, double* residual) {
  return guarded([&] {
    need_out(out);
    const auto& ref = need(reference, "reference").shape;
    auto aligned = lmb::procrustes_align(ref, need(target, "target").shape);
    if (residual) *residual = lmb::procrustes_residual(ref, aligned);
    *out = new lmb_shape{std::move(aligned)};
  });
}

size_t lmb_shape_size(const lmb_shape* shape) { return shape ? static_cast<size_t>(shape->shape.size()) : 0; }

size_t lmb_shape_dim(const lmb_shape* shape) { return shape ? static_cast<size_t>(shape->shape.dim()) : 0; }

lmb_status lmb_shape_points(const lmb_shape* shape, double* out, size_t len) {
  return guarded([&] {
    const auto& s = need(shape, "shape").shape;
    if (!out || len < static_cast<size_t>(s.state_dim())) throw InvalidArgument("output buffer too small");
    Eigen::Map<lmb::RowMatrix>(out, s.size(), s.dim()) = s.points();
  });
}

lmb_status lmb_shape_write_csv(const lmb_shape* shape, const char* path) {
  return guarded([&] { lmb::write_landmarks_csv(need(shape, "shape").shape, need(path, "path")); });
}

void lmb_shape_free(lmb_shape* shape) { delete shape; }

lmb_status lmb_process_kunita(lmb_kernel kernel, size_t landmarks, size_t dim, lmb_process** out) {
  return guarded([&] {
    need_out(out);
    *out = new lmb_process{lmb::make_kunita({kernel.variance, kernel.lengthscale}, static_cast<lmb::Index>(landmarks),
                                            static_cast<lmb::Index>(dim))};
  });
}

lmb_status lmb_process_frozen_brownian(lmb_kernel kernel, const lmb_shape* frozen, lmb_process** out) {
  return guarded([&] {
    need_out(out);
    *out = new lmb_process{
        lmb::make_frozen_brownian({kernel.variance, kernel.lengthscale}, need(frozen, "frozen").shape)};
  });
}

lmb_status lmb_process_with_variance(const lmb_process* process, double variance, lmb_process** out) {
  return guarded([&] {
    need_out(out);
    *out = new lmb_process{lmb::with_variance(need(process, "process").spec, variance)};
  });
}

void lmb_process_free(lmb_process* process) { delete process; }

lmb_status lmb_brownian_loglik(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1, double elapsed,
                               double* out) {
  return guarded([&] {
    const auto& proc = need(process, "process").spec;
    if (!out) throw InvalidArgument("output pointer must not be NULL");
    if (proc.kind != lmb::ProcessKind::frozen_brownian) throw lmb::DomainError("needs a frozen_brownian process");
    check_endpoints(proc, need(x0, "x0"), need(x1, "x1"));
    *out = lmb::brownian_log_density(x1->shape.flatten(), x0->shape.flatten(), *proc.constant_sigma, elapsed);
  });
}

lmb_status lmb_simulate(const lmb_process* process, const lmb_shape* x0, lmb_grid grid, uint64_t seed,
                        lmb_path** out) {
  return guarded([&] {
    need_out(out);
    const auto& proc = need(process, "process").spec;
    const lmb::TimeGrid g = to_grid(grid);
    const lmb::Vector start = need(x0, "x0").shape.flatten();
    *out = new lmb_path{timed(lmb::euler_maruyama(proc, start, g, lmb::sample_noise(seed, g, start.size())))};
  });
}

size_t lmb_path_rows(const lmb_path* path) { return path ? static_cast<size_t>(path->path.states.rows()) : 0; }

size_t lmb_path_cols(const lmb_path* path) { return path ? static_cast<size_t>(path->path.states.cols()) : 0; }

lmb_status lmb_path_times(const lmb_path* path, double* out, size_t len) {
  return guarded([&] {
    const auto& p = need(path, "path").path;
    if (!out || len < p.times.size()) throw InvalidArgument("output buffer too small");
    std::copy(p.times.begin(), p.times.end(), out);
  });
}

lmb_status lmb_path_states(const lmb_path* path, double* out, size_t len) {
  return guarded([&] {
    const auto& p = need(path, "path").path;
    if (!out || len < static_cast<size_t>(p.states.size())) throw InvalidArgument("output buffer too small");
    Eigen::Map<lmb::RowMatrix>(out, p.states.rows(), p.states.cols()) = p.states;
  });
}

lmb_status lmb_path_write_csv(const lmb_path* path, const char* file) {
  return guarded([&] { lmb::detail::write_text_file(need(file, "file"), lmb::timed_path_csv(need(path, "path").path)); });
}

void lmb_path_free(lmb_path* path) { delete path; }

void lmb_train_config_defaults(lmb_train_config* config) {
  if (!config) return;
  const lmb::TrainConfig d;
  *config = {};
  config->iterations = d.iterations;
  config->paths_per_batch = d.paths_per_batch;
  config->learning_rate = d.learning_rate;
  config->final_learning_rate_factor = d.final_learning_rate_factor;
  config->seed = d.seed;
  config->guard_band = d.guard_band;
  config->width_count = d.widths.size();
  for (size_t i = 0; i < d.widths.size(); ++i) config->widths[i] = static_cast<size_t>(d.widths[i]);
  config->embed_dim = static_cast<size_t>(d.embed_dim);
  config->variance_min = 0.0;
  config->variance_max = 0.0;
  config->validation_paths = d.validation_paths;
  config->validation_every = d.validation_every;
}

lmb_status lmb_train_score(const lmb_process* process, const lmb_shape* x_start, lmb_grid grid,
                           const lmb_train_config* config, lmb_model** out) {
  return guarded([&] {
    need_out(out);
    const auto& c = need(config, "config");
    lmb::TrainConfig t;
    t.iterations = c.iterations;
    t.paths_per_batch = c.paths_per_batch;
    t.learning_rate = c.learning_rate;
    t.final_learning_rate_factor = c.final_learning_rate_factor;
    t.seed = c.seed;
    t.guard_band = c.guard_band;
    if (c.width_count == 0 || c.width_count > 8) throw InvalidArgument("width_count must be between 1 and 8");
    t.widths.assign(c.widths, c.widths + c.width_count);
    t.embed_dim = static_cast<lmb::Index>(c.embed_dim);
    if (c.variance_min > 0.0 || c.variance_max > 0.0) t.variance_range = {{c.variance_min, c.variance_max}};
    t.validation_paths = c.validation_paths;
    t.validation_every = c.validation_every;
    auto result = lmb::train_score(need(process, "process").spec, need(x_start, "x_start").shape.flatten(),
                                   to_grid(grid), t);
    *out = new lmb_model{std::make_shared<const lmb::ScoreModel>(std::move(result.model)), std::move(result.log)};
  });
}

lmb_status lmb_model_write_training_log(const lmb_model* model, const char* file) {
  return guarded(
      [&] { lmb::detail::write_text_file(need(file, "file"), lmb::training_log_csv(need(model, "model").log)); });
}

lmb_status lmb_model_save(const lmb_model* model, const char* file) {
  return guarded([&] { lmb::save_score_model(*need(model, "model").model, need(file, "file")); });
}

lmb_status lmb_model_load(const char* file, lmb_model** out) {
  return guarded([&] {
    need_out(out);
    *out = new lmb_model{std::make_shared<const lmb::ScoreModel>(lmb::load_score_model(need(file, "file"))), {}};
  });
}

size_t lmb_model_state_dim(const lmb_model* model) {
  return model ? static_cast<size_t>(model->model->state_dim()) : 0;
}

lmb_status lmb_model_score(const lmb_model* model, double t, const double* x, double v, double* out) {
  return guarded([&] {
    const auto& m = *need(model, "model").model;
    if (!x || !out) throw InvalidArgument("x and out must not be NULL");
    const lmb::Vector s = lmb::learned_score(m, t, Eigen::Map<const lmb::Vector>(x, m.state_dim()), v);
    Eigen::Map<lmb::Vector>(out, m.state_dim()) = s;
  });
}

void lmb_model_free(lmb_model* model) { delete model; }

void lmb_bridge_config_defaults(lmb_bridge_config* config) {
  if (!config) return;
  *config = {LMB_PROPOSAL_ANALYTIC_EXACT, nullptr, 1, 0};
}

lmb_status lmb_sample_bridge(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1, lmb_grid grid,
                             const lmb_bridge_config* config, uint64_t seed, lmb_path** out) {
  return guarded([&] {
    need_out(out);
    const auto& proc = need(process, "process").spec;
    const auto& c = need(config, "config");
    check_endpoints(proc, need(x0, "x0"), need(x1, "x1"));
    const lmb::Vector a = x0->shape.flatten();
    const lmb::Vector b = x1->shape.flatten();
    const lmb::TimeGrid g = to_grid(grid);
    const lmb::PathSample path = factory(a, b, g, c)(proc).draw(seed);
    *out = new lmb_path{lmb::complete_bridge_path(path, a, b)};
  });
}

void lmb_estimator_config_defaults(lmb_estimator_config* config) {
  if (!config) return;
  config->samples = 1000;
  config->mode = LMB_MODE_VARIANCE_PROFILE;
  config->seed = 0;
  lmb_bridge_config_defaults(&config->bridge);
}

lmb_status lmb_estimate_loglik(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1, lmb_grid grid,
                               const lmb_estimator_config* config, lmb_estimate* out) {
  return guarded([&] {
    const auto& proc = need(process, "process").spec;
    const auto& c = need(config, "config");
    if (!out) throw InvalidArgument("output pointer must not be NULL");
    check_endpoints(proc, need(x0, "x0"), need(x1, "x1"));
    const lmb::Vector a = x0->shape.flatten();
    const lmb::Vector b = x1->shape.flatten();
    const lmb::TimeGrid g = to_grid(grid);
    *out = to_c(lmb::estimate_loglik(a, b, proc, factory(a, b, g, c.bridge)(proc), g, estimator_of(c)));
  });
}

lmb_status lmb_estimate_write_json(const lmb_estimate* estimate, const char* file) {
  return guarded([&] { lmb::write_estimate_json(from_c(need(estimate, "estimate")), need(file, "file")); });
}

lmb_status lmb_loglik_sweep(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1, lmb_grid grid,
                            const double* variances, size_t count, const lmb_estimator_config* config,
                            lmb_sweep** out) {
  return guarded([&] {
    need_out(out);
    const auto& proc = need(process, "process").spec;
    const auto& c = need(config, "config");
    if (!variances && count > 0) throw InvalidArgument("variances must not be NULL");
    check_endpoints(proc, need(x0, "x0"), need(x1, "x1"));
    const lmb::Vector a = x0->shape.flatten();
    const lmb::Vector b = x1->shape.flatten();
    const lmb::TimeGrid g = to_grid(grid);
    std::vector<double> vs(variances, variances + count);
    *out = new lmb_sweep{lmb::loglik_sweep(a, b, proc, vs, factory(a, b, g, c.bridge), g, estimator_of(c))};
  });
}

size_t lmb_sweep_size(const lmb_sweep* sweep) { return sweep ? sweep->sweep.variances.size() : 0; }

size_t lmb_sweep_argmax(const lmb_sweep* sweep) { return sweep ? sweep->sweep.argmax : 0; }

lmb_status lmb_sweep_get(const lmb_sweep* sweep, size_t index, lmb_estimate* out) {
  return guarded([&] {
    const auto& s = need(sweep, "sweep").sweep;
    if (!out) throw InvalidArgument("output pointer must not be NULL");
    if (index >= s.estimates.size()) throw InvalidArgument("sweep index out of range");
    *out = to_c(s.estimates[index]);
  });
}

lmb_status lmb_sweep_write_csv(const lmb_sweep* sweep, const char* file) {
  return guarded([&] { lmb::detail::write_text_file(need(file, "file"), lmb::sweep_csv(need(sweep, "sweep").sweep)); });
}

void lmb_sweep_free(lmb_sweep* sweep) { delete sweep; }

void lmb_optimizer_config_defaults(lmb_optimizer_config* config) {
  if (!config) return;
  const lmb::OptimizerConfig d;
  *config = {d.max_iterations, d.tolerance, d.initial_step, d.shrink, d.sufficient_increase, d.fresh_noise ? 1 : 0,
             d.seed};
}

lmb_status lmb_infer_variance(const lmb_process* process, const lmb_shape* x0, const lmb_shape* x1, lmb_grid grid,
                              const lmb_estimator_config* estimator, const lmb_optimizer_config* optimizer,
                              double init_variance, lmb_variance_result* out) {
  return guarded([&] {
    const auto& proc = need(process, "process").spec;
    const auto& e = need(estimator, "estimator");
    const auto& o = need(optimizer, "optimizer");
    if (!out) throw InvalidArgument("output pointer must not be NULL");
    check_endpoints(proc, need(x0, "x0"), need(x1, "x1"));
    const lmb::Vector a = x0->shape.flatten();
    const lmb::Vector b = x1->shape.flatten();
    const lmb::TimeGrid g = to_grid(grid);
    lmb::DifferentiableObjective objective;
    if (proc.kind == lmb::ProcessKind::frozen_brownian && is_analytic(e.bridge.proposal)) {
      const auto model = lmb::make_baseline_model(proc, g, transition_of(e.bridge.proposal),
                                                  e.bridge.guard_steps ? e.bridge.guard_steps : 1);
      objective = lmb::baseline_variance_objective(model, a, b, estimator_of(e));
    } else {
      objective = lmb::estimator_objective(a, b, proc, factory(a, b, g, e.bridge), g, estimator_of(e));
    }
    const auto r = lmb::infer_variance(objective, init_variance, optimizer_of(o));
    *out = {r.variance, r.loglik, r.converged ? 1 : 0, r.trajectory.size() - 1};
  });
}

lmb_status lmb_diffusion_mean(const lmb_process* process, const lmb_shape* const* observations, size_t count,
                              const lmb_shape* init, lmb_grid grid, const lmb_estimator_config* estimator,
                              const lmb_optimizer_config* optimizer, lmb_mean_trajectory** out) {
  return guarded([&] {
    need_out(out);
    const auto& proc = need(process, "process").spec;
    const auto& e = need(estimator, "estimator");
    const auto& o = need(optimizer, "optimizer");
    if (!observations || count == 0) throw InvalidArgument("at least one observation is required");
    if (proc.kind != lmb::ProcessKind::frozen_brownian || !is_analytic(e.bridge.proposal))
      throw lmb::DomainError("diffusion mean needs a frozen_brownian process with an analytic proposal");
    std::vector<lmb::Vector> obs;
    for (size_t i = 0; i < count; ++i) {
      const auto& s = need(observations[i], "observation");
      check_endpoints(proc, s, need(init, "init"));
      obs.push_back(s.shape.flatten());
    }
    const lmb::TimeGrid g = to_grid(grid);
    const auto model = lmb::make_baseline_model(proc, g, transition_of(e.bridge.proposal),
                                                e.bridge.guard_steps ? e.bridge.guard_steps : 1);
    *out = new lmb_mean_trajectory{lmb::diffusion_mean(obs, model, proc.kernel.variance, init->shape.flatten(),
                                                       estimator_of(e), optimizer_of(o))};
  });
}

size_t lmb_mean_trajectory_size(const lmb_mean_trajectory* trajectory) {
  return trajectory ? trajectory->trajectory.iterates.size() : 0;
}

int lmb_mean_trajectory_converged(const lmb_mean_trajectory* trajectory) {
  return trajectory && trajectory->trajectory.converged ? 1 : 0;
}

lmb_status lmb_mean_trajectory_get(const lmb_mean_trajectory* trajectory, size_t index, double* coords, size_t len,
                                   double* loglik) {
  return guarded([&] {
    const auto& t = need(trajectory, "trajectory").trajectory;
    if (index >= t.iterates.size()) throw InvalidArgument("trajectory index out of range");
    const lmb::Vector& x = t.iterates[index];
    if (coords) {
      if (len < static_cast<size_t>(x.size())) throw InvalidArgument("output buffer too small");
      Eigen::Map<lmb::Vector>(coords, x.size()) = x;
    }
    if (loglik) *loglik = t.loglik[index];
  });
}

lmb_status lmb_mean_trajectory_write_csv(const lmb_mean_trajectory* trajectory, const char* file) {
  return guarded([&] {
    lmb::detail::write_text_file(need(file, "file"),
                                 lmb::mean_trajectory_csv(need(trajectory, "trajectory").trajectory));
  });
}

void lmb_mean_trajectory_free(lmb_mean_trajectory* trajectory) { delete trajectory; }

}  // extern "C"
