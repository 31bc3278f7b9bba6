#include "lmbridge/infer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <numbers>
#include <sstream>

#include "lmbridge/error.hpp"
#include "lmbridge/parallel.hpp"
#include "text_io.hpp"

namespace lmb {

SweepResult loglik_sweep(const Vector& x0, const Vector& x1, const ProcessSpec& base, const std::vector<double>& variances,
                         const ProposalFactory& proposal, const TimeGrid& grid, const EstimatorConfig& config) {
  if (variances.empty()) throw DomainError("loglik_sweep: empty variance grid");
  for (std::size_t i = 0; i < variances.size(); ++i) {
    if (!(variances[i] > 0.0) || !std::isfinite(variances[i]))
      throw DomainError("loglik_sweep: variances must be positive and finite");
    if (i > 0 && !(variances[i] > variances[i - 1])) throw DomainError("loglik_sweep: variances must be increasing");
  }
  SweepResult out;
  out.variances = variances;
  for (double v : variances) {
    const ProcessSpec proc = with_variance(base, v);
    try {
      out.estimates.push_back(estimate_loglik(x0, x1, proc, proposal(proc), grid, config));
    } catch (const EstimationError& e) {
      throw EstimationError(std::string("loglik_sweep: ") + e.what(), v);
    }
  }
  for (std::size_t i = 1; i < out.estimates.size(); ++i)
    if (out.estimates[i].value > out.estimates[out.argmax].value) out.argmax = i;
  return out;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::ostringstream out;
  out << "v,loglik,ess\n";
  for (std::size_t i = 0; i < sweep.variances.size(); ++i)
    out << detail::format_number(sweep.variances[i]) << ',' << detail::format_number(sweep.estimates[i].value) << ','
        << detail::format_number(sweep.estimates[i].ess) << '\n';
  return out.str();
}

namespace {

double value_and_gradient(const DifferentiableObjective& objective, const Vector& params, std::uint64_t seed,
                          Vector& gradient) {
  if (objective.value_and_gradient) {
    const double value = objective.value_and_gradient(params, seed, gradient);
    if (!gradient.allFinite()) throw EstimationError("objective gradient is not finite");
    return value;
  }
  gradient = pathwise_gradient(objective, params, seed);
  return objective.value(params, seed);
}

}  // namespace

Vector pathwise_gradient(const DifferentiableObjective& objective, const Vector& params, std::uint64_t seed,
                         double fd_step) {
  Vector gradient(params.size());
  if (objective.value_and_gradient) {
    objective.value_and_gradient(params, seed, gradient);
  } else {
    if (!objective.value) throw DomainError("pathwise_gradient: objective has no value function");
    if (!(fd_step > 0.0)) throw DomainError("pathwise_gradient: step must be positive");
    Vector probe = params;
    for (Index j = 0; j < params.size(); ++j) {
      const double h = fd_step * std::max(1.0, std::abs(params(j)));
      probe(j) = params(j) + h;
      const double up = objective.value(probe, seed);
      probe(j) = params(j) - h;
      const double down = objective.value(probe, seed);
      probe(j) = params(j);
      gradient(j) = (up - down) / (2.0 * h);
    }
  }
  if (!gradient.allFinite()) throw EstimationError("pathwise_gradient: gradient is not finite");
  return gradient;
}

BaselineModel make_baseline_model(const ProcessSpec& frozen_brownian, const TimeGrid& grid,
                                  BridgeTransition transition, std::size_t guard_steps) {
  if (frozen_brownian.kind != ProcessKind::frozen_brownian)
    throw DomainError("make_baseline_model: needs a frozen_brownian process");
  if (guard_steps < 1 || guard_steps > grid.steps())
    throw DomainError("make_baseline_model: guard band must be between 1 and M steps");
  const ProcessSpec unit = with_variance(frozen_brownian, 1.0);
  BaselineModel m;
  m.unit_sigma = *unit.constant_sigma;
  m.unit_solver = unit.constant_sigma_solver;
  m.unit_solver_transposed = std::make_shared<const SigmaSolver>(Matrix(m.unit_sigma.transpose()));
  m.grid = grid;
  m.transition = transition;
  m.guard_steps = guard_steps;
  return m;
}

BaselineValue baseline_loglik(const BaselineModel& model, double v, const Vector& x0, const Vector& x1,
                              const EstimatorConfig& config) {
  const Index k = model.unit_sigma.rows();
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("baseline_loglik: variance must be positive");
  if (x0.size() != k || x1.size() != k) throw DomainError("baseline_loglik: endpoint dimension mismatch");
  if (config.samples < 1) throw DomainError("baseline_loglik: need at least one sample");

  const TimeGrid& grid = model.grid;
  const auto steps = static_cast<Index>(grid.steps() - model.guard_steps);  // simulated transitions
  const double dt = grid.dt();
  const double t1 = grid.t1();
  const double sv = std::sqrt(v);
  const double kk = static_cast<double>(k);
  const double gap = t1 - grid.node(static_cast<std::size_t>(steps));

  std::vector<double> a(static_cast<std::size_t>(steps)), s(a.size()), c(a.size());
  double log_scale = 0.0;
  for (Index r = 0; r < steps; ++r) {
    const auto i = static_cast<std::size_t>(r);
    const double from = grid.node(i);
    a[i] = dt / (t1 - from);
    c[i] = bridge_covariance_scale(model.transition, from, grid.node(i + 1), t1);
    s[i] = std::sqrt(c[i]);
    log_scale += std::log(c[i]);
  }
  double constant = 0.5 * kk * log_scale - 0.5 * kk * std::log(v);
  if (config.mode == LikelihoodMode::full_gaussian)
    constant += -0.5 * kk * std::log(2.0 * std::numbers::pi * gap) - model.unit_solver->logAbsDeterminant();
  const Vector z1 = model.unit_solver->solve(x1);

  std::vector<double> totals(config.samples);
  RowMatrix grads(static_cast<Index>(config.samples), k + 1);
  parallel_for(config.samples, [&](std::size_t n) {
    const NoiseArray noise = sample_noise(derive_seed(config.seed, n), grid, k);
    const RowMatrix xi = noise.increments.topRows(steps) * model.unit_sigma.transpose();

    // Columns 0..steps: states X_r; columns steps+1..2 steps+1: dX_r / dv.
    Matrix states(k, 2 * (steps + 1));
    std::vector<double> beta(static_cast<std::size_t>(steps) + 1);  // dX_r / dx0 = beta_r I
    states.col(0) = x0;
    states.col(steps + 1).setZero();
    beta[0] = 1.0;
    for (Index r = 0; r < steps; ++r) {
      const auto i = static_cast<std::size_t>(r);
      const double keep = 1.0 - a[i];
      states.col(r + 1) = keep * states.col(r) + a[i] * x1 + (sv * s[i]) * xi.row(r).transpose();
      states.col(steps + r + 2) = keep * states.col(steps + r + 1) + (s[i] / (2.0 * sv)) * xi.row(r).transpose();
      beta[i + 1] = keep * beta[i];
    }
    const Matrix z = model.unit_solver->solve(states);
    auto zx = [&](Index r) { return z.col(r); };
    auto zu = [&](Index r) { return z.col(steps + 1 + r); };

    double total = constant;
    double d_v = -0.5 * kk / v;
    Vector d_x = Vector::Zero(k);
    auto add = [&](double gamma, const Vector& zr, const Vector& zur, double b, double delta) {
      const double q = zr.squaredNorm() / (v * delta);
      total += gamma * q;
      d_v += gamma * (2.0 * zr.dot(zur) / (v * delta) - q / v);
      if (b != 0.0) d_x += (gamma * 2.0 * b / (v * delta)) * zr;
    };
    for (Index r = 1; r <= steps; ++r) {
      const auto i = static_cast<std::size_t>(r - 1);
      const double keep = 1.0 - a[i];
      add(-0.5, zx(r) - zx(r - 1), zu(r) - zu(r - 1), beta[i + 1] - beta[i], dt);
      add(0.5 / c[i], zx(r) - keep * zx(r - 1) - a[i] * z1, zu(r) - keep * zu(r - 1), 0.0, dt);
    }
    add(-0.5, z1 - zx(steps), -zu(steps), -beta[static_cast<std::size_t>(steps)], gap);

    totals[n] = total;
    grads(static_cast<Index>(n), 0) = d_v;
    grads.row(static_cast<Index>(n)).tail(k) = model.unit_solver_transposed->solve(d_x).transpose();
  });

  BaselineValue out;
  try {
    std::tie(out.value, out.ess) = log_mean_exp_with_ess(totals);
  } catch (const EstimationError& e) {
    throw EstimationError(e.what(), v);
  }
  const double top = *std::max_element(totals.begin(), totals.end());
  Vector weights(static_cast<Index>(totals.size()));
  for (std::size_t n = 0; n < totals.size(); ++n) weights(static_cast<Index>(n)) = std::exp(totals[n] - top);
  weights /= weights.sum();
  out.gradient = grads.transpose() * weights;
  if (!out.gradient.allFinite()) throw EstimationError("baseline_loglik: gradient is not finite", v);
  return out;
}

DifferentiableObjective baseline_objective(BaselineModel model, Vector x1, EstimatorConfig config) {
  DifferentiableObjective obj;
  const Index k = x1.size();
  auto evaluate = [model, x1, config, k](const Vector& params, std::uint64_t seed) {
    if (params.size() != k + 1) throw DomainError("baseline_objective: expected parameters (v, x0)");
    EstimatorConfig cfg = config;
    cfg.seed = seed;
    return baseline_loglik(model, params(0), params.tail(k), x1, cfg);
  };
  obj.value = [evaluate](const Vector& params, std::uint64_t seed) { return evaluate(params, seed).value; };
  obj.value_and_gradient = [evaluate](const Vector& params, std::uint64_t seed, Vector& gradient) {
    BaselineValue r = evaluate(params, seed);
    gradient = std::move(r.gradient);
    return r.value;
  };
  return obj;
}

DifferentiableObjective baseline_variance_objective(BaselineModel model, Vector x0, Vector x1, EstimatorConfig config) {
  auto evaluate = [model, x0, x1, config](const Vector& params, std::uint64_t seed) {
    if (params.size() != 1) throw DomainError("baseline_variance_objective: expected parameters (v)");
    EstimatorConfig cfg = config;
    cfg.seed = seed;
    return baseline_loglik(model, params(0), x0, x1, cfg);
  };
  DifferentiableObjective obj;
  obj.value = [evaluate](const Vector& params, std::uint64_t seed) { return evaluate(params, seed).value; };
  obj.value_and_gradient = [evaluate](const Vector& params, std::uint64_t seed, Vector& gradient) {
    const BaselineValue r = evaluate(params, seed);
    gradient = r.gradient.head(1);
    return r.value;
  };
  return obj;
}

DifferentiableObjective estimator_objective(Vector x0, Vector x1, ProcessSpec base, ProposalFactory proposal,
                                            TimeGrid grid, EstimatorConfig config) {
  DifferentiableObjective obj;
  obj.value = [x0, x1, base, proposal, grid, config](const Vector& params, std::uint64_t seed) {
    if (params.size() != 1) throw DomainError("estimator_objective: expected parameters (v)");
    const ProcessSpec proc = with_variance(base, params(0));
    EstimatorConfig cfg = config;
    cfg.seed = seed;
    return estimate_loglik(x0, x1, proc, proposal(proc), grid, cfg).value;
  };
  return obj;
}

OptimizerResult gradient_ascent(const DifferentiableObjective& objective, const Vector& init,
                                const OptimizerConfig& config,
                                const std::function<void(const OptimizerStep&)>& on_accept) {
  if (!(config.initial_step > 0.0) || !(config.shrink > 0.0 && config.shrink < 1.0) || !(config.tolerance > 0.0))
    throw DomainError("gradient_ascent: invalid step-size settings");
  auto seed_for = [&](std::size_t it) { return config.fresh_noise ? derive_seed(config.seed, it) : config.seed; };

  OptimizerResult result;
  Vector x = init;
  Vector g;
  double f = value_and_gradient(objective, x, seed_for(0), g);
  if (!std::isfinite(f)) throw EstimationError("gradient_ascent: objective is not finite at the initial point");
  result.trajectory.push_back({0, x, f, 0.0});
  if (on_accept) on_accept(result.trajectory.back());

  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    if (config.fresh_noise) f = value_and_gradient(objective, x, seed_for(it), g);
    const double gmax = g.cwiseAbs().maxCoeff();
    if (config.initial_step * gmax < config.tolerance) {
      result.converged = true;
      break;
    }
    // The Armijo gain is below the rounding error of f: no step can be verified any more.
    const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
    if (config.sufficient_increase * config.initial_step * g.squaredNorm() <= noise) {
      result.converged = true;
      break;
    }
    double alpha = config.initial_step;
    bool accepted = false;
    double f_new = f;
    for (std::size_t b = 0; b <= config.max_backtracks; ++b, alpha *= config.shrink) {
      f_new = objective.value(x + alpha * g, seed_for(it));
      if (std::isfinite(f_new) && f_new >= f + config.sufficient_increase * alpha * g.squaredNorm()) {
        accepted = true;
        break;
      }
      if (alpha * gmax < config.tolerance) break;
    }
    if (!accepted) {
      result.converged = alpha * gmax < config.tolerance;
      break;
    }
    x += alpha * g;
    f = f_new;
    result.trajectory.push_back({it, x, f, alpha});
    if (on_accept) on_accept(result.trajectory.back());
    if (alpha * gmax < config.tolerance) {
      result.converged = true;
      break;
    }
    if (!config.fresh_noise) f = value_and_gradient(objective, x, seed_for(it), g);
  }
  result.params = x;
  result.objective = f;
  return result;
}

VarianceResult infer_variance(const DifferentiableObjective& loglik_of_v, double init_v, const OptimizerConfig& config) {
  if (!(init_v > 0.0) || !std::isfinite(init_v)) throw DomainError("infer_variance: initial variance must be positive");
  DifferentiableObjective in_log;
  in_log.value = [&](const Vector& theta, std::uint64_t seed) {
    const Vector v = theta.array().exp().matrix();
    // A trial step can leave the representable range of v; treat it as a rejected step.
    if (!(v.minCoeff() > 0.0) || !v.allFinite()) return -std::numeric_limits<double>::infinity();
    return loglik_of_v.value(v, seed);
  };
  in_log.value_and_gradient = [&](const Vector& theta, std::uint64_t seed, Vector& gradient) {
    const Vector v = theta.array().exp().matrix();
    Vector g_v;
    const double value = value_and_gradient(loglik_of_v, v, seed, g_v);
    gradient = g_v.cwiseProduct(v);
    return value;
  };
  const OptimizerResult r = gradient_ascent(in_log, Vector::Constant(1, std::log(init_v)), config);
  VarianceResult out;
  out.variance = std::exp(r.params(0));
  out.loglik = r.objective;
  out.converged = r.converged;
  out.trajectory = r.trajectory;
  return out;
}

namespace {

std::vector<Vector> canonical_order(std::vector<Vector> observations) {
  if (observations.empty()) throw DomainError("diffusion_mean: no observations");
  const Index k = observations.front().size();
  for (const auto& o : observations)
    if (o.size() != k || !o.allFinite()) throw DomainError("diffusion_mean: observations must share a finite dimension");
  std::sort(observations.begin(), observations.end(), [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  });
  return observations;
}

MeanTrajectory to_trajectory(const OptimizerResult& r) {
  MeanTrajectory t;
  for (const auto& step : r.trajectory) {
    t.iterates.push_back(step.params);
    t.loglik.push_back(step.objective);
    t.step_sizes.push_back(step.step_size);
  }
  t.converged = r.converged;
  return t;
}

}  // namespace

DifferentiableObjective baseline_joint_objective(BaselineModel model, double v, std::vector<Vector> observations,
                                                 EstimatorConfig config) {
  auto obs = std::make_shared<const std::vector<Vector>>(canonical_order(std::move(observations)));
  auto evaluate = [model, v, obs, config](const Vector& x, std::uint64_t seed, Vector* gradient) {
    const Index k = model.unit_sigma.rows();
    if (x.size() != k) throw DomainError("diffusion_mean: estimate dimension does not match the model");
    double total = 0.0;
    if (gradient) *gradient = Vector::Zero(k);
    for (std::size_t j = 0; j < obs->size(); ++j) {
      EstimatorConfig cfg = config;
      cfg.seed = derive_seed(seed, j);
      const BaselineValue r = baseline_loglik(model, v, x, (*obs)[j], cfg);
      total += r.value;
      if (gradient) *gradient += r.gradient.tail(k);
    }
    return total;
  };
  DifferentiableObjective obj;
  obj.value = [evaluate](const Vector& x, std::uint64_t seed) { return evaluate(x, seed, nullptr); };
  obj.value_and_gradient = [evaluate](const Vector& x, std::uint64_t seed, Vector& gradient) {
    return evaluate(x, seed, &gradient);
  };
  return obj;
}

MeanTrajectory diffusion_mean(const std::vector<Vector>& observations, const BaselineModel& model, double v,
                              const Vector& init, const EstimatorConfig& estimator, const OptimizerConfig& config) {
  return to_trajectory(gradient_ascent(baseline_joint_objective(model, v, observations, estimator), init, config));
}

MeanTrajectory diffusion_mean(const std::vector<Vector>& observations, const ObservationLoglik& loglik,
                              const Vector& init, const OptimizerConfig& config,
                              const std::function<void(const Vector&)>& on_accept) {
  auto obs = std::make_shared<const std::vector<Vector>>(canonical_order(observations));
  if (init.size() != obs->front().size()) throw DomainError("diffusion_mean: init does not match the observations");
  DifferentiableObjective obj;
  obj.value = [obs, loglik](const Vector& x, std::uint64_t seed) {
    double total = 0.0;
    for (std::size_t j = 0; j < obs->size(); ++j) total += loglik(x, (*obs)[j], derive_seed(seed, j));
    return total;
  };
  std::function<void(const OptimizerStep&)> hook;
  if (on_accept) hook = [&](const OptimizerStep& step) { on_accept(step.params); };
  return to_trajectory(gradient_ascent(obj, init, config, hook));
}

std::string mean_trajectory_csv(const MeanTrajectory& trajectory) {
  std::ostringstream out;
  out << "iteration,loglik";
  const Index k = trajectory.iterates.empty() ? 0 : trajectory.iterates.front().size();
  for (Index j = 0; j < k; ++j) out << ",x" << (j + 1);
  out << '\n';
  for (std::size_t i = 0; i < trajectory.iterates.size(); ++i) {
    out << i << ',' << detail::format_number(trajectory.loglik[i]);
    for (Index j = 0; j < k; ++j) out << ',' << detail::format_number(trajectory.iterates[i](j));
    out << '\n';
  }
  return out.str();
}

}  // namespace lmb
