#include "lmbridge/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "lmbridge/error.hpp"
#include "lmbridge/parallel.hpp"
#include "text_io.hpp"

namespace lmb {

std::string to_string(LikelihoodMode mode) {
  return mode == LikelihoodMode::full_gaussian ? "full_gaussian" : "variance_profile";
}

LikelihoodMode parse_likelihood_mode(const std::string& name) {
  if (name == "full_gaussian") return LikelihoodMode::full_gaussian;
  if (name == "variance_profile") return LikelihoodMode::variance_profile;
  throw DomainError("unknown likelihood mode '" + name + "'");
}

double gauss_quad_form(const Vector& residual, const SigmaSolver& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != residual.size())
    throw DomainError("gauss_quad_form: sigma must be square and match the residual");
  return sigma.solve(residual).squaredNorm();
}

double gauss_quad_form(const Vector& residual, const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != residual.size())
    throw DomainError("gauss_quad_form: sigma must be square and match the residual");
  return gauss_quad_form(residual, SigmaSolver(sigma));
}

Vector solution_squared_norms(const SigmaSolver& sigma, const Matrix& rhs) {
  if (rhs.rows() != sigma.rows()) throw DomainError("solution_squared_norms: dimension mismatch");
  // z = P Z^T [T11^{-1} (Q^T r)_top; 0] and P, Z are orthogonal, so |z| = |T11^{-1} (Q^T r)_top|.
  const Index rank = sigma.rank();
  if (rank == 0) return Vector::Zero(rhs.cols());
  const Matrix qt = Matrix(sigma.householderQ()).leftCols(rank).transpose();
  Matrix c = qt * rhs;
  sigma.matrixT().topLeftCorner(rank, rank).triangularView<Eigen::Upper>().solveInPlace(c);
  return c.colwise().squaredNorm().transpose();
}

namespace {

// Gaussian step log-density from the unscaled form zz = |sigma^+ r|^2 (so q = zz / dt).
double step_log_density(double zz, double dt, Index k, double v, double log_abs_det_sigma, LikelihoodMode mode) {
  const double kk = static_cast<double>(k);
  double out;
  if (mode == LikelihoodMode::full_gaussian) {
    out = -0.5 * zz / dt - 0.5 * kk * std::log(2.0 * std::numbers::pi * dt) - log_abs_det_sigma;
  } else {
    // zhat = sqrt(v) sigma^+ r / sqrt(dt) is the solve against sqrt(dt) sigma / sqrt(v).
    const double zhat = v * zz / dt;
    out = -0.5 * kk * std::log(v) - zhat / (2.0 * v);
  }
  if (!std::isfinite(out)) throw DomainError("log_step_density: non-finite density");
  return out;
}

double log_abs_det(const SigmaSolver& solver, LikelihoodMode mode) {
  return mode == LikelihoodMode::full_gaussian ? solver.logAbsDeterminant() : 0.0;
}

}  // namespace

double log_step_density(const Vector& x_next, const Vector& x, const ProcessSpec& proc, double t, double dt,
                        LikelihoodMode mode) {
  if (!(dt > 0.0)) throw DomainError("log_step_density: dt must be positive");
  const Index k = x.size();
  if (x_next.size() != k || proc.state_dim() != k) throw DomainError("log_step_density: dimension mismatch");
  if (!x.allFinite() || !x_next.allFinite()) throw DomainError("log_step_density: non-finite state");
  Vector r = x_next - x;
  if (proc.drift) r -= proc.drift(t, x) * dt;
  const double v = proc.kernel.variance;
  if (!(v > 0.0)) throw DomainError("log_step_density: variance must be positive");
  if (proc.has_constant_diffusion()) {
    const SigmaSolver& solver = *proc.constant_sigma_solver;
    return step_log_density(solver.solve(r).squaredNorm(), dt, k, v, log_abs_det(solver, mode), mode);
  }
  const SigmaSolver solver(proc.diffusion(t, x));
  return step_log_density(solver.solve(r).squaredNorm(), dt, k, v, log_abs_det(solver, mode), mode);
}

double brownian_log_density(const Vector& x1, const Vector& x0, const Matrix& sigma, double elapsed) {
  if (!(elapsed > 0.0)) throw DomainError("brownian_log_density: elapsed time must be positive");
  if (x1.size() != x0.size() || sigma.rows() != x0.size() || sigma.cols() != x0.size())
    throw DomainError("brownian_log_density: dimension mismatch");
  const SigmaSolver solver(sigma);
  return step_log_density(solver.solve(Vector(x1 - x0)).squaredNorm(), elapsed, x0.size(), 1.0,
                          solver.logAbsDeterminant(), LikelihoodMode::full_gaussian);
}

BridgeProposal analytic_bridge_proposal(const ProcessSpec& base, const Vector& x0, const Vector& x1,
                                        const TimeGrid& grid, BridgeTransition transition, std::size_t guard_steps) {
  if (!base.has_constant_diffusion() || base.drift)
    throw DomainError("analytic_bridge_proposal: base must be driftless with constant diffusion");
  if (guard_steps < 1 || guard_steps > grid.steps())
    throw DomainError("analytic_bridge_proposal: guard band must be between 1 and M steps");
  if (x0.size() != base.state_dim() || x1.size() != base.state_dim())
    throw DomainError("analytic_bridge_proposal: endpoint dimension mismatch");
  const double t1 = grid.t1();
  BridgeProposal p;
  p.density.direction = TimeDirection::forward;
  p.density.drift = [x1, t1](double t, const Vector& x) { return forward_bm_bridge_drift(x, t, x1, t1); };
  if (transition == BridgeTransition::exact)
    p.density.covariance_scale = [t1](double from, double to) {
      return bridge_covariance_scale(BridgeTransition::exact, from, to, t1);
    };
  const Index k = base.state_dim();
  p.draw = [base, x0, x1, grid, transition, guard_steps, k](std::uint64_t seed) {
    return sample_forward_bm_bridge(base, x0, x1, grid, std::make_shared<const NoiseArray>(sample_noise(seed, grid, k)),
                                    transition, guard_steps);
  };
  return p;
}

BridgeProposal reverse_bridge_proposal(const BridgeSpec& spec, const TimeGrid& grid) {
  spec.validate();
  BridgeProposal p;
  p.density.direction = TimeDirection::reverse;
  p.density.drift = [spec](double t, const Vector& x) { return reverse_bridge_drift(spec, x, t); };
  const Index k = spec.base.state_dim();
  p.draw = [spec, grid, k](std::uint64_t seed) {
    return sample_reverse_bridge(spec, grid, std::make_shared<const NoiseArray>(sample_noise(seed, grid, k)));
  };
  return p;
}

double importance_log_weight(const PathSample& path, const ProcessSpec& base, const Proposal& proposal) {
  const Index k = base.state_dim();
  const Index rows = path.states.rows();
  if (path.states.cols() != k) throw DomainError("importance_log_weight: path dimension does not match the process");
  if (rows < 1) throw DomainError("importance_log_weight: empty path");
  if (path.last_node() > path.grid.steps()) throw DomainError("importance_log_weight: path overruns its grid");
  const bool reverse = proposal.direction == TimeDirection::reverse;
  if (reverse ? path.last_node() != path.grid.steps() : path.first_node != 0)
    throw DomainError("importance_log_weight: path does not match the proposal direction");
  if (!proposal.drift) throw DomainError("importance_log_weight: proposal has no drift");
  const Index steps = rows - 1;
  if (steps == 0) return 0.0;
  const double dt = path.grid.dt();

  // Column 2j: residual under the base step j -> j+1; column 2j+1: under the proposal step.
  Matrix residuals(k, 2 * steps);
  double log_scale = 0.0;
  std::vector<double> inv_scale(static_cast<std::size_t>(steps), 1.0);
  for (Index j = 0; j < steps; ++j) {
    const double from = path.time(j);
    const double to = path.time(j + 1);
    const Vector x = path.states.row(j).transpose();
    const Vector y = path.states.row(j + 1).transpose();
    auto base_r = residuals.col(2 * j);
    base_r = y - x;
    if (base.drift) base_r -= base.drift(from, x) * dt;
    auto prop_r = residuals.col(2 * j + 1);
    if (reverse) {
      prop_r = x - y - proposal.drift(to, y) * dt;
    } else {
      prop_r = y - x - proposal.drift(from, x) * dt;
      if (proposal.covariance_scale) {
        const double c = proposal.covariance_scale(from, to);
        if (!(c > 0.0)) throw DomainError("importance_log_weight: covariance scale must be positive");
        log_scale += std::log(c);
        inv_scale[static_cast<std::size_t>(j)] = 1.0 / c;
      }
    }
  }

  Vector zz(2 * steps);
  if (base.has_constant_diffusion()) {
    zz = solution_squared_norms(*base.constant_sigma_solver, residuals);
  } else {
    for (Index j = 0; j < steps; ++j) {
      const Vector x = path.states.row(j).transpose();
      const Vector y = path.states.row(j + 1).transpose();
      const SigmaSolver at_x(base.diffusion(path.time(j), x));
      zz(2 * j) = at_x.solve(residuals.col(2 * j)).squaredNorm();
      if (reverse) {
        const SigmaSolver at_y(base.diffusion(path.time(j + 1), y));
        zz(2 * j + 1) = at_y.solve(residuals.col(2 * j + 1)).squaredNorm();
      } else {
        zz(2 * j + 1) = at_x.solve(residuals.col(2 * j + 1)).squaredNorm();
      }
    }
  }

  double w = 0.0;
  for (Index j = 0; j < steps; ++j) w += zz(2 * j + 1) * inv_scale[static_cast<std::size_t>(j)] - zz(2 * j);
  w = 0.5 * w / dt + 0.5 * static_cast<double>(k) * log_scale;
  if (std::isnan(w)) throw DomainError("importance_log_weight: weight is NaN");
  return w;
}

double bridge_gap_log_density(const PathSample& path, const Vector& x0, const Vector& x1, const ProcessSpec& base,
                              LikelihoodMode mode) {
  if (path.states.rows() < 1) throw DomainError("bridge_gap_log_density: empty path");
  const std::size_t m = path.grid.steps();
  if (path.first_node == 0 && path.last_node() < m) {
    const Index last = path.states.rows() - 1;
    const double t = path.time(last);
    return log_step_density(x1, path.states.row(last).transpose(), base, t, path.grid.t1() - t, mode);
  }
  if (path.first_node > 0 && path.last_node() == m) {
    const double t0 = path.grid.t0();
    return log_step_density(path.states.row(0).transpose(), x0, base, t0, path.time(0) - t0, mode);
  }
  throw DomainError("bridge_gap_log_density: path must leave out exactly one end of its grid");
}

std::pair<double, double> log_mean_exp_with_ess(std::span<const double> log_weights) {
  if (log_weights.empty()) throw EstimationError("no importance samples");
  double top = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) {
    if (std::isnan(w)) throw EstimationError("importance weight is NaN");
    if (w == std::numeric_limits<double>::infinity()) throw EstimationError("importance weight is +inf");
    top = std::max(top, w);
  }
  if (top == -std::numeric_limits<double>::infinity()) throw EstimationError("all importance weights are zero");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double w : log_weights) {
    const double e = std::exp(w - top);
    sum += e;
    sum_sq += e * e;
  }
  const double value = top + std::log(sum) - std::log(static_cast<double>(log_weights.size()));
  return {value, sum * sum / sum_sq};
}

LogLikEstimate estimate_loglik(const Vector& x0, const Vector& x1, const ProcessSpec& base,
                               const BridgeProposal& proposal, const TimeGrid& grid, const EstimatorConfig& config) {
  if (config.samples < 1) throw DomainError("estimate_loglik: need at least one sample");
  if (x0.size() != base.state_dim() || x1.size() != base.state_dim())
    throw DomainError("estimate_loglik: endpoint dimension mismatch");
  if (!proposal.draw) throw DomainError("estimate_loglik: proposal cannot draw paths");

  LogLikEstimate est;
  est.n_samples = config.samples;
  est.m_steps = grid.steps();
  est.seed = config.seed;
  est.mode = config.mode;
  est.variance = base.kernel.variance;
  est.log_weights.assign(config.samples, 0.0);
  parallel_for(config.samples, [&](std::size_t i) {
    const PathSample path = proposal.draw(derive_seed(config.seed, i));
    if (path.grid.steps() != grid.steps() || path.grid.t0() != grid.t0() || path.grid.t1() != grid.t1())
      throw DomainError("estimate_loglik: proposal path is on a different grid");
    est.log_weights[i] = importance_log_weight(path, base, proposal.density) +
                         bridge_gap_log_density(path, x0, x1, base, config.mode);
  });
  try {
    std::tie(est.value, est.ess) = log_mean_exp_with_ess(est.log_weights);
  } catch (const EstimationError& e) {
    throw EstimationError(e.what(), base.kernel.variance);
  }
  return est;
}

std::string estimate_json(const LogLikEstimate& e) {
  nlohmann::ordered_json j;
  j["v"] = e.variance;
  j["loglik"] = e.value;
  j["ess"] = e.ess;
  j["n_samples"] = e.n_samples;
  j["m_steps"] = e.m_steps;
  j["seed"] = e.seed;
  j["mode"] = to_string(e.mode);
  return j.dump(2) + "\n";
}

void write_estimate_json(const LogLikEstimate& estimate, const std::filesystem::path& file) {
  detail::write_text_file(file, estimate_json(estimate));
}

}  // namespace lmb
