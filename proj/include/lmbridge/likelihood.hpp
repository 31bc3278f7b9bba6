#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lmbridge/bridge.hpp"
#include "lmbridge/sde.hpp"

namespace lmb {

enum class LikelihoodMode { full_gaussian, variance_profile };

std::string to_string(LikelihoodMode mode);
LikelihoodMode parse_likelihood_mode(const std::string& name);

/// z^T z for the least-squares solution of sigma z = residual.
double gauss_quad_form(const Vector& residual, const Matrix& sigma);
double gauss_quad_form(const Vector& residual, const SigmaSolver& sigma);

/// Column-wise |z|^2 for the least-squares solutions of sigma z = rhs.col(j).
Vector solution_squared_norms(const SigmaSolver& sigma, const Matrix& rhs);

/// Euler transition density N(x_next; x + f dt, Sigma dt) at time t.
/// full_gaussian: the normalised log-density (uses log|det sigma|).
/// variance_profile: -(k/2) log v - zhat^T zhat / (2v), zhat solved against sqrt(dt) sigma / sqrt(v),
/// with v the kernel variance of `proc`.
double log_step_density(const Vector& x_next, const Vector& x, const ProcessSpec& proc, double t, double dt,
                        LikelihoodMode mode);

enum class TimeDirection { forward, reverse };

/// Transition law of a bridge proposal. Diffusion is shared with the base process.
struct Proposal {
  /// Forward proposals: drift in forward time. Reverse proposals: drift in the reverse clock,
  /// so a step runs X_{i-1} = X_i + drift(tau_i, X_i) dt + sigma(X_i) w.
  DriftFn drift;
  TimeDirection direction = TimeDirection::forward;
  /// Covariance factor for the forward step (from, to); empty means 1.
  std::function<double(double from, double to)> covariance_scale;
};

struct BridgeProposal {
  Proposal density;
  /// Draws one path; forward paths start at node 0, reverse paths end at node M.
  std::function<PathSample(std::uint64_t seed)> draw;
};

/// Forward analytic bridge of a driftless constant-diffusion base, stopped guard_steps before t1.
BridgeProposal analytic_bridge_proposal(const ProcessSpec& base, const Vector& x0, const Vector& x1,
                                        const TimeGrid& grid, BridgeTransition transition = BridgeTransition::exact,
                                        std::size_t guard_steps = 1);

/// Reverse-time bridge from sample_reverse_bridge.
BridgeProposal reverse_bridge_proposal(const BridgeSpec& spec, const TimeGrid& grid);

/// log of prod p(X_i | X_{i-1}) / q(path) over the simulated transitions of `path`,
/// written as 1/2 sum (q*_i / c_i - q_i) + (k/2) sum log c_i with quadratic forms from
/// gauss_quad_form. No determinant enters.
double importance_log_weight(const PathSample& path, const ProcessSpec& base, const Proposal& proposal);

/// log p~ of the transition the proposal path leaves out: X_{t1} from the last state of a
/// forward path, or the first state of a reverse path from x0.
double bridge_gap_log_density(const PathSample& path, const Vector& x0, const Vector& x1, const ProcessSpec& base,
                              LikelihoodMode mode);

struct EstimatorConfig {
  std::size_t samples = 1000;
  LikelihoodMode mode = LikelihoodMode::variance_profile;
  std::uint64_t seed = 0;
};

struct LogLikEstimate {
  double value = 0.0;
  double ess = 0.0;
  std::size_t n_samples = 0;
  std::size_t m_steps = 0;
  std::uint64_t seed = 0;
  LikelihoodMode mode = LikelihoodMode::variance_profile;
  double variance = 0.0;
  /// w^i + log p~ of the gap transition, one entry per sample.
  std::vector<double> log_weights;
};

/// log mean exp of the log-weights and the ESS of the normalised weights.
/// Throws EstimationError if every weight is -inf or any is NaN.
std::pair<double, double> log_mean_exp_with_ess(std::span<const double> log_weights);

/// logsumexp(w^i + gap^i) - log N over N proposal paths drawn with seeds derive_seed(seed, i).
LogLikEstimate estimate_loglik(const Vector& x0, const Vector& x1, const ProcessSpec& base,
                               const BridgeProposal& proposal, const TimeGrid& grid, const EstimatorConfig& config);

/// {"v", "loglik", "ess", "n_samples", "m_steps", "seed", "mode"}.
std::string estimate_json(const LogLikEstimate& estimate);
void write_estimate_json(const LogLikEstimate& estimate, const std::filesystem::path& file);

/// log N(x1; x0, T Sigma) for a constant-diffusion Brownian motion, T = t1 - t0.
double brownian_log_density(const Vector& x1, const Vector& x0, const Matrix& sigma, double elapsed);

}  // namespace lmb
