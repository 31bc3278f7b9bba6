#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lmbridge/likelihood.hpp"

namespace lmb {

/// Builds the bridge proposal for the base process at one parameter value.
using ProposalFactory = std::function<BridgeProposal(const ProcessSpec& base)>;

struct SweepResult {
  std::vector<double> variances;
  std::vector<LogLikEstimate> estimates;
  std::size_t argmax = 0;

  double argmax_variance() const { return variances.at(argmax); }
};

/// One estimate_loglik per v with the same seed (common random numbers).
/// Estimation failures are rethrown carrying the offending v.
SweepResult loglik_sweep(const Vector& x0, const Vector& x1, const ProcessSpec& base, const std::vector<double>& variances,
                         const ProposalFactory& proposal, const TimeGrid& grid, const EstimatorConfig& config);

/// CSV: v,loglik,ess.
std::string sweep_csv(const SweepResult& sweep);

/// Estimator as a function of parameters for a fixed noise seed.
struct DifferentiableObjective {
  std::function<double(const Vector& params, std::uint64_t seed)> value;
  /// Optional exact derivative; returns the value and fills `gradient`.
  std::function<double(const Vector& params, std::uint64_t seed, Vector& gradient)> value_and_gradient;
};

/// Gradient with the noise held fixed: value_and_gradient when available, otherwise
/// central differences with step fd_step * max(1, |param|) on the same seed.
/// Throws EstimationError when the gradient is not finite.
Vector pathwise_gradient(const DifferentiableObjective& objective, const Vector& params, std::uint64_t seed,
                         double fd_step = 1e-4);

/// Estimator for a driftless constant-diffusion base sigma = sqrt(v) unit_sigma with forward
/// analytic bridge proposals, differentiated by propagating path sensitivities.
struct BaselineModel {
  Matrix unit_sigma;
  std::shared_ptr<const SigmaSolver> unit_solver;
  std::shared_ptr<const SigmaSolver> unit_solver_transposed;
  TimeGrid grid{0.0, 1.0, 1};
  BridgeTransition transition = BridgeTransition::exact;
  std::size_t guard_steps = 1;
};

/// From a frozen_brownian spec; its variance is ignored.
BaselineModel make_baseline_model(const ProcessSpec& frozen_brownian, const TimeGrid& grid,
                                  BridgeTransition transition = BridgeTransition::exact, std::size_t guard_steps = 1);

struct BaselineValue {
  double value = 0.0;
  double ess = 0.0;
  /// d value / d (v, x0_1, ..., x0_k).
  Vector gradient;
};

/// Same estimate as estimate_loglik with analytic_bridge_proposal on the frozen process with variance v.
BaselineValue baseline_loglik(const BaselineModel& model, double v, const Vector& x0, const Vector& x1,
                              const EstimatorConfig& config);

/// Parameters (v, x0_1, ..., x0_k) with the exact gradient.
DifferentiableObjective baseline_objective(BaselineModel model, Vector x1, EstimatorConfig config);

/// Parameters (v) at fixed x0 with the exact gradient.
DifferentiableObjective baseline_variance_objective(BaselineModel model, Vector x0, Vector x1, EstimatorConfig config);

/// Parameters (v) through estimate_loglik on with_variance(base, v); no exact gradient.
DifferentiableObjective estimator_objective(Vector x0, Vector x1, ProcessSpec base, ProposalFactory proposal,
                                            TimeGrid grid, EstimatorConfig config);

struct OptimizerConfig {
  std::size_t max_iterations = 500;
  /// Stop when the accepted step is below this in every coordinate.
  double tolerance = 1e-6;
  double initial_step = 0.1;
  double shrink = 0.5;
  double sufficient_increase = 1e-4;
  std::size_t max_backtracks = 50;
  /// Redraw noise every iteration (seed derived from the iteration) instead of fixing it.
  bool fresh_noise = false;
  std::uint64_t seed = 0;
};

struct OptimizerStep {
  std::size_t iteration = 0;
  Vector params;
  double objective = 0.0;
  double step_size = 0.0;
};

struct OptimizerResult {
  Vector params;
  double objective = 0.0;
  bool converged = false;
  std::vector<OptimizerStep> trajectory;  // accepted iterates, starting with the initial point
};

/// Gradient ascent with Armijo backtracking. Also stops (converged) once the required Armijo
/// gain at the full step is below the rounding error of the objective. Hitting max_iterations
/// returns the last accepted iterate with converged = false.
OptimizerResult gradient_ascent(const DifferentiableObjective& objective, const Vector& init,
                                const OptimizerConfig& config,
                                const std::function<void(const OptimizerStep&)>& on_accept = {});

struct VarianceResult {
  double variance = 0.0;
  double loglik = 0.0;
  bool converged = false;
  std::vector<OptimizerStep> trajectory;  // params hold log v
};

/// Maximises an objective of (v) by gradient ascent in log v.
VarianceResult infer_variance(const DifferentiableObjective& loglik_of_v, double init_v, const OptimizerConfig& config);

struct MeanTrajectory {
  std::vector<Vector> iterates;
  std::vector<double> loglik;
  std::vector<double> step_sizes;
  bool converged = false;

  const Vector& final_estimate() const { return iterates.back(); }
};

/// Sum over observations of baseline_loglik(x, obs); observations are put in a canonical
/// order and observation j uses seed derive_seed(seed, j), so the list order does not matter.
DifferentiableObjective baseline_joint_objective(BaselineModel model, double v, std::vector<Vector> observations,
                                                 EstimatorConfig config);

/// Gradient ascent of the joint bridge log-likelihood over the starting point (baseline estimator).
MeanTrajectory diffusion_mean(const std::vector<Vector>& observations, const BaselineModel& model, double v,
                              const Vector& init, const EstimatorConfig& estimator, const OptimizerConfig& config);

/// Generic form: `loglik(x, observation, seed)` is differentiated by central differences.
/// `on_accept` runs after each accepted step, e.g. to retrain a score model near the new estimate.
using ObservationLoglik = std::function<double(const Vector& x, const Vector& observation, std::uint64_t seed)>;
MeanTrajectory diffusion_mean(const std::vector<Vector>& observations, const ObservationLoglik& loglik,
                              const Vector& init, const OptimizerConfig& config,
                              const std::function<void(const Vector&)>& on_accept = {});

/// CSV: iteration,loglik,x1,...
std::string mean_trajectory_csv(const MeanTrajectory& trajectory);

}  // namespace lmb
