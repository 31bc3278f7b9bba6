#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "lmbridge/score.hpp"
#include "lmbridge/sde.hpp"

namespace lmb {

/// Where the bridge drift gets grad log p(x_t | x_t0) from.
class ScoreSource {
 public:
  static ScoreSource analytic() { return ScoreSource(); }
  static ScoreSource learned(std::shared_ptr<const ScoreModel> model);

  bool is_analytic() const { return !model_; }
  const std::shared_ptr<const ScoreModel>& model() const { return model_; }

 private:
  std::shared_ptr<const ScoreModel> model_;
};

struct BridgeSpec {
  ProcessSpec base;
  Vector x_start;  // x_{t0}
  double t0 = 0.0;
  Vector x_end;    // X_{t1}, where reverse simulation starts
  double t1 = 1.0;
  ScoreSource score = ScoreSource::analytic();
  bool include_divergence = true;
  /// Reverse simulation stops at t0 + guard_steps * dt.
  std::size_t guard_steps = 2;

  void validate() const;
};

/// Drift of the reverse-time bridge in the reverse clock:
/// -f(t, x) + Sigma(t, x) s(t, x) + div Sigma(t, x), s = grad log p(x_t | x_t0).
/// For the analytic score Sigma s is taken as -(x - x_t0) / (t - t0).
/// Requires t0 < t <= t1.
Vector reverse_bridge_drift(const BridgeSpec& spec, const Vector& x, double t);

/// Euler-Maruyama backwards from X_{t1}: X_{i-1} = X_i + b(X_i, tau_i) dt + sigma(X_i) w_{i-1}.
/// The result is forward ordered on nodes guard_steps..M with the last row equal to X_{t1}.
PathSample sample_reverse_bridge(const BridgeSpec& spec, const TimeGrid& grid, std::shared_ptr<const NoiseArray> noise);
PathSample sample_reverse_bridge(const BridgeSpec& spec, const TimeGrid& grid, NoiseArray noise);

/// Doob drift of a driftless constant-diffusion process pinned at `target`: (target - x) / (t1 - t).
Vector forward_bm_bridge_drift(const Vector& x, double t, const Vector& target, double t1);

enum class BridgeTransition {
  euler,  // covariance Sigma dt
  exact,  // Brownian bridge transition, covariance Sigma dt (t1 - tau_{i+1}) / (t1 - tau_i)
};

std::string to_string(BridgeTransition transition);
BridgeTransition parse_bridge_transition(const std::string& name);

/// Per-step covariance factor of a forward bridge step from `from` to `to` (1 for euler).
double bridge_covariance_scale(BridgeTransition transition, double from, double to, double t1);

/// Forward bridge of a driftless constant-diffusion base from x0 pinned at x1,
/// simulated on nodes 0..M - guard_steps. guard_steps = 0 runs the full grid.
PathSample sample_forward_bm_bridge(const ProcessSpec& base, const Vector& x0, const Vector& x1, const TimeGrid& grid,
                                    std::shared_ptr<const NoiseArray> noise,
                                    BridgeTransition transition = BridgeTransition::euler, std::size_t guard_steps = 0);

/// Path with explicit times, e.g. a guard-banded bridge with its pinned endpoints restored.
struct TimedPath {
  std::vector<double> times;
  RowMatrix states;
};

/// Prepends x0 at t0 and/or appends x1 at t1 where the path stops short of the grid ends.
TimedPath complete_bridge_path(const PathSample& path, const Vector& x0, const Vector& x1);

/// CSV with columns t,x1,...; same layout as path_csv.
std::string timed_path_csv(const TimedPath& path);

}  // namespace lmb
