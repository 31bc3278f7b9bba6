#include "lmbridge/bridge.hpp"

#include <cmath>
#include <sstream>

#include "lmbridge/error.hpp"
#include "text_io.hpp"

namespace lmb {

namespace {

bool same_time(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); }

}  // namespace

ScoreSource ScoreSource::learned(std::shared_ptr<const ScoreModel> model) {
  if (!model) throw DomainError("learned score source needs a model");
  ScoreSource s;
  s.model_ = std::move(model);
  return s;
}

void BridgeSpec::validate() const {
  const Index k = base.state_dim();
  if (x_start.size() != k || x_end.size() != k) throw DomainError("bridge endpoints do not match the process dimension");
  if (!x_start.allFinite() || !x_end.allFinite()) throw DomainError("bridge endpoints must be finite");
  if (!(t1 > t0)) throw DomainError("bridge needs t1 > t0");
  if (score.is_analytic()) {
    if (!base.has_constant_diffusion()) throw DomainError("analytic score needs a constant diffusion");
  } else if (score.model()->state_dim() != k) {
    throw DomainError("score model dimension does not match the process");
  }
}

Vector reverse_bridge_drift(const BridgeSpec& spec, const Vector& x, double t) {
  if (!(t > spec.t0) || t > spec.t1) throw DomainError("reverse_bridge_drift: t must lie in (t0, t1]");
  if (x.size() != spec.base.state_dim()) throw DomainError("reverse_bridge_drift: state dimension mismatch");
  const double elapsed = t - spec.t0;
  Vector drift;
  if (spec.score.is_analytic()) {
    if (!spec.base.has_constant_diffusion()) throw DomainError("analytic score needs a constant diffusion");
    drift = -(x - spec.x_start) / elapsed;
  } else {
    const Vector s = learned_score(*spec.score.model(), t, x, spec.base.kernel.variance);
    const Matrix sigma = spec.base.diffusion_at(t, x);
    drift = sigma * (sigma.transpose() * s);
  }
  if (spec.base.drift) drift -= spec.base.drift(t, x);
  if (spec.include_divergence) drift += divergence_sigma(spec.base, x, t);
  return drift;
}

PathSample sample_reverse_bridge(const BridgeSpec& spec, const TimeGrid& grid, std::shared_ptr<const NoiseArray> noise) {
  spec.validate();
  const Index k = spec.base.state_dim();
  if (!same_time(grid.t0(), spec.t0) || !same_time(grid.t1(), spec.t1))
    throw DomainError("sample_reverse_bridge: grid does not span [t0, t1]");
  if (!noise || noise->increments.rows() != static_cast<Index>(grid.steps()) || noise->increments.cols() != k)
    throw DomainError("sample_reverse_bridge: noise does not match grid and state dimension");
  if (spec.guard_steps >= grid.steps()) throw DomainError("sample_reverse_bridge: guard band covers the whole grid");

  const std::size_t m = grid.steps();
  const std::size_t g = spec.guard_steps;
  const double dt = grid.dt();
  PathSample path;
  path.grid = grid;
  path.first_node = g;
  path.noise = noise;
  path.states.resize(static_cast<Index>(m - g + 1), k);
  path.states.row(static_cast<Index>(m - g)) = spec.x_end.transpose();

  RowMatrix shocks;
  if (spec.base.has_constant_diffusion()) shocks = noise->increments * spec.base.constant_sigma->transpose();

  Vector x = spec.x_end;
  for (std::size_t i = m; i > g; --i) {
    const double t = grid.node(i);
    const auto w = static_cast<Index>(i - 1);
    Vector next = x + reverse_bridge_drift(spec, x, t) * dt;
    if (spec.base.has_constant_diffusion())
      next += shocks.row(w).transpose();
    else
      next.noalias() += spec.base.diffusion(t, x) * noise->increments.row(w).transpose();
    if (!next.allFinite()) throw SimulationBlowup(m - i + 1, "sample_reverse_bridge: state became non-finite");
    path.states.row(static_cast<Index>(i - 1 - g)) = next.transpose();
    x = std::move(next);
  }
  return path;
}

PathSample sample_reverse_bridge(const BridgeSpec& spec, const TimeGrid& grid, NoiseArray noise) {
  return sample_reverse_bridge(spec, grid, std::make_shared<const NoiseArray>(std::move(noise)));
}

Vector forward_bm_bridge_drift(const Vector& x, double t, const Vector& target, double t1) {
  if (!(t < t1)) throw DomainError("forward_bm_bridge_drift: t must be before t1");
  if (x.size() != target.size()) throw DomainError("forward_bm_bridge_drift: dimension mismatch");
  return (target - x) / (t1 - t);
}

std::string to_string(BridgeTransition transition) {
  return transition == BridgeTransition::exact ? "exact" : "euler";
}

BridgeTransition parse_bridge_transition(const std::string& name) {
  if (name == "euler") return BridgeTransition::euler;
  if (name == "exact") return BridgeTransition::exact;
  throw DomainError("unknown bridge transition '" + name + "'");
}

double bridge_covariance_scale(BridgeTransition transition, double from, double to, double t1) {
  if (transition == BridgeTransition::euler) return 1.0;
  return (t1 - to) / (t1 - from);
}

PathSample sample_forward_bm_bridge(const ProcessSpec& base, const Vector& x0, const Vector& x1, const TimeGrid& grid,
                                    std::shared_ptr<const NoiseArray> noise, BridgeTransition transition,
                                    std::size_t guard_steps) {
  const Index k = base.state_dim();
  if (!base.has_constant_diffusion() || base.drift)
    throw DomainError("sample_forward_bm_bridge: base must be driftless with constant diffusion");
  if (x0.size() != k || x1.size() != k) throw DomainError("sample_forward_bm_bridge: endpoint dimension mismatch");
  if (!noise || noise->increments.rows() != static_cast<Index>(grid.steps()) || noise->increments.cols() != k)
    throw DomainError("sample_forward_bm_bridge: noise does not match grid and state dimension");
  if (guard_steps >= grid.steps() + 1) throw DomainError("sample_forward_bm_bridge: guard band covers the whole grid");
  if (transition == BridgeTransition::exact && guard_steps == 0)
    throw DomainError("sample_forward_bm_bridge: the exact transition needs a guard band of at least one step");

  const std::size_t last = grid.steps() - guard_steps;
  const double dt = grid.dt();
  const double t1 = grid.t1();
  PathSample path;
  path.grid = grid;
  path.noise = noise;
  path.states.resize(static_cast<Index>(last + 1), k);
  path.states.row(0) = x0.transpose();
  const RowMatrix shocks = noise->increments.topRows(static_cast<Index>(last)) * base.constant_sigma->transpose();

  for (std::size_t i = 0; i < last; ++i) {
    const double t = grid.node(i);
    const auto r = static_cast<Index>(i);
    const double a = dt / (t1 - t);
    const double s = std::sqrt(bridge_covariance_scale(transition, t, grid.node(i + 1), t1));
    path.states.row(r + 1) = (1.0 - a) * path.states.row(r) + a * x1.transpose() + s * shocks.row(r);
    if (!path.states.row(r + 1).allFinite())
      throw SimulationBlowup(i + 1, "sample_forward_bm_bridge: state became non-finite");
  }
  return path;
}

TimedPath complete_bridge_path(const PathSample& path, const Vector& x0, const Vector& x1) {
  const Index k = path.states.cols();
  if (x0.size() != k || x1.size() != k) throw DomainError("complete_bridge_path: endpoint dimension mismatch");
  const bool head = path.first_node > 0;
  const bool tail = path.last_node() < path.grid.steps();
  TimedPath out;
  out.states.resize(path.states.rows() + (head ? 1 : 0) + (tail ? 1 : 0), k);
  Index r = 0;
  if (head) {
    out.times.push_back(path.grid.t0());
    out.states.row(r++) = x0.transpose();
  }
  for (Index i = 0; i < path.states.rows(); ++i) {
    out.times.push_back(path.time(i));
    out.states.row(r++) = path.states.row(i);
  }
  if (tail) {
    out.times.push_back(path.grid.t1());
    out.states.row(r++) = x1.transpose();
  }
  return out;
}

std::string timed_path_csv(const TimedPath& path) {
  std::ostringstream out;
  out << 't';
  for (Index j = 0; j < path.states.cols(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (Index i = 0; i < path.states.rows(); ++i) {
    out << detail::format_number(path.times[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < path.states.cols(); ++j) out << ',' << detail::format_number(path.states(i, j));
    out << '\n';
  }
  return out.str();
}

}  // namespace lmb
