#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "lmbridge/shapes.hpp"

namespace lmb {

/// Uniform grid t0 = tau_0 < ... < tau_M = t1.
class TimeGrid {
 public:
  TimeGrid(double t0, double t1, std::size_t steps);

  double t0() const { return t0_; }
  double t1() const { return t1_; }
  std::size_t steps() const { return steps_; }
  double dt() const { return (t1_ - t0_) / static_cast<double>(steps_); }
  double node(std::size_t i) const;

 private:
  double t0_;
  double t1_;
  std::size_t steps_;
};

enum class ProcessKind { kunita, frozen_brownian, bridge, generic };

std::string to_string(ProcessKind kind);
ProcessKind parse_process_kind(const std::string& name);

using DriftFn = std::function<Vector(double t, const Vector& x)>;
using DiffusionFn = std::function<Matrix(double t, const Vector& x)>;
using SigmaSolver = Eigen::CompleteOrthogonalDecomposition<Matrix>;

/// dX = f(t, X) dt + sigma(t, X) dW on the stacked landmark state.
struct ProcessSpec {
  ProcessKind kind = ProcessKind::generic;
  KernelSpec kernel{};
  Index landmarks = 0;
  Index dim = 0;  // coordinates per landmark
  std::optional<Vector> frozen_state;
  DriftFn drift;          // empty means zero drift
  DiffusionFn diffusion;  // required
  /// Set when sigma does not depend on (t, x); shares a least-squares factorisation.
  std::shared_ptr<const Matrix> constant_sigma;
  std::shared_ptr<const SigmaSolver> constant_sigma_solver;

  Index state_dim() const { return landmarks * dim; }
  bool has_constant_diffusion() const { return static_cast<bool>(constant_sigma); }
  Vector drift_at(double t, const Vector& x) const;
  Matrix diffusion_at(double t, const Vector& x) const;
};

/// sigma(X) = build_sigma(X, kernel).
ProcessSpec make_kunita(const KernelSpec& kernel, Index landmarks, Index dim);
/// sigma = build_sigma(frozen_state, kernel), constant in time and state.
ProcessSpec make_frozen_brownian(const KernelSpec& kernel, const Vector& frozen_state, Index dim);
ProcessSpec make_frozen_brownian(const KernelSpec& kernel, const LandmarkShape& frozen_state);
/// Arbitrary drift/diffusion; `constant_sigma` may be given to mark the diffusion constant.
ProcessSpec make_generic_process(Index state_dim, DriftFn drift, DiffusionFn diffusion,
                                 std::optional<Matrix> constant_sigma = std::nullopt);
/// Rebuilds a kunita / frozen_brownian spec with kernel variance v.
ProcessSpec with_variance(const ProcessSpec& spec, double v);

/// Wiener increments: row i ~ N(0, dt I), regenerable from `seed`.
struct NoiseArray {
  RowMatrix increments;
  std::uint64_t seed = 0;
};

NoiseArray sample_noise(std::uint64_t seed, const TimeGrid& grid, Index dim);

/// Discretised trajectory; row r is the state at grid.node(first_node + r).
/// Bridges cut short by a guard band cover only part of their grid.
struct PathSample {
  RowMatrix states;
  TimeGrid grid{0.0, 1.0, 1};
  std::size_t first_node = 0;
  std::shared_ptr<const NoiseArray> noise;

  double time(Index row) const { return grid.node(first_node + static_cast<std::size_t>(row)); }
  std::size_t last_node() const { return first_node + static_cast<std::size_t>(states.rows()) - 1; }
};

/// Fixed-noise Euler-Maruyama: X_{i+1} = X_i + f dt + sigma(X_i) w_i.
/// Throws SimulationBlowup carrying the index of the first non-finite state.
PathSample euler_maruyama(const ProcessSpec& process, const Vector& x0, const TimeGrid& grid,
                          std::shared_ptr<const NoiseArray> noise);
PathSample euler_maruyama(const ProcessSpec& process, const Vector& x0, const TimeGrid& grid,
                          NoiseArray noise);

/// (div Sigma)_i = sum_j d Sigma_ij / d x_j by central differences,
/// h = 1e-4 max(1, |x|_inf) unless given.
Vector divergence_sigma(const ProcessSpec& process, const Vector& x, double t,
                        std::optional<double> step = std::nullopt);

/// CSV with columns t,x1,...,x{n d}; one row per grid node.
std::string path_csv(const PathSample& path);
void write_path_csv(const PathSample& path, const std::filesystem::path& file);

}  // namespace lmb
