#include "lmbridge/sde.hpp"

#include <cmath>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <sstream>

#include "lmbridge/error.hpp"
#include "text_io.hpp"

namespace lmb {

TimeGrid::TimeGrid(double t0, double t1, std::size_t steps) : t0_(t0), t1_(t1), steps_(steps) {
  if (!std::isfinite(t0) || !std::isfinite(t1) || !(t1 > t0))
    throw DomainError("time grid needs finite t0 < t1");
  if (steps < 1) throw DomainError("time grid needs at least one step");
}

double TimeGrid::node(std::size_t i) const {
  if (i > steps_) throw DomainError("time grid node out of range");
  if (i == steps_) return t1_;
  return t0_ + static_cast<double>(i) * dt();
}

std::string to_string(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::kunita: return "kunita";
    case ProcessKind::frozen_brownian: return "frozen_brownian";
    case ProcessKind::bridge: return "bridge";
    case ProcessKind::generic: return "generic";
  }
  return "generic";
}

ProcessKind parse_process_kind(const std::string& name) {
  if (name == "kunita") return ProcessKind::kunita;
  if (name == "frozen_brownian") return ProcessKind::frozen_brownian;
  if (name == "bridge") return ProcessKind::bridge;
  if (name == "generic") return ProcessKind::generic;
  throw DomainError("unknown process kind '" + name + "'");
}

Vector ProcessSpec::drift_at(double t, const Vector& x) const {
  if (!drift) return Vector::Zero(x.size());
  return drift(t, x);
}

Matrix ProcessSpec::diffusion_at(double t, const Vector& x) const {
  if (constant_sigma) return *constant_sigma;
  return diffusion(t, x);
}

namespace {

void attach_constant_sigma(ProcessSpec& spec, Matrix sigma) {
  auto shared = std::make_shared<const Matrix>(std::move(sigma));
  spec.constant_sigma = shared;
  spec.constant_sigma_solver = std::make_shared<const SigmaSolver>(*shared);
  spec.diffusion = [shared](double, const Vector&) { return *shared; };
}

}  // namespace

ProcessSpec make_kunita(const KernelSpec& kernel, Index landmarks, Index dim) {
  kernel.validate();
  if (landmarks < 1 || dim < 1) throw DomainError("kunita process needs landmarks >= 1 and dim >= 1");
  ProcessSpec spec;
  spec.kind = ProcessKind::kunita;
  spec.kernel = kernel;
  spec.landmarks = landmarks;
  spec.dim = dim;
  spec.diffusion = [kernel, dim](double, const Vector& x) { return build_sigma(x, dim, kernel); };
  if (landmarks == 1) {
    // k(x, x) = sqrt(v) for every x, so a single landmark diffuses as a Brownian motion.
    attach_constant_sigma(spec, build_sigma(Vector::Zero(dim), dim, kernel));
  }
  return spec;
}

ProcessSpec make_frozen_brownian(const KernelSpec& kernel, const Vector& frozen_state, Index dim) {
  kernel.validate();
  ProcessSpec spec;
  spec.kind = ProcessKind::frozen_brownian;
  spec.kernel = kernel;
  spec.dim = dim;
  spec.landmarks = frozen_state.size() / dim;
  spec.frozen_state = frozen_state;
  attach_constant_sigma(spec, build_sigma(frozen_state, dim, kernel));
  return spec;
}

ProcessSpec make_frozen_brownian(const KernelSpec& kernel, const LandmarkShape& frozen_state) {
  return make_frozen_brownian(kernel, frozen_state.flatten(), frozen_state.dim());
}

ProcessSpec make_generic_process(Index state_dim, DriftFn drift, DiffusionFn diffusion,
                                 std::optional<Matrix> constant_sigma) {
  if (state_dim < 1) throw DomainError("process needs a positive state dimension");
  ProcessSpec spec;
  spec.kind = ProcessKind::generic;
  spec.landmarks = state_dim;
  spec.dim = 1;
  spec.drift = std::move(drift);
  spec.diffusion = std::move(diffusion);
  if (constant_sigma) {
    if (constant_sigma->rows() != state_dim || constant_sigma->cols() != state_dim)
      throw DomainError("constant diffusion matrix has the wrong shape");
    attach_constant_sigma(spec, std::move(*constant_sigma));
  }
  if (!spec.diffusion) throw DomainError("process needs a diffusion term");
  return spec;
}

ProcessSpec with_variance(const ProcessSpec& spec, double v) {
  const KernelSpec kernel = spec.kernel.with_variance(v);
  switch (spec.kind) {
    case ProcessKind::kunita: return make_kunita(kernel, spec.landmarks, spec.dim);
    case ProcessKind::frozen_brownian: return make_frozen_brownian(kernel, *spec.frozen_state, spec.dim);
    default: throw DomainError("with_variance: only kunita and frozen_brownian processes are parametrised by v");
  }
}

NoiseArray sample_noise(std::uint64_t seed, const TimeGrid& grid, Index dim) {
  if (dim < 1) throw DomainError("sample_noise: dimension must be positive");
  NoiseArray noise;
  noise.seed = seed;
  noise.increments.resize(static_cast<Index>(grid.steps()), dim);
  std::mt19937_64 rng(seed);
  boost::random::normal_distribution<double> normal(0.0, std::sqrt(grid.dt()));
  for (Index i = 0; i < noise.increments.rows(); ++i)
    for (Index j = 0; j < dim; ++j) noise.increments(i, j) = normal(rng);
  return noise;
}

PathSample euler_maruyama(const ProcessSpec& process, const Vector& x0, const TimeGrid& grid,
                          std::shared_ptr<const NoiseArray> noise) {
  const Index dim = x0.size();
  if (!noise) throw DomainError("euler_maruyama: missing noise");
  if (noise->increments.rows() != static_cast<Index>(grid.steps()) || noise->increments.cols() != dim)
    throw DomainError("euler_maruyama: noise does not match grid and state dimension");
  if (process.state_dim() != dim) throw DomainError("euler_maruyama: x0 does not match the process dimension");
  if (!x0.allFinite()) throw SimulationBlowup(0, "euler_maruyama: non-finite initial state");

  PathSample path;
  path.grid = grid;
  path.noise = noise;
  path.states.resize(static_cast<Index>(grid.steps()) + 1, dim);
  path.states.row(0) = x0.transpose();

  const double dt = grid.dt();
  RowMatrix shocks;
  if (process.has_constant_diffusion()) shocks = noise->increments * process.constant_sigma->transpose();

  Vector x = x0;
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double t = grid.node(i);
    const auto row = static_cast<Index>(i);
    Vector next = x;
    if (process.drift) next.noalias() += process.drift(t, x) * dt;
    if (process.has_constant_diffusion())
      next += shocks.row(row).transpose();
    else
      next.noalias() += process.diffusion(t, x) * noise->increments.row(row).transpose();
    if (!next.allFinite()) throw SimulationBlowup(i + 1, "euler_maruyama: state became non-finite");
    path.states.row(row + 1) = next.transpose();
    x = std::move(next);
  }
  return path;
}

PathSample euler_maruyama(const ProcessSpec& process, const Vector& x0, const TimeGrid& grid,
                          NoiseArray noise) {
  return euler_maruyama(process, x0, grid, std::make_shared<const NoiseArray>(std::move(noise)));
}

Vector divergence_sigma(const ProcessSpec& process, const Vector& x, double t, std::optional<double> step) {
  const Index k = x.size();
  if (process.has_constant_diffusion()) return Vector::Zero(k);
  const double h = step.value_or(1e-4 * std::max(1.0, x.cwiseAbs().maxCoeff()));
  Vector div = Vector::Zero(k);
  Vector probe = x;
  for (Index j = 0; j < k; ++j) {
    // Column j of Sigma = sigma sigma^T is sigma * (row j of sigma)^T.
    probe(j) = x(j) + h;
    const Matrix up = process.diffusion(t, probe);
    probe(j) = x(j) - h;
    const Matrix down = process.diffusion(t, probe);
    probe(j) = x(j);
    div += (up * up.row(j).transpose() - down * down.row(j).transpose()) / (2.0 * h);
  }
  return div;
}

std::string path_csv(const PathSample& path) {
  std::ostringstream out;
  out << 't';
  for (Index j = 0; j < path.states.cols(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (Index i = 0; i < path.states.rows(); ++i) {
    out << detail::format_number(path.time(i));
    for (Index j = 0; j < path.states.cols(); ++j) out << ',' << detail::format_number(path.states(i, j));
    out << '\n';
  }
  return out.str();
}

void write_path_csv(const PathSample& path, const std::filesystem::path& file) {
  detail::write_text_file(file, path_csv(path));
}

}  // namespace lmb
