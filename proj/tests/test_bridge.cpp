#include <cmath>
#include <memory>

#include <doctest.h>

#include "lmbridge/bridge.hpp"
#include "lmbridge/error.hpp"
#include "lmbridge/parallel.hpp"
#include "lmbridge/score.hpp"
#include "oracles.hpp"

using namespace lmb;

namespace {

struct Setup {
  Vector x0, x1;
  ProcessSpec proc;
  Matrix cov0;
};

Setup two_landmarks() {
  Setup s;
  s.x0.resize(4);
  s.x0 << 0.0, 0.0, 0.5, 0.0;
  s.x1.resize(4);
  s.x1 << 0.4, 0.3, 1.1, -0.2;
  s.proc = make_frozen_brownian({1.0, 0.5}, s.x0, 2);
  s.cov0 = *s.proc.constant_sigma * s.proc.constant_sigma->transpose();
  return s;
}

Setup one_dimensional() {
  Setup s;
  s.x0 = Vector::Constant(1, -0.5);
  s.x1 = Vector::Constant(1, 1.0);
  s.proc = make_frozen_brownian({0.8, 1.0}, s.x0, 1);
  s.cov0 = *s.proc.constant_sigma * s.proc.constant_sigma->transpose();
  return s;
}

BridgeSpec spec_for(const Setup& s) { return BridgeSpec{s.proc, s.x0, 0.0, s.x1, 1.0}; }

// Midpoint states of `count` bridges from `draw(i)`, one per row.
template <class Draw>
Matrix midpoints(std::size_t count, std::size_t mid_node, Draw draw) {
  Matrix out;
  for (std::size_t i = 0; i < count; ++i) {
    const PathSample p = draw(i);
    if (i == 0) out.resize(static_cast<Index>(count), p.states.cols());
    out.row(static_cast<Index>(i)) = p.states.row(static_cast<Index>(mid_node - p.first_node));
  }
  return out;
}

void check_midpoint_law(const Matrix& mids, const Setup& s, double T) {
  const double n = static_cast<double>(mids.rows());
  const Vector mean = mids.colwise().mean().transpose();
  const Matrix centred = mids.rowwise() - mean.transpose();
  const Matrix cov = centred.transpose() * centred / (n - 1.0);
  const Vector expected_mean = (s.x0 + s.x1) / 2.0;
  const Matrix expected_cov = T / 4.0 * s.cov0;
  for (Index j = 0; j < mean.size(); ++j) CHECK(std::abs(mean(j) - expected_mean(j)) <= 3.0 * std::sqrt(cov(j, j) / n));
  CHECK((cov - expected_cov).norm() / expected_cov.norm() <= 0.1);
}

}  // namespace

TEST_CASE("reverse_bridge_drift with the analytic score") {
  const Setup s = two_landmarks();
  const BridgeSpec spec = spec_for(s);
  Vector u(4);
  u << 0.3, -0.1, 0.2, 0.5;
  CHECK(reverse_bridge_drift(spec, s.x0 + u, 0.25).isApprox(Vector(-u / 0.25), 1e-14));
  CHECK(reverse_bridge_drift(spec, s.x0, 0.6).isZero(0.0));
  CHECK_THROWS_AS(reverse_bridge_drift(spec, s.x0, 0.0), DomainError);
  CHECK_THROWS_AS(reverse_bridge_drift(spec, s.x0, 1.5), DomainError);

  BridgeSpec kunita = spec;
  kunita.base = make_kunita({1.0, 0.5}, 2, 2);
  CHECK_THROWS_AS(kunita.validate(), DomainError);
}

TEST_CASE("sample_reverse_bridge structure") {
  const Setup s = two_landmarks();
  const TimeGrid g(0.0, 1.0, 50);
  const BridgeSpec spec = spec_for(s);
  const auto noise = std::make_shared<const NoiseArray>(sample_noise(1, g, 4));
  const PathSample p = sample_reverse_bridge(spec, g, noise);
  CHECK(p.first_node == 2);
  CHECK(p.states.rows() == 49);
  CHECK(p.states.bottomRows(1).transpose() == s.x1);
  CHECK(p.time(0) == doctest::Approx(0.04));

  BridgeSpec no_div = spec;
  no_div.include_divergence = false;
  CHECK(sample_reverse_bridge(no_div, g, noise).states == p.states);
  CHECK(sample_reverse_bridge(spec, g, noise).states == p.states);

  CHECK_THROWS_AS(sample_reverse_bridge(spec, TimeGrid(0.0, 2.0, 50), noise), DomainError);
  CHECK_THROWS_AS(sample_reverse_bridge(spec, g, sample_noise(1, g, 3)), DomainError);
  BridgeSpec wide = spec;
  wide.guard_steps = 50;
  CHECK_THROWS_AS(sample_reverse_bridge(wide, g, noise), DomainError);
}

TEST_CASE("zero diffusion gives the straight line") {
  Vector x0(2), x1(2);
  x0 << 0.0, 1.0;
  x1 << 2.0, -1.0;
  const ProcessSpec still =
      make_generic_process(2, {}, [](double, const Vector&) { return Matrix(Matrix::Zero(2, 2)); }, Matrix::Zero(2, 2));
  const TimeGrid g(0.0, 1.0, 20);
  const PathSample p = sample_reverse_bridge(BridgeSpec{still, x0, 0.0, x1, 1.0}, g, sample_noise(3, g, 2));
  for (Index r = 0; r < p.states.rows(); ++r) {
    const Vector line = x0 + p.time(r) * (x1 - x0);
    CHECK((p.states.row(r).transpose() - line).norm() <= 1e-12);
  }
}

TEST_CASE("reverse bridge t0-side endpoint") {
  const Setup s = one_dimensional();
  const TimeGrid g(0.0, 1.0, 100);
  const BridgeSpec spec = spec_for(s);
  const double radius = 3.0 * std::sqrt(spec.guard_steps * g.dt() * s.cov0(0, 0));
  int inside = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const PathSample p = sample_reverse_bridge(spec, g, sample_noise(derive_seed(7, i), g, 1));
    if (std::abs(p.states(0, 0) - s.x0(0)) <= radius) ++inside;
  }
  CHECK(inside >= 9900);
}

TEST_CASE("forward_bm_bridge_drift") {
  Vector x(2), target(2);
  x << 0.0, 0.0;
  target << 1.0, 0.0;
  CHECK(forward_bm_bridge_drift(target, 0.3, target, 1.0).isZero(0.0));
  Vector expected(2);
  expected << 2.0, 0.0;
  CHECK(forward_bm_bridge_drift(x, 0.5, target, 1.0).isApprox(expected));
  CHECK_THROWS_AS(forward_bm_bridge_drift(x, 1.0, target, 1.0), DomainError);
}

TEST_CASE("forward Euler bridge endpoint hits the target") {
  const Setup s = one_dimensional();
  const TimeGrid g(0.0, 1.0, 100);
  const double radius = 3.0 * std::sqrt(g.dt() * s.cov0(0, 0));
  int inside = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto noise = std::make_shared<const NoiseArray>(sample_noise(derive_seed(8, i), g, 1));
    const PathSample p = sample_forward_bm_bridge(s.proc, s.x0, s.x1, g, noise);
    CHECK(p.states.rows() == 101);
    if (std::abs(p.states(100, 0) - s.x1(0)) <= radius) ++inside;
  }
  CHECK(inside >= 9900);
}

TEST_CASE("bridge midpoint law") {
  const Setup s = two_landmarks();
  const TimeGrid g(0.0, 1.0, 50);
  SUBCASE("reverse analytic bridge") {
    const BridgeSpec spec = spec_for(s);
    check_midpoint_law(midpoints(10000, 25, [&](std::size_t i) {
                         return sample_reverse_bridge(spec, g, sample_noise(derive_seed(31, i), g, 4));
                       }),
                       s, 1.0);
  }
  SUBCASE("forward exact bridge") {
    check_midpoint_law(midpoints(10000, 25, [&](std::size_t i) {
                         auto noise = std::make_shared<const NoiseArray>(sample_noise(derive_seed(22, i), g, 4));
                         return sample_forward_bm_bridge(s.proc, s.x0, s.x1, g, noise, BridgeTransition::exact, 1);
                       }),
                       s, 1.0);
  }
  SUBCASE("forward Euler bridge") {
    check_midpoint_law(midpoints(10000, 25, [&](std::size_t i) {
                         auto noise = std::make_shared<const NoiseArray>(sample_noise(derive_seed(23, i), g, 4));
                         return sample_forward_bm_bridge(s.proc, s.x0, s.x1, g, noise);
                       }),
                       s, 1.0);
  }
}

TEST_CASE("exact forward transition reproduces the bridge marginal at every node") {
  // Var(X_t) = t (T - t) / T Sigma for a Brownian bridge; the exact scheme hits it node by node.
  const Setup s = one_dimensional();
  const TimeGrid g(0.0, 1.0, 10);
  Matrix ends(20000, 10);
  for (std::uint64_t i = 0; i < 20000; ++i) {
    auto noise = std::make_shared<const NoiseArray>(sample_noise(derive_seed(30, i), g, 1));
    ends.row(static_cast<Index>(i)) = sample_forward_bm_bridge(s.proc, s.x0, s.x1, g, noise, BridgeTransition::exact, 1)
                                          .states.col(0)
                                          .head(10)
                                          .transpose();
  }
  for (Index j = 1; j < 10; ++j) {
    const double t = g.node(static_cast<std::size_t>(j));
    const Eigen::ArrayXd col = ends.col(j).array();
    const double var = (col - col.mean()).square().sum() / 19999.0;
    CHECK(var == doctest::Approx(t * (1 - t) * s.cov0(0, 0)).epsilon(0.05));
  }
}

TEST_CASE("bridge transition helpers") {
  CHECK(bridge_covariance_scale(BridgeTransition::euler, 0.2, 0.3, 1.0) == 1.0);
  CHECK(bridge_covariance_scale(BridgeTransition::exact, 0.2, 0.3, 1.0) == doctest::Approx(0.7 / 0.8));
  CHECK(parse_bridge_transition(to_string(BridgeTransition::exact)) == BridgeTransition::exact);
  CHECK_THROWS_AS(parse_bridge_transition("milstein"), DomainError);

  const Setup s = two_landmarks();
  const TimeGrid g(0.0, 1.0, 10);
  auto noise = std::make_shared<const NoiseArray>(sample_noise(1, g, 4));
  CHECK_THROWS_AS(sample_forward_bm_bridge(s.proc, s.x0, s.x1, g, noise, BridgeTransition::exact, 0), DomainError);
  CHECK_THROWS_AS(sample_forward_bm_bridge(make_kunita({1, 1}, 2, 2), s.x0, s.x1, g, noise), DomainError);
}

TEST_CASE("complete_bridge_path") {
  const Setup s = two_landmarks();
  const TimeGrid g(0.0, 1.0, 4);
  const PathSample rev = sample_reverse_bridge(spec_for(s), g, sample_noise(2, g, 4));
  const TimedPath full = complete_bridge_path(rev, s.x0, s.x1);
  CHECK(full.times == std::vector<double>{0.0, 0.5, 0.75, 1.0});
  CHECK(full.states.row(0).transpose() == s.x0);
  CHECK(full.states.bottomRows(1).transpose() == s.x1);

  auto noise = std::make_shared<const NoiseArray>(sample_noise(3, g, 4));
  const PathSample fwd = sample_forward_bm_bridge(s.proc, s.x0, s.x1, g, noise, BridgeTransition::exact, 1);
  const TimedPath done = complete_bridge_path(fwd, s.x0, s.x1);
  CHECK(done.times.size() == 5);
  CHECK(done.states.bottomRows(1).transpose() == s.x1);

  const std::string csv = timed_path_csv(done);
  CHECK(csv.rfind("t,x1,x2,x3,x4\n0,0,0,0.5,0\n", 0) == 0);
}

TEST_CASE("learned-score drift tracks the analytic drift") {
  const Vector x0 = Vector::Zero(1);
  const ProcessSpec proc = make_frozen_brownian({1.0, 1.0}, x0, 1);
  const TimeGrid grid(0.0, 1.0, 100);
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.widths = {64, 32, 16};
  cfg.learning_rate = 3e-3;
  cfg.final_learning_rate_factor = 0.05;
  cfg.seed = 11;
  const auto model = std::make_shared<const ScoreModel>(train_score(proc, x0, grid, cfg).model);

  const BridgeSpec analytic{proc, x0, 0.0, Vector::Constant(1, 0.7), 1.0};
  BridgeSpec learned = analytic;
  learned.score = ScoreSource::learned(model);
  double diff = 0.0, norm = 0.0;
  for (std::uint64_t p = 0; p < 100; ++p) {
    const PathSample path = euler_maruyama(proc, x0, grid, sample_noise(derive_seed(12, p), grid, 1));
    for (Index r = 0; r < path.states.rows(); ++r) {
      const double t = path.time(r);
      if (t < 0.1) continue;
      const Vector y = path.states.row(r).transpose();
      const Vector a = reverse_bridge_drift(analytic, y, t);
      diff += (reverse_bridge_drift(learned, y, t) - a).squaredNorm();
      norm += a.squaredNorm();
    }
  }
  CHECK(std::sqrt(diff / norm) <= 0.15);
}
