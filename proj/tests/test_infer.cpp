#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <doctest.h>

#include "lmbridge/error.hpp"
#include "lmbridge/infer.hpp"
#include "lmbridge/parallel.hpp"
#include "oracles.hpp"

using namespace lmb;

namespace {

struct Setup {
  Vector x0, x1;
  ProcessSpec proc;
  TimeGrid grid{0.0, 1.0, 50};
};

Setup two_landmarks() {
  Setup s;
  s.x0.resize(4);
  s.x0 << 0.0, 0.0, 0.5, 0.0;
  s.x1.resize(4);
  s.x1 << 0.4, 0.3, 1.1, -0.2;
  s.proc = make_frozen_brownian({1.0, 0.5}, s.x0, 2);
  return s;
}

// Closed-form maximiser of log N(x1; x0, T v S) over v.
double mle_variance(const Setup& s) {
  const Matrix unit = build_sigma(s.x0, 2, {1.0, 0.5});
  const Vector z = unit.inverse() * (s.x1 - s.x0);
  return z.squaredNorm() / (static_cast<double>(z.size()) * (s.grid.t1() - s.grid.t0()));
}

ProposalFactory exact_factory(const Setup& s, BridgeTransition transition = BridgeTransition::exact) {
  return [x0 = s.x0, x1 = s.x1, grid = s.grid, transition](const ProcessSpec& base) {
    return analytic_bridge_proposal(base, x0, x1, grid, transition);
  };
}

std::vector<Vector> brownian_draws(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(oracle::random_vector(rng, 2));
  return out;
}

Vector mean_of(const std::vector<Vector>& xs) {
  Vector m = Vector::Zero(xs.front().size());
  for (const auto& x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

}  // namespace

TEST_CASE("loglik_sweep") {
  const Setup s = two_landmarks();
  EstimatorConfig cfg;
  cfg.samples = 50;
  cfg.seed = 4;
  cfg.mode = LikelihoodMode::full_gaussian;

  SUBCASE("single point is its own argmax") {
    const SweepResult r = loglik_sweep(s.x0, s.x1, s.proc, {0.3}, exact_factory(s), s.grid, cfg);
    REQUIRE(r.estimates.size() == 1);
    CHECK(r.argmax == 0);
    CHECK(r.argmax_variance() == 0.3);
  }
  SUBCASE("argmax lies within one grid spacing of the closed-form maximiser") {
    const double v_star = mle_variance(s);
    std::vector<double> grid;
    for (int i = 0; i < 25; ++i) grid.push_back(0.2 * v_star * std::pow(25.0, i / 24.0));
    const SweepResult r = loglik_sweep(s.x0, s.x1, s.proc, grid, exact_factory(s), s.grid, cfg);
    const auto nearest = std::min_element(grid.begin(), grid.end(), [&](double a, double b) {
      return std::abs(std::log(a / v_star)) < std::abs(std::log(b / v_star));
    });
    CHECK(std::abs(static_cast<long>(r.argmax) - static_cast<long>(nearest - grid.begin())) <= 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double exact = oracle::brownian_loglik(s.x1, s.x0, build_sigma(s.x0, 2, {1.0, 0.5}), grid[i], 1.0);
      CHECK(r.estimates[i].value == doctest::Approx(exact).epsilon(1e-8));
    }
  }
  SUBCASE("repeated sweeps are bit-identical") {
    const std::vector<double> grid{0.1, 0.2, 0.4};
    const SweepResult a = loglik_sweep(s.x0, s.x1, s.proc, grid, exact_factory(s, BridgeTransition::euler), s.grid, cfg);
    const SweepResult b = loglik_sweep(s.x0, s.x1, s.proc, grid, exact_factory(s, BridgeTransition::euler), s.grid, cfg);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(a.estimates[i].value == b.estimates[i].value);
    CHECK(sweep_csv(a) == sweep_csv(b));
    CHECK(sweep_csv(a).rfind("v,loglik,ess\n", 0) == 0);
  }
  SUBCASE("invalid grids are rejected") {
    CHECK_THROWS_AS(loglik_sweep(s.x0, s.x1, s.proc, {}, exact_factory(s), s.grid, cfg), DomainError);
    CHECK_THROWS_AS(loglik_sweep(s.x0, s.x1, s.proc, {0.1, -1.0}, exact_factory(s), s.grid, cfg), DomainError);
  }
}

TEST_CASE("blob pairs from the same class give a smaller variance estimate than pairs across classes") {
  SynthParams calm;
  calm.perturbation = 0.03;
  SynthParams wild;
  wild.perturbation = 0.3;
  const KernelSpec kernel{1.0, 0.5};
  const TimeGrid grid(0.0, 1.0, 50);
  EstimatorConfig cfg;
  cfg.samples = 20;
  cfg.mode = LikelihoodMode::full_gaussian;

  auto estimate = [&](const LandmarkShape& a, const LandmarkShape& b) {
    const LandmarkShape aligned = procrustes_align(a, b);
    const ProcessSpec proc = make_frozen_brownian(kernel, a);
    const BaselineModel model = make_baseline_model(proc, grid);
    return infer_variance(baseline_variance_objective(model, a.flatten(), aligned.flatten(), cfg), 1e-2, {})
        .variance;
  };
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const LandmarkShape reference = synth_shape(SynthKind::blob, 20, calm, 100 + seed);
    const double intra = estimate(reference, synth_shape(SynthKind::blob, 20, calm, 200 + seed));
    const double inter = estimate(reference, synth_shape(SynthKind::blob, 20, wild, 300 + seed));
    CHECK(intra < inter);
  }
}

TEST_CASE("pathwise_gradient") {
  SUBCASE("constant objective has zero gradient") {
    DifferentiableObjective obj;
    obj.value = [](const Vector&, std::uint64_t) { return 3.0; };
    const Vector g = pathwise_gradient(obj, Vector::Ones(3), 1);
    CHECK(g.norm() == 0.0);
  }
  SUBCASE("one-dimensional Brownian motion") {
    const double v = 0.7, mu = 0.2, x1 = 1.3, t1 = 2.0;
    const ProcessSpec proc = make_frozen_brownian({1.0, 1.0}, Vector::Zero(1), 1);
    const BaselineModel model = make_baseline_model(proc, TimeGrid(0.0, t1, 40));
    EstimatorConfig cfg;
    cfg.samples = 30;
    cfg.mode = LikelihoodMode::full_gaussian;
    const DifferentiableObjective obj = baseline_objective(model, Vector::Constant(1, x1), cfg);
    Vector params(2);
    params << v, mu;
    const Vector exact = pathwise_gradient(obj, params, 5);
    CHECK(exact(1) == doctest::Approx((x1 - mu) / (t1 * v)).epsilon(1e-3));
    const double q = (x1 - mu) * (x1 - mu) / t1;
    CHECK(exact(0) == doctest::Approx(-0.5 / v + 0.5 * q / (v * v)).epsilon(1e-3));

    DifferentiableObjective fd_only;
    fd_only.value = obj.value;
    const Vector fd = pathwise_gradient(fd_only, params, 5, 1e-5);
    CHECK(oracle::relative_error(fd, exact) <= 1e-6);
  }
  SUBCASE("non-finite values are reported") {
    DifferentiableObjective obj;
    obj.value = [](const Vector& p, std::uint64_t) { return p(0) > 1.0 ? std::nan("") : 0.0; };
    CHECK_THROWS_AS(pathwise_gradient(obj, Vector::Ones(1), 1), EstimationError);
  }
}

TEST_CASE("baseline estimator matches the generic estimator and its derivative") {
  const Setup s = two_landmarks();
  for (const auto transition : {BridgeTransition::euler, BridgeTransition::exact}) {
    CAPTURE(to_string(transition));
    const BaselineModel model = make_baseline_model(s.proc, s.grid, transition);
    EstimatorConfig cfg;
    cfg.samples = 40;
    cfg.seed = 9;
    cfg.mode = LikelihoodMode::full_gaussian;

    for (const double v : {0.05, 0.4}) {
      const ProcessSpec proc = with_variance(s.proc, v);
      const LogLikEstimate direct =
          estimate_loglik(s.x0, s.x1, proc, analytic_bridge_proposal(proc, s.x0, s.x1, s.grid, transition), s.grid, cfg);
      const BaselineValue fast = baseline_loglik(model, v, s.x0, s.x1, cfg);
      CHECK(fast.value == doctest::Approx(direct.value).epsilon(1e-9));
      CHECK(fast.ess == doctest::Approx(direct.ess).epsilon(1e-9));
    }

    const DifferentiableObjective obj = baseline_objective(model, s.x1, cfg);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unif(0.05, 0.5);
    for (int trial = 0; trial < 5; ++trial) {
      Vector params(5);
      params(0) = unif(rng);
      params.tail(4) = s.x0 + 0.1 * oracle::random_vector(rng, 4);
      Vector exact;
      obj.value_and_gradient(params, 3, exact);
      const Vector fd = oracle::fd_gradient([&](const Vector& p) { return obj.value(p, 3); }, params, 1e-6);
      CHECK(oracle::relative_error(exact, fd) <= 1e-3);
    }
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(make_baseline_model(make_kunita({1.0, 0.5}, 2, 2), s.grid), DomainError);
    CHECK_THROWS_AS(make_baseline_model(s.proc, s.grid, BridgeTransition::exact, 0), DomainError);
    const BaselineModel model = make_baseline_model(s.proc, s.grid);
    CHECK_THROWS_AS(baseline_loglik(model, -1.0, s.x0, s.x1, {}), DomainError);
    CHECK_THROWS_AS(baseline_loglik(model, 1.0, Vector::Zero(2), s.x1, {}), DomainError);
  }
}

TEST_CASE("gradient_ascent") {
  DifferentiableObjective quad;
  Vector target(2);
  target << 1.0, -2.0;
  quad.value = [&](const Vector& p, std::uint64_t) { return -(p - target).squaredNorm(); };
  quad.value_and_gradient = [&](const Vector& p, std::uint64_t, Vector& g) {
    g = -2.0 * (p - target);
    return -(p - target).squaredNorm();
  };
  SUBCASE("reaches the maximiser with non-decreasing objective") {
    std::size_t calls = 0;
    const OptimizerResult r = gradient_ascent(quad, Vector::Zero(2), {}, [&](const OptimizerStep&) { ++calls; });
    CHECK(r.converged);
    CHECK((r.params - target).norm() < 1e-5);
    CHECK(calls == r.trajectory.size());
    CHECK(r.trajectory.front().iteration == 0);
    for (std::size_t i = 1; i < r.trajectory.size(); ++i)
      CHECK(r.trajectory[i].objective >= r.trajectory[i - 1].objective);
  }
  SUBCASE("stops once the required gain is below rounding error") {
    DifferentiableObjective flat;
    flat.value = [](const Vector& p, std::uint64_t) { return 1e8 - 10.0 * p.squaredNorm(); };
    flat.value_and_gradient = [](const Vector& p, std::uint64_t, Vector& g) {
      g = -20.0 * p;
      return 1e8 - 10.0 * p.squaredNorm();
    };
    // Step 0.1 maps p to -p, so only the rounding guard can end this run early.
    const OptimizerResult r = gradient_ascent(flat, Vector::Constant(1, 1e-4), {});
    CHECK(r.converged);
    CHECK(r.trajectory.size() < 10);
  }
  SUBCASE("iteration cap") {
    OptimizerConfig cfg;
    cfg.max_iterations = 2;
    cfg.initial_step = 0.01;
    const OptimizerResult r = gradient_ascent(quad, Vector::Zero(2), cfg);
    CHECK_FALSE(r.converged);
    CHECK(r.trajectory.size() == 3);
  }
  SUBCASE("invalid settings") {
    OptimizerConfig cfg;
    cfg.shrink = 1.5;
    CHECK_THROWS_AS(gradient_ascent(quad, Vector::Zero(2), cfg), DomainError);
  }
}

TEST_CASE("infer_variance") {
  const Setup s = two_landmarks();
  const double v_star = mle_variance(s);
  EstimatorConfig cfg;
  cfg.samples = 50;
  cfg.mode = LikelihoodMode::full_gaussian;
  const BaselineModel model = make_baseline_model(s.proc, s.grid);
  const DifferentiableObjective obj = baseline_variance_objective(model, s.x0, s.x1, cfg);

  SUBCASE("converges to the closed-form maximiser from both sides") {
    const VarianceResult low = infer_variance(obj, 0.1 * v_star, {});
    const VarianceResult high = infer_variance(obj, 10.0 * v_star, {});
    CHECK(low.converged);
    CHECK(high.converged);
    CHECK(std::abs(low.variance / v_star - 1.0) <= 0.02);
    CHECK(std::abs(high.variance / v_star - 1.0) <= 0.02);
    CHECK(std::abs(low.variance / high.variance - 1.0) <= 0.05);
    CHECK(low.loglik == doctest::Approx(oracle::brownian_loglik(s.x1, s.x0, build_sigma(s.x0, 2, {1.0, 0.5}),
                                                                low.variance, 1.0)));
  }
  SUBCASE("starting at the maximiser stops at once") {
    const VarianceResult r = infer_variance(obj, v_star, {});
    CHECK(r.converged);
    CHECK(r.trajectory.size() == 1);
    CHECK(r.variance == doctest::Approx(v_star).epsilon(1e-12));
  }
  SUBCASE("finite-difference objective agrees") {
    OptimizerConfig opt;
    opt.tolerance = 1e-5;
    const DifferentiableObjective fd =
        estimator_objective(s.x0, s.x1, s.proc, exact_factory(s), s.grid, {20, LikelihoodMode::full_gaussian, 0});
    const VarianceResult r = infer_variance(fd, 2.0 * v_star, opt);
    CHECK(std::abs(r.variance / v_star - 1.0) <= 0.02);
  }
  SUBCASE("invalid init") { CHECK_THROWS_AS(infer_variance(obj, 0.0, {}), DomainError); }
}

TEST_CASE("diffusion_mean of planar Brownian motion") {
  const ProcessSpec proc = make_frozen_brownian({1.0, 1.0}, Vector::Zero(2), 2);
  const TimeGrid grid(0.0, 1.0, 50);
  EstimatorConfig cfg;
  cfg.samples = 20;
  cfg.mode = LikelihoodMode::full_gaussian;
  const std::vector<Vector> obs = brownian_draws(10, 23);
  const Vector init = Vector::Constant(2, 1.5);

  SUBCASE("ends at the sample mean with non-decreasing joint likelihood") {
    const BaselineModel model = make_baseline_model(proc, grid);
    const MeanTrajectory t = diffusion_mean(obs, model, 1.0, init, cfg, {});
    CHECK(t.converged);
    CHECK((t.final_estimate() - mean_of(obs)).norm() <= 0.05);
    for (std::size_t i = 1; i < t.loglik.size(); ++i) CHECK(t.loglik[i] >= t.loglik[i - 1]);

    std::vector<Vector> reversed(obs.rbegin(), obs.rend());
    const MeanTrajectory u = diffusion_mean(reversed, model, 1.0, init, cfg, {});
    CHECK(u.final_estimate() == t.final_estimate());
    CHECK(mean_trajectory_csv(u) == mean_trajectory_csv(t));
  }
  SUBCASE("single observation") {
    const BaselineModel model = make_baseline_model(proc, grid);
    const MeanTrajectory t = diffusion_mean({obs[0]}, model, 1.0, init, cfg, {});
    CHECK((t.final_estimate() - obs[0]).norm() <= 1e-4);
  }
  SUBCASE("gradient at the sample mean vanishes within Monte Carlo error") {
    const BaselineModel model = make_baseline_model(proc, grid, BridgeTransition::euler);
    const DifferentiableObjective joint = baseline_joint_objective(model, 1.0, obs, cfg);
    const Vector centre = mean_of(obs);
    std::vector<Vector> grads;
    for (std::uint64_t seed = 0; seed < 30; ++seed) grads.push_back(pathwise_gradient(joint, centre, seed));
    const Vector avg = mean_of(grads);
    for (Index j = 0; j < 2; ++j) {
      double ss = 0.0;
      for (const auto& g : grads) ss += (g(j) - avg(j)) * (g(j) - avg(j));
      const double se = std::sqrt(ss / (grads.size() - 1.0) / static_cast<double>(grads.size()));
      CHECK(std::abs(avg(j)) <= 3.0 * se + 1e-9);
    }
  }
  SUBCASE("generic form with a callback") {
    std::size_t calls = 0;
    const ObservationLoglik loglik = [](const Vector& x, const Vector& y, std::uint64_t) {
      return oracle::brownian_loglik(y, x, Matrix::Identity(2, 2), 1.0, 1.0);
    };
    const MeanTrajectory t = diffusion_mean(obs, loglik, init, {}, [&](const Vector&) { ++calls; });
    CHECK(calls == t.iterates.size());
    CHECK((t.final_estimate() - mean_of(obs)).norm() <= 1e-4);
  }
  SUBCASE("trajectory CSV") {
    MeanTrajectory t;
    t.iterates = {Vector::Zero(2), Vector::Ones(2)};
    t.loglik = {-2.0, -1.5};
    t.step_sizes = {0.0, 0.1};
    CHECK(mean_trajectory_csv(t) == "iteration,loglik,x1,x2\n0,-2,0,0\n1,-1.5,1,1\n");
  }
  SUBCASE("invalid observations") {
    const BaselineModel model = make_baseline_model(proc, grid);
    CHECK_THROWS_AS(diffusion_mean({}, model, 1.0, init, cfg, {}), DomainError);
    CHECK_THROWS_AS(diffusion_mean({Vector::Zero(2), Vector::Zero(3)}, model, 1.0, init, cfg, {}), DomainError);
  }
}
