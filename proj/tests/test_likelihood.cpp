#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include <doctest.h>

#include "lmbridge/bridge.hpp"
#include "lmbridge/error.hpp"
#include "lmbridge/likelihood.hpp"
#include "lmbridge/parallel.hpp"
#include "oracles.hpp"

using namespace lmb;

namespace {

struct Pair {
  Vector x0, x1;
  ProcessSpec proc;
};

Pair two_landmarks(double v = 1.0) {
  Pair p;
  p.x0.resize(4);
  p.x0 << 0.0, 0.0, 0.5, 0.0;
  p.x1.resize(4);
  p.x1 << 0.4, 0.3, 1.1, -0.2;
  p.proc = make_frozen_brownian({v, 0.5}, p.x0, 2);
  return p;
}

double stddev(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

TEST_CASE("gauss_quad_form") {
  Vector r(2);
  r << 2.0, 0.0;
  CHECK(gauss_quad_form(Vector::Zero(2), Matrix(Matrix::Identity(2, 2))) == 0.0);
  CHECK(gauss_quad_form(r, Matrix(2.0 * Matrix::Identity(2, 2))) == doctest::Approx(1.0));
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 2 + trial % 6;
    const Matrix sigma = oracle::random_matrix(rng, n, n) + 3.0 * Matrix::Identity(n, n);
    const Vector res = oracle::random_vector(rng, n);
    const double direct = res.dot((sigma * sigma.transpose()).inverse() * res);
    CHECK(std::abs(gauss_quad_form(res, sigma) - direct) <= 1e-8 * direct);
  }
  CHECK_THROWS_AS(gauss_quad_form(r, Matrix(Matrix::Identity(3, 3))), DomainError);
}

TEST_CASE("solution_squared_norms matches column-wise solves") {
  std::mt19937_64 rng(2);
  SUBCASE("full rank") {
    const Matrix sigma = oracle::random_matrix(rng, 6, 6) + 2.0 * Matrix::Identity(6, 6);
    const Matrix rhs = oracle::random_matrix(rng, 6, 9);
    const SigmaSolver solver(sigma);
    const Vector zz = solution_squared_norms(solver, rhs);
    for (Index j = 0; j < 9; ++j) CHECK(zz(j) == doctest::Approx(solver.solve(Vector(rhs.col(j))).squaredNorm()).epsilon(1e-10));
  }
  SUBCASE("rank deficient kernel matrix") {
    Matrix pts(3, 2);
    pts << 0, 0, 0, 0, 1, 0;  // two coincident landmarks
    const Matrix sigma = build_sigma(LandmarkShape(pts), {1.0, 1.0});
    const SigmaSolver solver(sigma);
    CHECK(solver.rank() == 4);
    const Matrix rhs = oracle::random_matrix(rng, 6, 5);
    const Vector zz = solution_squared_norms(solver, rhs);
    for (Index j = 0; j < 5; ++j) CHECK(zz(j) == doctest::Approx(solver.solve(Vector(rhs.col(j))).squaredNorm()).epsilon(1e-9));
  }
}

TEST_CASE("log_step_density") {
  const Vector x = Vector::Zero(2);
  const ProcessSpec unit = make_frozen_brownian({1.0, 1.0}, LandmarkShape(Matrix::Zero(1, 2)));
  CHECK(log_step_density(x, x, unit, 0.0, 1.0, LikelihoodMode::full_gaussian) ==
        doctest::Approx(-std::log(2.0 * oracle::kPi)));
  CHECK(log_step_density(Vector::Ones(2), x, unit, 0.0, 1.0, LikelihoodMode::variance_profile) == doctest::Approx(-1.0));

  SUBCASE("full mode matches the dense oracle") {
    const LandmarkShape s = synth_shape(SynthKind::blob, 4, {}, 3);
    const ProcessSpec kun = make_kunita({0.7, 0.8}, 4, 2);
    std::mt19937_64 rng(3);
    const Vector a = s.flatten(), b = a + 0.1 * oracle::random_vector(rng, 8);
    const Matrix sig = build_sigma(s, {0.7, 0.8});
    CHECK(log_step_density(b, a, kun, 0.2, 0.05, LikelihoodMode::full_gaussian) ==
          doctest::Approx(oracle::gaussian_log_density(b, a, 0.05 * sig * sig.transpose())).epsilon(1e-10));
  }

  SUBCASE("full minus profile is constant in v") {
    const Pair p = two_landmarks();
    std::vector<double> gaps;
    for (double v : {0.05, 0.1, 0.3, 0.7, 1.0, 1.5, 2.0, 4.0, 8.0, 20.0}) {
      const ProcessSpec pv = with_variance(p.proc, v);
      gaps.push_back(log_step_density(p.x1, p.x0, pv, 0.0, 0.3, LikelihoodMode::full_gaussian) -
                     log_step_density(p.x1, p.x0, pv, 0.0, 0.3, LikelihoodMode::variance_profile));
    }
    for (double g : gaps) CHECK(std::abs(g - gaps.front()) <= 1e-8 * std::abs(gaps.front()));
  }

  CHECK_THROWS_AS(log_step_density(x, x, unit, 0.0, 0.0, LikelihoodMode::full_gaussian), DomainError);
  CHECK(parse_likelihood_mode("variance_profile") == LikelihoodMode::variance_profile);
  CHECK_THROWS_AS(parse_likelihood_mode("exact"), DomainError);
}

TEST_CASE("importance_log_weight") {
  const Pair p = two_landmarks();
  const Matrix sigma = *p.proc.constant_sigma;
  const Matrix cov = sigma * sigma.transpose();

  SUBCASE("proposal equal to the base") {
    const TimeGrid g(0.0, 1.0, 20);
    const PathSample path = euler_maruyama(p.proc, p.x0, g, sample_noise(1, g, 4));
    const Proposal same{[](double, const Vector& x) { return Vector(Vector::Zero(x.size())); }};
    CHECK(importance_log_weight(path, p.proc, same) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("one interior step against direct densities") {
    const TimeGrid g(0.0, 1.0, 2);
    for (auto transition : {BridgeTransition::euler, BridgeTransition::exact}) {
      const BridgeProposal prop = analytic_bridge_proposal(p.proc, p.x0, p.x1, g, transition, 1);
      const PathSample path = prop.draw(5);
      REQUIRE(path.states.rows() == 2);
      const Vector y = path.states.row(1).transpose();
      const double c = transition == BridgeTransition::exact ? 0.5 : 1.0;
      const double direct = oracle::gaussian_log_density(y, p.x0, 0.5 * cov) -
                            oracle::gaussian_log_density(y, p.x0 + (p.x1 - p.x0) * 0.5, c * 0.5 * cov);
      CHECK(importance_log_weight(path, p.proc, prop.density) == doctest::Approx(direct).epsilon(1e-10));
    }
  }

  SUBCASE("reverse proposal against direct densities") {
    const TimeGrid g(0.0, 1.0, 6);
    const BridgeSpec spec{p.proc, p.x0, 0.0, p.x1, 1.0};
    const BridgeProposal prop = reverse_bridge_proposal(spec, g);
    const PathSample path = prop.draw(9);
    double direct = 0.0;
    for (Index j = 0; j + 1 < path.states.rows(); ++j) {
      const Vector a = path.states.row(j).transpose(), b = path.states.row(j + 1).transpose();
      direct += oracle::gaussian_log_density(b, a, g.dt() * cov);
      direct -= oracle::gaussian_log_density(a, b + reverse_bridge_drift(spec, b, path.time(j + 1)) * g.dt(), g.dt() * cov);
    }
    CHECK(importance_log_weight(path, p.proc, prop.density) == doctest::Approx(direct).epsilon(1e-9));
  }

  SUBCASE("state-dependent diffusion uses the diffusion at each step's origin") {
    const TimeGrid g(0.0, 1.0, 4);
    const ProcessSpec kun = make_kunita({0.5, 0.6}, 2, 2);
    PathSample path;
    path.grid = g;
    path.first_node = 1;
    std::mt19937_64 rng(4);
    path.states = RowMatrix(p.x0.transpose().replicate(4, 1) + 0.2 * oracle::random_matrix(rng, 4, 4));
    const Proposal rev{[](double t, const Vector& x) { return Vector(-x / t); }, TimeDirection::reverse};
    double expected = 0.0;
    for (Index j = 0; j < 3; ++j) {
      const Vector a = path.states.row(j).transpose(), b = path.states.row(j + 1).transpose();
      const Matrix sa = build_sigma(a, 2, kun.kernel), sb = build_sigma(b, 2, kun.kernel);
      const Vector rp = a - b + b / path.time(j + 1) * g.dt();
      // Only the quadratic forms: the log-determinants of the two step covariances are left out.
      expected += 0.5 / g.dt() * (rp.dot((sb * sb.transpose()).inverse() * rp) - (b - a).dot((sa * sa.transpose()).inverse() * (b - a)));
    }
    CHECK(importance_log_weight(path, kun, rev) == doctest::Approx(expected).epsilon(1e-8));
  }

  SUBCASE("direction mismatch") {
    const TimeGrid g(0.0, 1.0, 4);
    const BridgeSpec spec{p.proc, p.x0, 0.0, p.x1, 1.0};
    const PathSample rev = sample_reverse_bridge(spec, g, sample_noise(1, g, 4));
    const Proposal fwd{[](double, const Vector& x) { return Vector(Vector::Zero(x.size())); }};
    CHECK_THROWS_AS(importance_log_weight(rev, p.proc, fwd), DomainError);
  }
}

TEST_CASE("log_mean_exp_with_ess") {
  const std::vector<double> w{0.0, std::log(2.0), std::log(3.0)};
  const auto [value, ess] = log_mean_exp_with_ess(w);
  CHECK(value == doctest::Approx(std::log(2.0)));
  CHECK(ess == doctest::Approx(36.0 / 14.0));
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(log_mean_exp_with_ess(big).first == doctest::Approx(1000.0));
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(log_mean_exp_with_ess(std::vector<double>{-inf, -inf}), EstimationError);
  CHECK_THROWS_AS(log_mean_exp_with_ess(std::vector<double>{0.0, std::nan("")}), EstimationError);
  CHECK_THROWS_AS(log_mean_exp_with_ess(std::vector<double>{}), EstimationError);
  CHECK(log_mean_exp_with_ess(std::vector<double>{-inf, 0.0}).first == doctest::Approx(std::log(0.5)));
}

TEST_CASE("estimate_loglik against the Brownian transition density") {
  const Pair p = two_landmarks();
  const double truth = brownian_log_density(p.x1, p.x0, *p.proc.constant_sigma, 1.0);
  CHECK(truth == doctest::Approx(oracle::brownian_loglik(p.x1, p.x0, *p.proc.constant_sigma, 1.0, 1.0)).epsilon(1e-12));

  SUBCASE("N = M = 1000") {
    const TimeGrid g(0.0, 1.0, 1000);
    const EstimatorConfig cfg{1000, LikelihoodMode::full_gaussian, 7};
    const LogLikEstimate e = estimate_loglik(p.x0, p.x1, p.proc, analytic_bridge_proposal(p.proc, p.x0, p.x1, g), g, cfg);
    CHECK(std::abs(e.value - truth) <= 0.1);
    CHECK(e.ess >= 0.2 * 1000);
    CHECK(e.ess <= 1000.0 + 1e-9);
    CHECK(e.n_samples == 1000);
    CHECK(e.m_steps == 1000);
  }

  SUBCASE("single-step grid reduces to the final transition") {
    const TimeGrid g(0.0, 1.0, 1);
    const EstimatorConfig cfg{1, LikelihoodMode::full_gaussian, 0};
    const LogLikEstimate e = estimate_loglik(p.x0, p.x1, p.proc, analytic_bridge_proposal(p.proc, p.x0, p.x1, g), g, cfg);
    CHECK(e.value == doctest::Approx(truth).epsilon(1e-12));
    CHECK(e.ess == 1.0);
  }

  SUBCASE("reverse analytic proposals") {
    const TimeGrid g(0.0, 1.0, 100);
    const BridgeSpec spec{p.proc, p.x0, 0.0, p.x1, 1.0};
    const EstimatorConfig cfg{1000, LikelihoodMode::full_gaussian, 3};
    const LogLikEstimate e = estimate_loglik(p.x0, p.x1, p.proc, reverse_bridge_proposal(spec, g), g, cfg);
    CHECK(std::abs(e.value - truth) <= 0.1);
  }
}

TEST_CASE("estimator determinism, ordering and mode offset") {
  const Pair p = two_landmarks();
  const TimeGrid g(0.0, 1.0, 50);
  const EstimatorConfig cfg{200, LikelihoodMode::variance_profile, 11};
  const auto prop = analytic_bridge_proposal(p.proc, p.x0, p.x1, g, BridgeTransition::euler, 1);
  const LogLikEstimate a = estimate_loglik(p.x0, p.x1, p.proc, prop, g, cfg);
  const LogLikEstimate b = estimate_loglik(p.x0, p.x1, p.proc, prop, g, cfg);
  CHECK(a.value == b.value);
  CHECK(a.log_weights == b.log_weights);
  CHECK(estimate_json(a) == estimate_json(b));

  std::vector<double> shuffled = a.log_weights;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(5));
  CHECK(log_mean_exp_with_ess(shuffled).first == doctest::Approx(a.value).epsilon(1e-13));

  set_thread_count(3);
  CHECK(estimate_loglik(p.x0, p.x1, p.proc, prop, g, cfg).log_weights == a.log_weights);
  set_thread_count(1);

  std::vector<double> gaps;
  for (double v : {0.1, 0.2, 0.35, 0.5, 0.8, 1.0, 1.4, 2.0, 3.0, 5.0}) {
    const ProcessSpec pv = with_variance(p.proc, v);
    const auto pp = analytic_bridge_proposal(pv, p.x0, p.x1, g);
    const double full = estimate_loglik(p.x0, p.x1, pv, pp, g, {200, LikelihoodMode::full_gaussian, 11}).value;
    const double prof = estimate_loglik(p.x0, p.x1, pv, pp, g, {200, LikelihoodMode::variance_profile, 11}).value;
    gaps.push_back(full - prof);
  }
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / 10.0;
  CHECK(stddev(gaps) <= 1e-6 * std::abs(mean));

  const std::string json = estimate_json(a);
  CHECK(json.find("\"v\": 1.0") != std::string::npos);
  CHECK(json.find("\"mode\": \"variance_profile\"") != std::string::npos);
  CHECK(json.find("\"n_samples\": 200") < json.find("\"m_steps\""));
}

TEST_CASE("Monte Carlo error shrinks like one over root N") {
  const Pair p = two_landmarks();
  const TimeGrid g(0.0, 1.0, 50);
  const auto prop = analytic_bridge_proposal(p.proc, p.x0, p.x1, g, BridgeTransition::euler, 1);
  auto spread = [&](std::size_t n) {
    std::vector<double> values;
    for (std::uint64_t r = 0; r < 200; ++r)
      values.push_back(estimate_loglik(p.x0, p.x1, p.proc, prop, g, {n, LikelihoodMode::full_gaussian, derive_seed(99, r)}).value);
    return stddev(values);
  };
  const double ratio = spread(250) / spread(1000);
  MESSAGE("standard error ratio " << ratio);
  CHECK(ratio >= 1.6);
  CHECK(ratio <= 2.4);
}

TEST_CASE("broken proposals and empty samples are rejected") {
  const Pair p = two_landmarks(0.3);
  const TimeGrid g(0.0, 1.0, 4);
  BridgeProposal broken = analytic_bridge_proposal(p.proc, p.x0, p.x1, g);
  broken.density.drift = [](double, const Vector& x) { return Vector(Vector::Constant(x.size(), std::nan(""))); };
  CHECK_THROWS_AS(estimate_loglik(p.x0, p.x1, p.proc, broken, g, {3, LikelihoodMode::full_gaussian, 0}), DomainError);
  CHECK_THROWS_AS(estimate_loglik(p.x0, p.x1, p.proc, analytic_bridge_proposal(p.proc, p.x0, p.x1, g), g,
                                  {0, LikelihoodMode::full_gaussian, 0}),
                  DomainError);
}
