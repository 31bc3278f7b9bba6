#pragma once
// Reference implementations used only by the tests. They favour the obvious
// dense formula over anything the library does (explicit inverses, determinants).

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

inline MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) { return random_matrix(rng, n, 1).col(0); }

inline MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n) {
  const MatrixXd a = random_matrix(rng, n, n);
  return a.transpose() * a + 0.1 * MatrixXd::Identity(n, n);
}

/// log N(x; mean, cov) with an explicit inverse and determinant.
inline double gaussian_log_density(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
  const VectorXd r = x - mean;
  const double quad = r.dot(cov.inverse() * r);
  return -0.5 * quad - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * kPi) - 0.5 * std::log(cov.determinant());
}

/// Central-difference gradient.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const VectorXd& a, const VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Log-likelihood of N(x1; x0, T v S) where S = unit sigma sigma^T.
inline double brownian_loglik(const VectorXd& x1, const VectorXd& x0, const MatrixXd& unit_sigma, double v, double T) {
  return gaussian_log_density(x1, x0, T * v * unit_sigma * unit_sigma.transpose());
}

}  // namespace oracle
