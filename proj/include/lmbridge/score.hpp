#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmbridge/network.hpp"
#include "lmbridge/sde.hpp"

namespace lmb {

/// grad_x log N(x; x_start, elapsed * Sigma0) with Sigma0 = sigma0 sigma0^T,
/// i.e. -(elapsed Sigma0)^+ (x - x_start) from a least-squares solve.
Vector analytic_bm_score(const Vector& x, const Vector& x_start, double elapsed, const Matrix& sigma0);

/// Reusable form of analytic_bm_score with the factorisation of Sigma0 cached.
class AnalyticBmScore {
 public:
  AnalyticBmScore(Vector x_start, double t_start, const Matrix& sigma0);

  /// Score at time t (elapsed = t - t_start > 0).
  Vector operator()(double t, const Vector& x) const;
  const Vector& x_start() const { return x_start_; }
  double t_start() const { return t_start_; }

 private:
  Vector x_start_;
  double t_start_;
  std::shared_ptr<const Eigen::CompleteOrthogonalDecomposition<Matrix>> cov_solver_;
};

/// Consecutive Euler pairs (Y_i -> Y_{i+1}) with everything the score loss needs.
struct ScoreBatch {
  std::vector<double> times;          // tau_i
  RowMatrix states;                   // Y_i
  RowMatrix next_states;              // Y_{i+1}
  RowMatrix drifts;                   // f(tau_i, Y_i)
  std::vector<std::shared_ptr<const Matrix>> covariances;  // Sigma(tau_i, Y_i)
  std::vector<double> dts;
  std::vector<double> variances;      // process variance of the source path
  std::size_t paths = 0;              // N in the 1/N normalisation

  std::size_t size() const { return times.size(); }
  /// v_i = Y_{i+1} - Y_i - f dt.
  RowMatrix residuals() const;
};

/// Builds a batch from forward paths; pairs with tau_i < min_time are skipped.
ScoreBatch make_score_batch(const std::vector<PathSample>& paths, const std::vector<ProcessSpec>& processes,
                            double min_time);

/// (1/N) sum_items dt (p^T (dt Sigma) p + 2 p^T v): the score-matching objective
/// with the p-independent Sigma^{-1} term dropped. `outputs` row k is p for item k.
/// When `grad` is given it receives dLoss/dp with the same layout.
double stable_score_loss(const RowMatrix& outputs, const ScoreBatch& batch, RowMatrix* grad = nullptr);

/// Transformer-style embedding: (sin(value / 10000^{2k/dim}), cos(...)) pairs.
Vector sinusoidal_embed(double value, Index dim);

/// Trained approximation of grad log p(x_t | x_start).
struct ScoreModel {
  ScoreNetwork network;
  double t0 = 0.0;
  double t1 = 1.0;
  double log_v_min = 0.0;
  double log_v_max = 0.0;
  /// Training step: the network at time tau approximates the score at tau + time_shift.
  double time_shift = 0.0;
  Vector x_start;
  std::string fingerprint;

  Index state_dim() const { return network.architecture().output_dim; }
  /// (log v - log v_min) / (log v_max - log v_min), 0 for a degenerate range.
  double normalised_log_variance(double v) const;
  Vector embedding(double v) const;
};

/// Raw network evaluation at (t, x) conditioned on variance v.
Vector score_forward(const ScoreModel& model, double t, const Vector& x, double v);

/// Batched evaluation; row k of `states` at times[k] with variances[k].
RowMatrix score_forward_batch(const ScoreModel& model, std::span<const double> times, const RowMatrix& states,
                              std::span<const double> variances);

/// Score at time t as learned by the model (accounts for time_shift).
Vector learned_score(const ScoreModel& model, double t, const Vector& x, double v);

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t paths_per_batch = 16;
  double learning_rate = 1e-3;
  /// Cosine decay from learning_rate to learning_rate * final_learning_rate_factor.
  double final_learning_rate_factor = 1.0;
  std::uint64_t seed = 0;
  /// Pairs starting before t0 + guard_band are excluded; negative means 2 dt.
  double guard_band = -1.0;
  std::vector<Index> widths{256, 128, 64};
  Index embed_dim = 32;
  /// Log-uniform range of variances seen during training; empty uses the process variance.
  std::optional<std::pair<double, double>> variance_range;
  std::size_t validation_paths = 64;
  std::size_t validation_every = 25;

  /// Canonical text form, hashed into the checkpoint fingerprint.
  std::string describe() const;
};

struct TrainingRecord {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  // NaN when not evaluated at this iteration
};

struct TrainingResult {
  ScoreModel model;
  std::vector<TrainingRecord> log;
  std::size_t best_iteration = 0;
  double best_validation_loss = 0.0;
};

/// Stochastic score matching on forward paths of `process` started at x_start.
/// Throws TrainingError when the loss becomes non-finite.
TrainingResult train_score(const ProcessSpec& process, const Vector& x_start, const TimeGrid& grid,
                           const TrainConfig& config,
                           const std::function<void(const TrainingRecord&)>& on_record = {});

/// CSV: iteration,train_loss,validation_loss.
std::string training_log_csv(const std::vector<TrainingRecord>& log);

/// JSON checkpoint with architecture descriptor and training fingerprint.
void save_score_model(const ScoreModel& model, const std::filesystem::path& path);
ScoreModel load_score_model(const std::filesystem::path& path);
std::string score_model_json(const ScoreModel& model);
ScoreModel parse_score_model_json(const std::string& text);

}  // namespace lmb
