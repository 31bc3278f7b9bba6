#include "lmbridge/score.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lmbridge/error.hpp"
#include "lmbridge/parallel.hpp"
#include "text_io.hpp"

namespace lmb {

Vector analytic_bm_score(const Vector& x, const Vector& x_start, double elapsed, const Matrix& sigma0) {
  if (!(elapsed > 0.0)) throw DomainError("analytic_bm_score: elapsed time must be positive");
  if (x.size() != x_start.size() || sigma0.rows() != x.size() || sigma0.cols() != x.size())
    throw DomainError("analytic_bm_score: dimension mismatch");
  const Matrix cov = elapsed * sigma0 * sigma0.transpose();
  return -cov.completeOrthogonalDecomposition().solve(x - x_start);
}

AnalyticBmScore::AnalyticBmScore(Vector x_start, double t_start, const Matrix& sigma0)
    : x_start_(std::move(x_start)), t_start_(t_start) {
  if (sigma0.rows() != x_start_.size() || sigma0.cols() != x_start_.size())
    throw DomainError("AnalyticBmScore: sigma0 does not match the state dimension");
  cov_solver_ = std::make_shared<const Eigen::CompleteOrthogonalDecomposition<Matrix>>(
      Matrix(sigma0 * sigma0.transpose()));
}

Vector AnalyticBmScore::operator()(double t, const Vector& x) const {
  const double elapsed = t - t_start_;
  if (!(elapsed > 0.0)) throw DomainError("analytic score: elapsed time must be positive");
  return -cov_solver_->solve(x - x_start_) / elapsed;
}

RowMatrix ScoreBatch::residuals() const {
  RowMatrix v = next_states - states;
  for (Index k = 0; k < v.rows(); ++k) v.row(k) -= drifts.row(k) * dts[static_cast<std::size_t>(k)];
  return v;
}

ScoreBatch make_score_batch(const std::vector<PathSample>& paths, const std::vector<ProcessSpec>& processes,
                            double min_time) {
  if (paths.size() != processes.size()) throw DomainError("make_score_batch: one process per path required");
  if (paths.empty()) throw DomainError("make_score_batch: no paths");
  const Index dim = paths.front().states.cols();

  std::size_t items = 0;
  for (const auto& path : paths) {
    if (path.states.cols() != dim) throw DomainError("make_score_batch: paths differ in dimension");
    for (Index r = 0; r + 1 < path.states.rows(); ++r)
      if (path.time(r) >= min_time) ++items;
  }

  ScoreBatch batch;
  batch.paths = paths.size();
  batch.states.resize(static_cast<Index>(items), dim);
  batch.next_states.resize(static_cast<Index>(items), dim);
  batch.drifts.resize(static_cast<Index>(items), dim);
  batch.times.reserve(items);
  batch.dts.reserve(items);
  batch.covariances.reserve(items);
  batch.variances.reserve(items);

  Index k = 0;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const PathSample& path = paths[p];
    const ProcessSpec& proc = processes[p];
    std::shared_ptr<const Matrix> shared_cov;
    if (proc.has_constant_diffusion())
      shared_cov = std::make_shared<const Matrix>(*proc.constant_sigma * proc.constant_sigma->transpose());
    const double dt = path.grid.dt();
    for (Index r = 0; r + 1 < path.states.rows(); ++r) {
      const double t = path.time(r);
      if (t < min_time) continue;
      const Vector y = path.states.row(r).transpose();
      batch.states.row(k) = y.transpose();
      batch.next_states.row(k) = path.states.row(r + 1);
      batch.drifts.row(k) = proc.drift_at(t, y).transpose();
      if (shared_cov) {
        batch.covariances.push_back(shared_cov);
      } else {
        const Matrix sigma = proc.diffusion_at(t, y);
        batch.covariances.push_back(std::make_shared<const Matrix>(sigma * sigma.transpose()));
      }
      batch.times.push_back(t);
      batch.dts.push_back(dt);
      batch.variances.push_back(proc.kernel.variance);
      ++k;
    }
  }
  return batch;
}

double stable_score_loss(const RowMatrix& outputs, const ScoreBatch& batch, RowMatrix* grad) {
  if (batch.size() == 0 || batch.paths == 0) throw DomainError("stable_score_loss: empty batch");
  if (outputs.rows() != static_cast<Index>(batch.size()) || outputs.cols() != batch.states.cols())
    throw DomainError("stable_score_loss: outputs do not match the batch");
  const RowMatrix v = batch.residuals();
  const double inv_n = 1.0 / static_cast<double>(batch.paths);
  if (grad) grad->resize(outputs.rows(), outputs.cols());

  double loss = 0.0;
  for (Index k = 0; k < outputs.rows(); ++k) {
    const double dt = batch.dts[static_cast<std::size_t>(k)];
    const Vector p = outputs.row(k).transpose();
    const Vector sigma_p = dt * (*batch.covariances[static_cast<std::size_t>(k)] * p);
    const Vector vk = v.row(k).transpose();
    loss += dt * (p.dot(sigma_p) + 2.0 * p.dot(vk));
    if (grad) grad->row(k) = (inv_n * dt * 2.0 * (sigma_p + vk)).transpose();
  }
  return loss * inv_n;
}

Vector sinusoidal_embed(double value, Index dim) {
  if (dim < 2 || dim % 2 != 0) throw DomainError("sinusoidal_embed: dimension must be even and >= 2");
  Vector out(dim);
  for (Index k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
    out(2 * k) = std::sin(value * freq);
    out(2 * k + 1) = std::cos(value * freq);
  }
  return out;
}

double ScoreModel::normalised_log_variance(double v) const {
  if (!(v > 0.0)) throw DomainError("score model: variance must be positive");
  const double span = log_v_max - log_v_min;
  if (!(span > 0.0)) return 0.0;
  return (std::log(v) - log_v_min) / span;
}

Vector ScoreModel::embedding(double v) const {
  return sinusoidal_embed(normalised_log_variance(v), network.architecture().embed_dim);
}

namespace {

Eigen::MatrixXd network_inputs(const ScoreModel& model, std::span<const double> times, const RowMatrix& states) {
  const Index dim = model.state_dim();
  Eigen::MatrixXd input(dim + 1, states.rows());
  input.topRows(dim) = states.transpose();
  const double span = model.t1 - model.t0;
  for (Index k = 0; k < states.rows(); ++k) input(dim, k) = (times[static_cast<std::size_t>(k)] - model.t0) / span;
  return input;
}

Eigen::MatrixXd embeddings(const ScoreModel& model, std::span<const double> variances) {
  const Index e = model.network.architecture().embed_dim;
  bool shared = true;
  for (double v : variances) shared = shared && v == variances.front();
  if (shared) return model.embedding(variances.front());
  Eigen::MatrixXd out(e, static_cast<Index>(variances.size()));
  for (std::size_t k = 0; k < variances.size(); ++k) out.col(static_cast<Index>(k)) = model.embedding(variances[k]);
  return out;
}

}  // namespace

RowMatrix score_forward_batch(const ScoreModel& model, std::span<const double> times, const RowMatrix& states,
                              std::span<const double> variances) {
  if (states.cols() != model.state_dim()) throw DomainError("score_forward: state dimension does not match the model");
  if (times.size() != static_cast<std::size_t>(states.rows()) || variances.size() != times.size())
    throw DomainError("score_forward: batch sizes differ");
  if (states.rows() == 0) return RowMatrix(0, model.state_dim());
  if (!states.allFinite()) throw DomainError("score_forward: non-finite state");
  for (double t : times)
    if (!std::isfinite(t)) throw DomainError("score_forward: non-finite time");
  return model.network.forward(network_inputs(model, times, states), embeddings(model, variances)).transpose();
}

Vector score_forward(const ScoreModel& model, double t, const Vector& x, double v) {
  const double times[] = {t};
  const double vars[] = {v};
  RowMatrix state = x.transpose();
  return score_forward_batch(model, times, state, vars).row(0).transpose();
}

Vector learned_score(const ScoreModel& model, double t, const Vector& x, double v) {
  return score_forward(model, t - model.time_shift, x, v);
}

std::string TrainConfig::describe() const {
  std::ostringstream out;
  out << "iterations=" << iterations << ";paths_per_batch=" << paths_per_batch
      << ";learning_rate=" << detail::format_number(learning_rate)
      << ";final_learning_rate_factor=" << detail::format_number(final_learning_rate_factor) << ";seed=" << seed
      << ";guard_band=" << detail::format_number(guard_band) << ";widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) out << (i ? "," : "") << widths[i];
  out << ";embed_dim=" << embed_dim;
  if (variance_range)
    out << ";variance_range=" << detail::format_number(variance_range->first) << ","
        << detail::format_number(variance_range->second);
  out << ";validation_paths=" << validation_paths << ";validation_every=" << validation_every;
  return out.str();
}

namespace {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct BatchSampler {
  const ProcessSpec& process;
  const Vector& x_start;
  const TimeGrid& grid;
  const TrainConfig& config;
  double min_time;

  ScoreBatch operator()(std::uint64_t seed, std::size_t paths) const {
    std::vector<PathSample> samples(paths);
    std::vector<ProcessSpec> procs(paths);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t p = 0; p < paths; ++p) {
      if (config.variance_range) {
        const double lo = std::log(config.variance_range->first);
        const double hi = std::log(config.variance_range->second);
        procs[p] = with_variance(process, std::exp(lo + (hi - lo) * unit(rng)));
      } else {
        procs[p] = process;
      }
    }
    parallel_for(paths, [&](std::size_t p) {
      samples[p] = euler_maruyama(procs[p], x_start, grid,
                                  sample_noise(derive_seed(seed, p), grid, x_start.size()));
    });
    return make_score_batch(samples, procs, min_time);
  }
};

double batch_loss(const ScoreModel& model, const ScoreBatch& batch) {
  const RowMatrix out = score_forward_batch(model, batch.times, batch.next_states, batch.variances);
  return stable_score_loss(out, batch);
}

}  // namespace

TrainingResult train_score(const ProcessSpec& process, const Vector& x_start, const TimeGrid& grid,
                           const TrainConfig& config, const std::function<void(const TrainingRecord&)>& on_record) {
  const Index dim = x_start.size();
  if (process.state_dim() != dim) throw DomainError("train_score: x_start does not match the process");
  if (config.paths_per_batch < 1) throw DomainError("train_score: paths_per_batch must be positive");
  if (config.variance_range &&
      !(config.variance_range->first > 0.0 && config.variance_range->second >= config.variance_range->first))
    throw DomainError("train_score: invalid variance range");

  const double guard = config.guard_band < 0.0 ? 2.0 * grid.dt() : config.guard_band;
  const double min_time = grid.t0() + guard - 1e-12 * (grid.t1() - grid.t0());
  if (!(min_time < grid.t1() - grid.dt() * 0.5)) throw DomainError("train_score: guard band leaves no training pairs");

  ScoreModel model;
  model.network = ScoreNetwork({dim + 1, dim, config.widths, config.embed_dim}, derive_seed(config.seed, 0));
  model.t0 = grid.t0();
  model.t1 = grid.t1();
  const double v_lo = config.variance_range ? config.variance_range->first : process.kernel.variance;
  const double v_hi = config.variance_range ? config.variance_range->second : process.kernel.variance;
  model.log_v_min = std::log(v_lo);
  model.log_v_max = std::log(v_hi);
  model.time_shift = grid.dt();
  model.x_start = x_start;
  std::ostringstream fp;
  fp << config.describe() << ";process=" << to_string(process.kind)
     << ";lengthscale=" << detail::format_number(process.kernel.lengthscale) << ";t0=" << detail::format_number(grid.t0())
     << ";t1=" << detail::format_number(grid.t1()) << ";steps=" << grid.steps();
  model.fingerprint = fnv1a_hex(fp.str());

  const BatchSampler sampler{process, x_start, grid, config, min_time};
  const ScoreBatch validation =
      sampler(derive_seed(config.seed, 0xffff'ffffULL), std::max<std::size_t>(1, config.validation_paths));

  TrainingResult result;
  result.best_validation_loss = batch_loss(model, validation);
  result.best_iteration = 0;
  result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), result.best_validation_loss});
  if (on_record) on_record(result.log.back());
  auto best_blocks = model.network.blocks();

  Adam adam(model.network.blocks(), config.learning_rate);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    if (config.final_learning_rate_factor != 1.0 && config.iterations > 1) {
      const double progress = static_cast<double>(it - 1) / static_cast<double>(config.iterations - 1);
      const double f = config.final_learning_rate_factor;
      adam.set_learning_rate(config.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    }
    const ScoreBatch batch = sampler(derive_seed(config.seed, it), config.paths_per_batch);
    Eigen::MatrixXd input = network_inputs(model, batch.times, batch.next_states);
    Eigen::MatrixXd emb = embeddings(model, batch.variances);
    ScoreNetwork::Tape tape;
    const RowMatrix out = model.network.forward(input, emb, tape).transpose();
    RowMatrix grad;
    const double loss = stable_score_loss(out, batch, &grad);
    if (!std::isfinite(loss)) throw TrainingError(it, "train_score: loss is not finite");

    auto grads = model.network.zero_gradients();
    model.network.backward(tape, grad.transpose(), grads);
    adam.step(model.network.blocks(), grads);
    if (!model.network.all_finite()) throw TrainingError(it, "train_score: parameters became non-finite");

    TrainingRecord record{it, loss, std::numeric_limits<double>::quiet_NaN()};
    if (it % std::max<std::size_t>(1, config.validation_every) == 0 || it == config.iterations) {
      record.validation_loss = batch_loss(model, validation);
      if (!std::isfinite(record.validation_loss)) throw TrainingError(it, "train_score: validation loss is not finite");
      if (record.validation_loss < result.best_validation_loss) {
        result.best_validation_loss = record.validation_loss;
        result.best_iteration = it;
        best_blocks = model.network.blocks();
      }
    }
    result.log.push_back(record);
    if (on_record) on_record(record);
  }

  model.network.blocks() = std::move(best_blocks);
  result.model = std::move(model);
  return result;
}

std::string training_log_csv(const std::vector<TrainingRecord>& log) {
  std::ostringstream out;
  out << "iteration,train_loss,validation_loss\n";
  for (const auto& r : log) {
    out << r.iteration << ',' << (std::isnan(r.train_loss) ? "" : detail::format_number(r.train_loss)) << ','
        << (std::isnan(r.validation_loss) ? "" : detail::format_number(r.validation_loss)) << '\n';
  }
  return out.str();
}

std::string score_model_json(const ScoreModel& model) {
  using nlohmann::ordered_json;
  const auto& arch = model.network.architecture();
  ordered_json j;
  j["format"] = "lmbridge-score-model";
  j["format_version"] = 1;
  j["architecture"] = {{"input_dim", arch.input_dim},
                       {"output_dim", arch.output_dim},
                       {"down_widths", arch.down_widths},
                       {"embed_dim", arch.embed_dim},
                       {"activation", "silu"},
                       {"conditioning", "scale_shift_on_down_layers"}};
  j["normalisation"] = {{"t0", model.t0}, {"t1", model.t1}, {"log_v_min", model.log_v_min}, {"log_v_max", model.log_v_max}};
  j["time_shift"] = model.time_shift;
  j["x_start"] = std::vector<double>(model.x_start.data(), model.x_start.data() + model.x_start.size());
  j["fingerprint"] = model.fingerprint;
  ordered_json blocks = ordered_json::array();
  for (const auto& b : model.network.blocks()) {
    std::vector<double> data(b.value.data(), b.value.data() + b.value.size());  // column-major
    blocks.push_back({{"name", b.name}, {"rows", b.value.rows()}, {"cols", b.value.cols()}, {"data", data}});
  }
  j["parameters"] = std::move(blocks);
  return j.dump(1);
}

ScoreModel parse_score_model_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "lmbridge-score-model" || j.at("format_version") != 1)
      throw IoError("not an lmbridge score model checkpoint");
    NetworkArchitecture arch;
    const auto& a = j.at("architecture");
    arch.input_dim = a.at("input_dim").get<Index>();
    arch.output_dim = a.at("output_dim").get<Index>();
    arch.down_widths = a.at("down_widths").get<std::vector<Index>>();
    arch.embed_dim = a.at("embed_dim").get<Index>();
    if (a.at("activation") != "silu") throw IoError("unsupported activation in checkpoint");
    if (arch.input_dim != arch.output_dim + 1) throw IoError("checkpoint input_dim must be output_dim + 1");

    std::vector<ScoreNetwork::Block> blocks;
    for (const auto& b : j.at("parameters")) {
      const auto rows = b.at("rows").get<Index>();
      const auto cols = b.at("cols").get<Index>();
      const auto data = b.at("data").get<std::vector<double>>();
      if (static_cast<Index>(data.size()) != rows * cols)
        throw IoError("checkpoint block '" + b.at("name").get<std::string>() + "' has the wrong size");
      blocks.push_back({b.at("name").get<std::string>(), Eigen::Map<const Matrix>(data.data(), rows, cols)});
    }

    ScoreModel model;
    model.network = ScoreNetwork::from_blocks(arch, std::move(blocks));
    const auto& n = j.at("normalisation");
    model.t0 = n.at("t0").get<double>();
    model.t1 = n.at("t1").get<double>();
    model.log_v_min = n.at("log_v_min").get<double>();
    model.log_v_max = n.at("log_v_max").get<double>();
    model.time_shift = j.at("time_shift").get<double>();
    const auto xs = j.at("x_start").get<std::vector<double>>();
    if (static_cast<Index>(xs.size()) != arch.output_dim) throw IoError("checkpoint x_start has the wrong dimension");
    model.x_start = Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
    model.fingerprint = j.at("fingerprint").get<std::string>();
    if (!(model.t1 > model.t0)) throw IoError("checkpoint has an invalid time range");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed score model checkpoint: ") + e.what());
  } catch (const DomainError& e) {
    throw IoError(std::string("invalid score model checkpoint: ") + e.what());
  }
}

void save_score_model(const ScoreModel& model, const std::filesystem::path& path) {
  detail::write_text_file(path, score_model_json(model));
}

ScoreModel load_score_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_score_model_json(text.str());
}

}  // namespace lmb
