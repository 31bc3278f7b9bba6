#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "lmbridge/lmbridge.h"

namespace fs = std::filesystem;
using lmbcli::Config;
using lmbcli::ConfigError;

namespace {

class CliError : public std::runtime_error {
 public:
  CliError(lmb_status status, const std::string& what) : std::runtime_error(what), status(status) {}
  lmb_status status;
};

void check(lmb_status status) {
  if (status != LMB_OK) throw CliError(status, lmb_last_error());
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Shape = std::unique_ptr<lmb_shape, Deleter<lmb_shape, lmb_shape_free>>;
using Process = std::unique_ptr<lmb_process, Deleter<lmb_process, lmb_process_free>>;
using Model = std::unique_ptr<lmb_model, Deleter<lmb_model, lmb_model_free>>;
using Path = std::unique_ptr<lmb_path, Deleter<lmb_path, lmb_path_free>>;
using Sweep = std::unique_ptr<lmb_sweep, Deleter<lmb_sweep, lmb_sweep_free>>;
using Trajectory = std::unique_ptr<lmb_mean_trajectory, Deleter<lmb_mean_trajectory, lmb_mean_trajectory_free>>;

std::string numbered(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%03zu.csv", i);
  return stem + buf;
}

void write_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw CliError(LMB_ERR_IO, "cannot write '" + file.string() + "'");
}

struct Run {
  Config& cfg;
  fs::path out;
  std::uint64_t seed = 0;
  lmb_mode mode = LMB_MODE_VARIANCE_PROFILE;
  std::unique_ptr<lmb_model, Deleter<lmb_model, lmb_model_free>> score_model;

  std::string file(const std::string& name) const { return (out / name).string(); }
};

Shape load_shape(Config& cfg, const std::string& section) {
  lmb_shape* s = nullptr;
  if (cfg.has(section, "csv")) {
    check(lmb_shape_from_csv(cfg.get_path(section, "csv").c_str(), &s));
  } else if (cfg.has(section, "points")) {
    const auto dim = cfg.get_uint(section, "dim", 2);
    const auto flat = cfg.get_double_list(section, "points");
    if (dim == 0 || flat.size() % dim != 0)
      throw ConfigError("[" + section + "] points: length is not a multiple of dim");
    check(lmb_shape_from_points(flat.data(), flat.size() / dim, dim, &s));
  } else if (cfg.has(section, "synth")) {
    const std::string kind = cfg.get_string(section, "synth");
    lmb_synth_params p;
    lmb_synth_params_defaults(&p);
    const auto n = cfg.get_uint(section, "landmarks");
    const auto shape_seed = cfg.get_uint(section, "seed");
    p.radius = cfg.get_double(section, "radius", p.radius);
    p.semi_axis_x = cfg.get_double(section, "semi_axis_x", p.semi_axis_x);
    p.semi_axis_y = cfg.get_double(section, "semi_axis_y", p.semi_axis_y);
    p.perturbation = cfg.get_double(section, "perturbation", p.perturbation);
    p.harmonics = cfg.get_uint(section, "harmonics", p.harmonics);
    check(lmb_shape_synth(kind.c_str(), n, &p, shape_seed, &s));
  } else {
    throw ConfigError("[" + section + "] needs one of csv, points or synth");
  }
  return Shape(s);
}

Process make_process(Config& cfg, const lmb_shape* frozen) {
  const std::string kind = cfg.get_string("process", "kind", "frozen_brownian");
  const lmb_kernel kernel{cfg.get_double("process", "variance", 1.0), cfg.get_double("process", "lengthscale", 1.0)};
  lmb_process* p = nullptr;
  if (kind == "frozen_brownian")
    check(lmb_process_frozen_brownian(kernel, frozen, &p));
  else if (kind == "kunita")
    check(lmb_process_kunita(kernel, lmb_shape_size(frozen), lmb_shape_dim(frozen), &p));
  else
    throw ConfigError("[process] kind: expected frozen_brownian or kunita, got '" + kind + "'");
  return Process(p);
}

lmb_grid make_grid(Config& cfg) {
  return {cfg.get_double("grid", "t0", 0.0), cfg.get_double("grid", "t1", 1.0), cfg.get_uint("grid", "steps", 100)};
}

lmb_bridge_config make_bridge(Run& run) {
  Config& cfg = run.cfg;
  lmb_bridge_config b;
  lmb_bridge_config_defaults(&b);
  const std::string proposal = cfg.get_string("bridge", "proposal", "analytic_exact");
  if (proposal == "analytic_exact")
    b.proposal = LMB_PROPOSAL_ANALYTIC_EXACT;
  else if (proposal == "analytic_euler")
    b.proposal = LMB_PROPOSAL_ANALYTIC_EULER;
  else if (proposal == "reverse")
    b.proposal = LMB_PROPOSAL_REVERSE;
  else
    throw ConfigError("[bridge] proposal: expected analytic_exact, analytic_euler or reverse");
  if (b.proposal == LMB_PROPOSAL_REVERSE && cfg.has("bridge", "score_model")) {
    lmb_model* m = nullptr;
    check(lmb_model_load(cfg.get_path("bridge", "score_model").c_str(), &m));
    run.score_model.reset(m);
    b.model = m;
  }
  b.include_divergence = cfg.get_bool("bridge", "include_divergence", true) ? 1 : 0;
  b.guard_steps = cfg.get_uint("bridge", "guard_steps", 0);
  return b;
}

lmb_estimator_config make_estimator(Run& run) {
  lmb_estimator_config e;
  lmb_estimator_config_defaults(&e);
  e.samples = run.cfg.get_uint("sampler", "samples", 1000);
  e.mode = run.mode;
  e.seed = run.seed;
  e.bridge = make_bridge(run);
  return e;
}

lmb_optimizer_config make_optimizer(Run& run) {
  Config& cfg = run.cfg;
  lmb_optimizer_config o;
  lmb_optimizer_config_defaults(&o);
  o.max_iterations = cfg.get_uint("optimizer", "max_iterations", o.max_iterations);
  o.tolerance = cfg.get_double("optimizer", "tolerance", o.tolerance);
  o.initial_step = cfg.get_double("optimizer", "initial_step", o.initial_step);
  o.shrink = cfg.get_double("optimizer", "shrink", o.shrink);
  o.sufficient_increase = cfg.get_double("optimizer", "sufficient_increase", o.sufficient_increase);
  o.fresh_noise = cfg.get_bool("optimizer", "fresh_noise", false) ? 1 : 0;
  o.seed = run.seed;
  return o;
}

void cmd_simulate(Run& run) {
  const Shape start = load_shape(run.cfg, "start");
  const Process proc = make_process(run.cfg, run.cfg.has_section("frozen") ? load_shape(run.cfg, "frozen").get() : start.get());
  const lmb_grid grid = make_grid(run.cfg);
  const auto paths = run.cfg.get_uint("simulate", "paths", 1);
  for (std::size_t i = 0; i < paths; ++i) {
    lmb_path* p = nullptr;
    check(lmb_simulate(proc.get(), start.get(), grid, lmb_derive_seed(run.seed, i), &p));
    Path path(p);
    check(lmb_path_write_csv(path.get(), run.file(numbered("path", i)).c_str()));
  }
}

void cmd_train_score(Run& run) {
  Config& cfg = run.cfg;
  const Shape start = load_shape(cfg, "start");
  const Process proc = make_process(cfg, cfg.has_section("frozen") ? load_shape(cfg, "frozen").get() : start.get());
  const lmb_grid grid = make_grid(cfg);
  lmb_train_config t;
  lmb_train_config_defaults(&t);
  t.iterations = cfg.get_uint("train", "iterations", t.iterations);
  t.paths_per_batch = cfg.get_uint("train", "paths_per_batch", t.paths_per_batch);
  t.learning_rate = cfg.get_double("train", "learning_rate", t.learning_rate);
  t.final_learning_rate_factor = cfg.get_double("train", "final_learning_rate_factor", t.final_learning_rate_factor);
  t.seed = run.seed;
  t.guard_band = cfg.get_double("train", "guard_band", t.guard_band);
  std::vector<double> widths(t.widths, t.widths + t.width_count);
  widths = cfg.get_double_list("train", "widths", widths);
  if (widths.empty() || widths.size() > 8) throw ConfigError("[train] widths: between 1 and 8 layers");
  t.width_count = widths.size();
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (!(widths[i] >= 1) || widths[i] != static_cast<double>(static_cast<std::size_t>(widths[i])))
      throw ConfigError("[train] widths: positive integers expected");
    t.widths[i] = static_cast<std::size_t>(widths[i]);
  }
  t.embed_dim = cfg.get_uint("train", "embed_dim", t.embed_dim);
  t.variance_min = cfg.get_double("train", "variance_min", 0.0);
  t.variance_max = cfg.get_double("train", "variance_max", 0.0);
  t.validation_paths = cfg.get_uint("train", "validation_paths", t.validation_paths);
  t.validation_every = cfg.get_uint("train", "validation_every", t.validation_every);
  lmb_model* m = nullptr;
  check(lmb_train_score(proc.get(), start.get(), grid, &t, &m));
  Model model(m);
  check(lmb_model_save(model.get(), run.file("model.json").c_str()));
  check(lmb_model_write_training_log(model.get(), run.file("training_log.csv").c_str()));
}

void cmd_sample_bridge(Run& run) {
  Config& cfg = run.cfg;
  const Shape start = load_shape(cfg, "start");
  const Shape end = load_shape(cfg, "end");
  const Process proc = make_process(cfg, cfg.has_section("frozen") ? load_shape(cfg, "frozen").get() : start.get());
  const lmb_grid grid = make_grid(cfg);
  const lmb_bridge_config bridge = make_bridge(run);
  const auto paths = cfg.get_uint("bridge", "paths", 1);
  for (std::size_t i = 0; i < paths; ++i) {
    lmb_path* p = nullptr;
    check(lmb_sample_bridge(proc.get(), start.get(), end.get(), grid, &bridge, lmb_derive_seed(run.seed, i), &p));
    Path path(p);
    check(lmb_path_write_csv(path.get(), run.file(numbered("bridge", i)).c_str()));
  }
}

std::vector<double> variance_grid(Config& cfg) {
  if (cfg.has("sweep", "values")) return cfg.get_double_list("sweep", "values");
  const double lo = cfg.get_double("sweep", "v_min");
  const double hi = cfg.get_double("sweep", "v_max");
  const auto n = cfg.get_uint("sweep", "points", 25);
  const std::string spacing = cfg.get_string("sweep", "spacing", "log");
  if (n == 0) throw ConfigError("[sweep] points must be positive");
  if (!(lo > 0.0) || !(hi >= lo)) throw ConfigError("[sweep] needs 0 < v_min <= v_max");
  if (spacing != "log" && spacing != "linear") throw ConfigError("[sweep] spacing: expected log or linear");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    v[i] = spacing == "log" ? std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo))) : lo + f * (hi - lo);
  }
  return v;
}

void cmd_loglik_sweep(Run& run) {
  Config& cfg = run.cfg;
  const Shape start = load_shape(cfg, "start");
  const Shape end = load_shape(cfg, "end");
  const Process proc = make_process(cfg, cfg.has_section("frozen") ? load_shape(cfg, "frozen").get() : start.get());
  const lmb_grid grid = make_grid(cfg);
  const lmb_estimator_config est = make_estimator(run);
  const std::vector<double> vs = variance_grid(cfg);
  lmb_sweep* s = nullptr;
  check(lmb_loglik_sweep(proc.get(), start.get(), end.get(), grid, vs.data(), vs.size(), &est, &s));
  Sweep sweep(s);
  check(lmb_sweep_write_csv(sweep.get(), run.file("sweep.csv").c_str()));
  if (cfg.get_string("process", "kind", "frozen_brownian") == "frozen_brownian") {
    std::string csv = "v,loglik\n";
    for (double v : vs) {
      lmb_process* pv = nullptr;
      check(lmb_process_with_variance(proc.get(), v, &pv));
      Process scaled(pv);
      double value = 0.0;
      check(lmb_brownian_loglik(scaled.get(), start.get(), end.get(), grid.t1 - grid.t0, &value));
      csv += lmbcli::format_double(v) + "," + lmbcli::format_double(value) + "\n";
    }
    write_file(run.out / "analytic.csv", csv);
  }
}

void cmd_infer_variance(Run& run) {
  Config& cfg = run.cfg;
  const Shape start = load_shape(cfg, "start");
  const Shape end = load_shape(cfg, "end");
  const Process proc = make_process(cfg, cfg.has_section("frozen") ? load_shape(cfg, "frozen").get() : start.get());
  const lmb_grid grid = make_grid(cfg);
  const lmb_estimator_config est = make_estimator(run);
  const lmb_optimizer_config opt = make_optimizer(run);
  const double init = cfg.get_double("optimizer", "init_variance", 1.0);
  lmb_variance_result r;
  check(lmb_infer_variance(proc.get(), start.get(), end.get(), grid, &est, &opt, init, &r));
  nlohmann::ordered_json j;
  j["variance"] = r.variance;
  j["loglik"] = r.loglik;
  j["converged"] = r.converged != 0;
  j["iterations"] = r.iterations;
  j["init_variance"] = init;
  write_file(run.out / "result.json", j.dump(2) + "\n");
  if (!r.converged) std::cerr << "lmbridge: warning: infer-variance stopped at the iteration limit\n";
}

void cmd_diffusion_mean(Run& run) {
  Config& cfg = run.cfg;
  const Shape init = load_shape(cfg, "init");
  const Process proc = make_process(cfg, cfg.has_section("frozen") ? load_shape(cfg, "frozen").get() : init.get());
  const lmb_grid grid = make_grid(cfg);
  std::vector<Shape> obs;
  if (cfg.has("observations", "files")) {
    for (const auto& f : cfg.get_path_list("observations", "files")) {
      lmb_shape* s = nullptr;
      check(lmb_shape_from_csv(f.c_str(), &s));
      obs.emplace_back(s);
    }
  } else {
    // Endpoints of forward simulations from [start].
    const Shape start = load_shape(cfg, "start");
    const auto count = cfg.get_uint("observations", "count");
    const std::size_t n = lmb_shape_size(start.get());
    const std::size_t d = lmb_shape_dim(start.get());
    for (std::size_t i = 0; i < count; ++i) {
      lmb_path* p = nullptr;
      check(lmb_simulate(proc.get(), start.get(), grid, lmb_derive_seed(lmb_derive_seed(run.seed, 0x0b5), i), &p));
      Path path(p);
      std::vector<double> states(lmb_path_rows(path.get()) * n * d);
      check(lmb_path_states(path.get(), states.data(), states.size()));
      lmb_shape* s = nullptr;
      check(lmb_shape_from_points(states.data() + states.size() - n * d, n, d, &s));
      obs.emplace_back(s);
    }
  }
  if (obs.empty()) throw ConfigError("[observations] no observations");
  for (std::size_t i = 0; i < obs.size(); ++i)
    check(lmb_shape_write_csv(obs[i].get(), run.file(numbered("observation", i)).c_str()));
  const lmb_estimator_config est = make_estimator(run);
  const lmb_optimizer_config opt = make_optimizer(run);
  std::vector<const lmb_shape*> raw;
  for (const auto& s : obs) raw.push_back(s.get());
  lmb_mean_trajectory* t = nullptr;
  check(lmb_diffusion_mean(proc.get(), raw.data(), raw.size(), init.get(), grid, &est, &opt, &t));
  Trajectory traj(t);
  check(lmb_mean_trajectory_write_csv(traj.get(), run.file("trajectory.csv").c_str()));
  if (!lmb_mean_trajectory_converged(traj.get()))
    std::cerr << "lmbridge: warning: diffusion-mean stopped at the iteration limit\n";
}

void cmd_align(Run& run) {
  Config& cfg = run.cfg;
  lmb_shape* r = nullptr;
  check(lmb_shape_from_csv(cfg.get_path("align", "reference").c_str(), &r));
  const Shape reference(r);
  std::string csv = "index,residual\n";
  const auto targets = cfg.get_path_list("align", "targets");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    lmb_shape* t = nullptr;
    check(lmb_shape_from_csv(targets[i].c_str(), &t));
    const Shape target(t);
    lmb_shape* a = nullptr;
    double residual = 0.0;
    check(lmb_shape_align(reference.get(), target.get(), &a, &residual));
    const Shape aligned(a);
    check(lmb_shape_write_csv(aligned.get(), run.file(numbered("aligned", i)).c_str()));
    csv += std::to_string(i) + "," + lmbcli::format_double(residual) + "\n";
  }
  write_file(run.out / "residuals.csv", csv);
}

void cmd_resample(Run& run) {
  lmb_shape* s = nullptr;
  check(lmb_shape_resample(run.cfg.get_path("resample", "outline").c_str(), run.cfg.get_uint("resample", "landmarks"),
                           &s));
  const Shape shape(s);
  check(lmb_shape_write_csv(shape.get(), run.file("landmarks.csv").c_str()));
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> mode;
};

int execute(const std::string& name, const std::function<void(Run&)>& command, const Options& opt) {
  try {
    Config cfg = Config::load(opt.config);
    if (opt.seed) cfg.set("run", "seed", std::to_string(*opt.seed));
    if (opt.mode) cfg.set("run", "mode", *opt.mode);
    const fs::path out(opt.out);
    fs::create_directories(out);
    Run run{cfg, out, 0, LMB_MODE_VARIANCE_PROFILE, {}};
    run.seed = cfg.get_uint("run", "seed");
    const std::string mode = cfg.get_string("run", "mode", "variance_profile");
    if (mode == "full_gaussian")
      run.mode = LMB_MODE_FULL_GAUSSIAN;
    else if (mode == "variance_profile")
      run.mode = LMB_MODE_VARIANCE_PROFILE;
    else
      throw ConfigError("[run] mode: expected full_gaussian or variance_profile");
    // Thread count never changes results, so it is not part of the resolved config.
    const unsigned threads = opt.threads ? *opt.threads : static_cast<unsigned>(cfg.has("run", "threads") ? cfg.get_uint("run", "threads") : 0);
    check(lmb_set_threads(threads));
    command(run);
    write_file(out / "resolved_config.ini", cfg.resolved_ini());
    write_file(out / "VERSION", std::string(lmb_version()) + "\n");
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "lmbridge " << name << ": error [config]: " << e.what() << '\n';
    return 2;
  } catch (const CliError& e) {
    std::cerr << "lmbridge " << name << ": error [" << lmb_status_name(e.status) << "]: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "lmbridge " << name << ": error [io_error]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "lmbridge " << name << ": error [internal_error]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-bridge likelihoods and inference for landmark shapes"};
  app.set_version_flag("--version", std::string(lmb_version()));
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::pair<std::string, std::function<void(Run&)>>>> commands = {
      {"simulate", {"Forward paths to CSV", cmd_simulate}},
      {"train-score", {"Train a score model (checkpoint + loss log)", cmd_train_score}},
      {"sample-bridge", {"Bridge paths to CSV", cmd_sample_bridge}},
      {"loglik-sweep", {"Log-likelihood over a grid of variances", cmd_loglik_sweep}},
      {"infer-variance", {"Gradient-based variance estimate", cmd_infer_variance}},
      {"diffusion-mean", {"Gradient-based diffusion mean", cmd_diffusion_mean}},
      {"align", {"Procrustes-align shapes to a reference", cmd_align}},
      {"resample", {"Resample an outline to landmarks", cmd_resample}},
  };

  Options opt;
  std::string chosen;
  std::function<void(Run&)> command;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", opt.config, "INI configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory")->required();
    sub->add_option("--seed", opt.seed, "Override [run] seed");
    sub->add_option("--threads", opt.threads, "Worker thread cap (0: all cores)");
    sub->add_option("--mode", opt.mode, "Likelihood mode")->check(CLI::IsMember({"full_gaussian", "variance_profile"}));
    sub->callback([&, name = name, fn = entry.second] {
      chosen = name;
      command = fn;
    });
  }
  CLI11_PARSE(app, argc, argv);
  return execute(chosen, command, opt);
}
