#pragma once

// Experiment configuration, runs, posterior summaries and posterior-predictive
// checks. All files written here are deterministic given the configuration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "niff/inference.hpp"
#include "niff/models.hpp"
#include "niff/paths.hpp"

namespace niff {

// ---------------------------------------------------------------------------
// Configuration

struct ModelConfig {
  std::string kind = "duffing";  // duffing | two_dof | bouc_wen | nes
  std::optional<double> forcing_amplitude;  // two_dof, required
  std::optional<double> forcing_frequency;  // two_dof, required
  std::size_t stories = 3;                  // bouc_wen
  std::string excitation;                   // bouc_wen ground acceleration / nes experiment 1
  std::string excitation_2;                 // nes experiment 2
  BoucWenConstants bouc_wen;
  std::vector<double> state_scale, theta_scale, y_scale;  // empty: model defaults

  bool operator==(const ModelConfig&) const = default;
};

struct DataConfig {
  std::string file;              // measured data; empty: simulate from the truth below
  std::vector<double> sigma_y;   // physical units; required with `file`
  std::vector<double> theta_true;
  std::vector<double> x_init;
  double dt = 0.01;
  std::size_t stride = 10;
  double noise = 0.05;
  std::string noise_rule = "scale";  // scale | rms
  std::uint64_t seed = 0;

  bool operator==(const DataConfig&) const = default;
};

struct PathConfig {
  std::string kind = "fourier";  // fourier | rbf | residual_net | reparam_fourier
  std::string basis = "rbf";     // residual_net only: rbf | fourier
  std::size_t modes = 20;
  double period = 0.0;
  std::size_t rbf_count = 20;
  double rbf_scale = 0.05;
  std::size_t encoder_modes = 10;
  std::vector<std::size_t> hidden_widths{10};
  std::size_t dependent_index = 0;

  bool operator==(const PathConfig&) const = default;
};

struct NsviConfig {
  std::size_t niter = 100000;
  std::size_t niter_auxi = 1;
  SampleSizes sizes;
  StepDecay lr{1e-3, 0.1, 100000, 0.0};
  std::optional<StepDecay> lr_aux;  // default: lr
  std::optional<std::size_t> partition_ramp;  // default: 2/3 of niter
  std::string w_family = "diagonal";
  std::string theta_family = "full_rank";
  std::string x0_family = "diagonal";
  double init_scale = 0.1;
  std::size_t log_every = 100;

  bool operator==(const NsviConfig&) const = default;
};

struct NpsgldConfig {
  std::size_t niter = 500000;
  std::size_t niter_auxi = 1;
  std::size_t n_t = 10;
  std::size_t n_t_aux = 10;
  std::size_t n_w_aux = 1;
  std::size_t m_y = 10;
  LangevinOptions main{{1e-4, 0.1, 250000, 1e-5}, {0.99, 250000}, 0.1, true};
  LangevinOptions aux{{1e-4, 0.1, 250000, 1e-5}, {0.99, 250000}, 0.1, true};
  std::optional<std::size_t> partition_ramp;  // default: 2/3 of niter
  std::size_t n_chains = 3;
  std::size_t burn_in = 250000;
  std::size_t thin = 100;
  std::size_t trace_every = 1000;

  bool operator==(const NpsgldConfig&) const = default;
};

struct FilterConfig {
  std::string method = "nsvi";      // nsvi | npsgld
  std::vector<double> theta;        // physical; empty: data.theta_true

  bool operator==(const FilterConfig&) const = default;
};

struct SummaryConfig {
  std::size_t grid_points = 500;
  std::size_t guide_samples = 1000;

  bool operator==(const SummaryConfig&) const = default;
};

struct PredictConfig {
  double horizon = 0.0;  // 0: the inference window
  double dt = 0.01;
  std::vector<double> x_init;  // physical; empty: data.x_init
  std::size_t max_samples = 1000;

  bool operator==(const PredictConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string algorithm = "nsvi";  // nsvi | npsgld | nsgld | filter
  double window = 20.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<double> theta_init;  // physical; empty: zeros
  double beta1 = 200.0;
  double beta2 = 1e5;
  std::string time_mode = "uniform";  // uniform | grid
  ModelConfig model;
  DataConfig data;
  PathConfig path;
  NsviConfig nsvi;
  NpsgldConfig npsgld;
  FilterConfig filter;
  SummaryConfig summary;
  PredictConfig predict;

  bool operator==(const ExperimentConfig&) const = default;
  /// Field-level checks; throws ConfigError naming the offending key.
  void validate() const;
};

/// Reads a TOML file. `[extends] base = "other.toml"` loads the base first
/// (relative to this file) and overlays this file's keys table by table.
/// File paths inside the configuration are resolved to absolute paths.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_string(const std::string& text, const std::filesystem::path& base_dir = ".");
/// Flattened TOML (no `[extends]`) that parses back to an equal config.
std::string serialize_config(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Experiment assembly

struct Experiment {
  ExperimentConfig config;
  std::shared_ptr<OdeModel> model;  // physical units
  Problem problem;                  // normalized
  Dataset data;                     // physical units
  std::optional<Trajectory> truth;  // simulated runs only
};

std::shared_ptr<OdeModel> build_model(const ModelConfig& cfg);
PathSpec build_path(const ExperimentConfig& cfg, std::size_t state_dim);
Experiment prepare(const ExperimentConfig& cfg);

NsviOptions nsvi_options(const ExperimentConfig& cfg);
NpsgldOptions npsgld_options(const ExperimentConfig& cfg, bool precondition);

// ---------------------------------------------------------------------------
// Posterior summaries

/// Sample quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

struct Band {
  std::vector<double> q05, q50, q95;
};

/// Posterior draws in physical units: one row per draw.
struct PosteriorSamples {
  std::vector<std::size_t> chain, iter;
  std::vector<double> w;      // rows of param_count(spec), normalized path coefficients
  std::vector<double> theta;  // rows of theta_dim, physical; empty for filter runs
  std::vector<double> x0;     // rows of x0_dim, physical; auxiliary initial state, may be empty
  std::size_t w_dim = 0, theta_dim = 0, x0_dim = 0;

  std::size_t size() const { return chain.size(); }
};

struct PosteriorSummary {
  std::vector<std::string> theta_names;
  std::vector<double> theta_mean, theta_sd;
  Band theta;
  std::vector<double> grid;
  std::vector<Band> states;  // physical units, one band per state over `grid`
  std::vector<double> x0_hat_mean;    // mean of x(0; w), physical
  std::vector<double> x0_chain_mean;  // mean of the auxiliary x0 draws, physical
  /// Posterior-median path RMSE per state against the simulated truth at the
  /// measurement times; empty without a truth trajectory.
  std::vector<double> state_rmse;
  std::size_t n_samples = 0;
  std::vector<std::pair<std::size_t, std::string>> failures;  // (chain, error)
};

PosteriorSummary summarize(const Experiment& exp, const PosteriorSamples& samples);

// ---------------------------------------------------------------------------
// Runs

enum class Command { Simulate, FitNsvi, FitNpsgld, Filter, Predict, Summarize };

struct FitResult {
  PosteriorSamples samples;
  std::vector<NsviTraceRow> nsvi_trace;  // theta and x0 means converted to physical units
  std::vector<std::size_t> trace_chain, trace_iter;
  std::vector<double> trace_theta;  // physical
  std::vector<std::pair<std::size_t, std::string>> failures;
  std::string error;  // non-empty when the run stopped early
};

/// Runs FitNsvi, FitNpsgld or Filter in memory. The Langevin sampler skips
/// preconditioning when the configured algorithm is "nsgld".
FitResult fit(const Experiment& exp, Command cmd, std::uint64_t seed, std::size_t threads);

struct RunOptions {
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;     // overrides cfg.seed
  std::optional<std::size_t> threads;    // overrides cfg.threads
  std::filesystem::path samples;         // predict: samples.csv
};

/// Runs one command and writes its artifacts into `opt.out_dir`.
/// Returns a one-line status for the console.
std::string run_experiment(const ExperimentConfig& cfg, Command cmd, const RunOptions& opt);
/// Recomputes summary.json from a finished run directory.
std::string summarize_dir(const std::filesystem::path& dir);

PosteriorSamples read_samples(const std::filesystem::path& path, const Experiment& exp);
void write_samples(const std::filesystem::path& path, const Experiment& exp, const PosteriorSamples& samples);
void write_summary_json(const std::filesystem::path& path, const Experiment& exp, const PosteriorSummary& summary);

// ---------------------------------------------------------------------------
// Posterior predictive

struct PredictiveResult {
  std::vector<double> times;
  std::vector<Band> states;        // physical units
  std::vector<Band> measurements;  // with measurement noise
  std::vector<std::size_t> flagged;  // sample indices whose integration diverged
  std::size_t used = 0;
};

/// RK4-integrates the model per theta sample from `x_init` and adds
/// N(0, sigma_y^2) noise for the measurement bands.
PredictiveResult posterior_predictive(const OdeModel& model, std::span<const double> theta_samples,
                                      std::size_t theta_dim, std::span<const double> x_init, double horizon,
                                      double dt, std::span<const double> sigma_y, Rng& rng);

inline constexpr double kMseDisplacementVariance = 1.44e-12;  // m^2
inline constexpr double kMseAccelerationVariance = 5.32e-3;   // (m/s^2)^2

/// Mean over predictive samples of (100 / N) sum_n [(x_n - X_n)^2 / var_d + (a_n - A_n)^2 / var_a].
/// `pred_*` are rows of length N, one per sample.
double mse_metric(std::span<const double> pred_disp, std::span<const double> pred_acc,
                  std::span<const double> meas_disp, std::span<const double> meas_acc,
                  double var_d = kMseDisplacementVariance, double var_a = kMseAccelerationVariance);

}  // namespace niff
