#pragma once

// Nested stochastic variational inference (NSVI) and nested preconditioned
// stochastic gradient Langevin dynamics (NPSGLD) over (w, theta, x0).
//
// Everything here works in normalized units: the model is expected to be
// wrapped by `normalized`, the dataset by `normalize_dataset`, and theta and
// x0 carry standard-normal priors.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "niff/guides.hpp"
#include "niff/models.hpp"
#include "niff/paths.hpp"
#include "niff/priors.hpp"
#include "niff/rng.hpp"

namespace niff {

// ---------------------------------------------------------------------------
// Optimizer and schedules

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam step that *decreases* the objective whose
/// gradient is `grads`. Pass the negated gradient to ascend.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               double b1 = 0.9, double b2 = 0.999, double eps = 1e-8);

/// initial * factor^floor(k / interval), never below `floor`.
struct StepDecay {
  double initial = 1e-3;
  double factor = 1.0;
  std::size_t interval = 1;
  double floor = 0.0;

  double operator()(std::size_t k) const;
  void validate(const char* what) const;
  bool operator==(const StepDecay&) const = default;
};

/// Memorizing size: linear from `start` at k = 0 to 1 at k = `ramp`.
struct AlphaRamp {
  double start = 0.99;
  std::size_t ramp = 0;

  double operator()(std::size_t k) const;
  void validate(const char* what) const;
  bool operator==(const AlphaRamp&) const = default;
};

/// Partition-term weight: linear from 0 at k = 0 to 1 at k = `ramp`.
struct LambdaRamp {
  std::size_t ramp = 0;

  double operator()(std::size_t k) const;
  bool operator==(const LambdaRamp&) const = default;
};

/// V = alpha V + (1 - alpha) g^2;  M = 1 / (delta + sqrt(V)).
void rmsprop_update(std::span<double> v, std::span<const double> g, double alpha, double delta,
                    std::span<double> m);

/// z += rho M g + sqrt(2 rho M) xi. An empty `m` means M = I.
void langevin_step(std::span<double> z, std::span<const double> g, std::span<const double> m, double rho,
                   Rng& rng);

// ---------------------------------------------------------------------------
// Problem definition

struct Problem {
  ModelPtr model;  // normalized
  PathSpec spec;
  PriorConfig prior;
  Dataset data;  // normalized

  std::size_t w_dim() const { return latent_count(spec); }
  std::size_t theta_dim() const { return model->param_dim(); }
  std::size_t x0_dim() const { return spec.state_dim; }
  void validate() const;
};

/// (n_d / m_d) sum_{i in idx} log N(y_i | R(x(t_i; w), t_i; theta), diag(sigma_y^2)).
/// `w` is the full coefficient vector (expanded for the reparameterized path).
template <class T>
T log_likelihood_minibatch(const OdeModel& model, const PathSpec& spec, std::span<const T> w,
                           std::span<const T> theta, const Dataset& data, std::span<const std::size_t> idx);

/// Full coefficient vector from latent coordinates: the identity except for
/// the reparameterized Fourier path, which solves for the dependent terms.
template <class T>
void expand_path(const PathSpec& spec, std::span<const T> x0, std::span<const T> w_latent, std::span<T> w_full);

// ---------------------------------------------------------------------------
// NSVI

struct SampleSizes {
  std::size_t n_sample = 1;  // (eps, eta, zeta) draws per outer step
  std::size_t n_t = 10;
  std::size_t n_eps_aux = 1;
  std::size_t n_t_aux = 10;
  std::size_t m_y = 10;

  bool operator==(const SampleSizes&) const = default;
};

struct NsviOptions {
  std::size_t niter = 1000;
  std::size_t niter_auxi = 1;
  SampleSizes sizes;
  StepDecay lr;
  StepDecay lr_aux;
  LambdaRamp partition;
  GuideFamily w_family = GuideFamily::Diagonal;
  GuideFamily theta_family = GuideFamily::FullRank;
  GuideFamily x0_family = GuideFamily::Diagonal;
  double init_scale = 0.1;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  std::size_t log_every = 100;
  /// Filter-only mode: theta is fixed to this value, there is no auxiliary
  /// loop and no partition term.
  std::optional<std::vector<double>> fixed_theta;

  void validate() const;
};

struct NsviState {
  Guide phi;        // w
  Guide psi;        // theta
  Guide chi;        // x0
  Guide phi_tilde;  // auxiliary w
  AdamState adam_phi, adam_psi, adam_chi, adam_tilde;
  std::size_t iter = 0;
};

/// One trace row: interval averages of the five surrogate terms, then the
/// theta and x0 guide means.
struct NsviTraceRow {
  std::size_t iter = 0;
  double like = 0.0;
  double ham = 0.0;
  double prior = 0.0;
  double entropy = 0.0;
  double partition = 0.0;
  std::vector<double> means;
};

/// Guides centred on `w_init` (latent layout), `theta_init` and the path's
/// initial value (zero for the reparameterized path).
NsviState nsvi_init(const Problem& problem, const NsviOptions& opt, std::span<const double> w_init,
                    std::span<const double> theta_init);

/// `niter` Adam steps on the prior ELBO of the auxiliary guide at fixed
/// (x0, theta).
void svi_prior(const Problem& problem, Guide& phi_tilde, AdamState& adam, std::span<const double> x0,
               std::span<const double> theta, std::size_t niter, std::size_t n_eps, std::size_t n_t, double lr,
               Rng& rng, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8);

/// Runs `opt.niter` outer iterations starting from `state.iter`; resuming
/// with the same rng continues the run exactly.
std::vector<NsviTraceRow> nsvi_posterior(const Problem& problem, const NsviOptions& opt, NsviState& state,
                                         Rng& rng);

/// The surrogate whose gradient is the five-term estimator, evaluated at
/// fixed guide parameters. Exposed for estimator tests.
struct NsviGradient {
  std::vector<double> phi, psi, chi;
  NsviTraceRow terms;
};
NsviGradient nsvi_gradient(const Problem& problem, const NsviOptions& opt, const NsviState& state,
                           double lambda, Rng& rng);

// ---------------------------------------------------------------------------
// Langevin samplers

struct LangevinOptions {
  StepDecay rho;
  AlphaRamp alpha;
  double delta = 0.1;
  bool precondition = true;  // false: M = I

  bool operator==(const LangevinOptions&) const = default;
};

struct NpsgldOptions {
  std::size_t niter = 10000;
  std::size_t niter_auxi = 1;
  std::size_t n_t = 10;
  std::size_t n_t_aux = 10;
  std::size_t n_w_aux = 1;
  std::size_t m_y = 10;
  LangevinOptions main;
  LangevinOptions aux;
  LambdaRamp partition;
  std::size_t n_chains = 3;
  std::size_t threads = 1;
  std::size_t thin = 1;
  std::size_t burn_in = 0;
  std::size_t trace_every = 0;  // 0: no trace
  std::uint64_t init_seed = 0;
  std::optional<std::vector<double>> fixed_theta;

  void validate() const;
};

struct NpsgldChainState {
  std::vector<double> w;      // latent layout
  std::vector<double> theta;  // empty in filter-only mode
  std::vector<double> x0;
  std::vector<double> aux_w;
  std::vector<double> v, m;  // main preconditioner over (w, theta, x0)
  std::vector<double> aux_v, aux_m;
  std::size_t iter = 0;
};

struct NpsgldChain {
  std::vector<std::size_t> iters;
  std::vector<double> w;      // rows of w_dim
  std::vector<double> theta;  // rows of theta_dim
  std::vector<double> x0;     // rows of x0_dim; diagnostic only
  std::vector<std::size_t> trace_iters;
  std::vector<double> trace_theta;  // every trace_every steps, burn-in included
  NpsgldChainState final_state;
  bool failed = false;
  std::string error;
};

NpsgldChainState npsgld_init(const Problem& problem, const NpsgldOptions& opt, std::size_t chain,
                             std::span<const double> theta_init);

/// `niter` Langevin steps on the conditional prior at fixed (x0, theta).
/// `v`/`m` are the preconditioner state; `k0` indexes the alpha and rho
/// schedules.
void psgld_prior(const Problem& problem, std::span<double> w, std::span<double> v, std::span<double> m,
                 std::span<const double> x0, std::span<const double> theta, std::size_t niter, std::size_t n_t,
                 const LangevinOptions& opt, std::size_t k0, Rng& rng);

/// Advances one chain by `opt.niter` steps from `state.iter`, recording
/// every `opt.thin`-th state past `opt.burn_in`.
void npsgld_run_chain(const Problem& problem, const NpsgldOptions& opt, NpsgldChainState& state, Rng& rng,
                      NpsgldChain& out);

/// Runs `opt.n_chains` independent chains on up to `opt.threads` threads.
/// Chain c draws from Rng::stream(seed, c); a failing chain is reported in
/// its record and does not stop the others.
std::vector<NpsgldChain> npsgld_posterior(const Problem& problem, const NpsgldOptions& opt,
                                          std::span<const double> theta_init, std::uint64_t seed);

/// Generic driver on an explicit log-density gradient.
using GradFn = std::function<void(std::span<const double> z, std::span<double> grad)>;
std::vector<double> sample_langevin(const GradFn& grad, std::vector<double> z0, std::size_t niter,
                                    const LangevinOptions& opt, std::size_t thin, Rng& rng);

#define NIFF_INFERENCE_EXTERN(T)                                                                                 \
  extern template T log_likelihood_minibatch<T>(const OdeModel&, const PathSpec&, std::span<const T>,           \
                                                std::span<const T>, const Dataset&,                             \
                                                std::span<const std::size_t>);                                  \
  extern template void expand_path<T>(const PathSpec&, std::span<const T>, std::span<const T>, std::span<T>);
NIFF_INFERENCE_EXTERN(double)
NIFF_INFERENCE_EXTERN(ad::Var)
#undef NIFF_INFERENCE_EXTERN

}  // namespace niff
