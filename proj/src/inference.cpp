#include "niff/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "niff/error.hpp"
#include "scratch.hpp"

namespace niff {

namespace {

using detail::mut;
using detail::small_vec;
using detail::view;

constexpr double kHalfLog2Pi = 0.91893853320467274178;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::vector<ad::Var> constants(std::span<const double> v) { return {v.begin(), v.end()}; }

std::span<const ad::Var> cview(const std::vector<ad::Var>& v) { return {v.data(), v.size()}; }

std::vector<std::size_t> draw_batch(const Dataset& data, std::size_t m, Rng& rng) {
  if (m > data.size()) throw DomainError("minibatch size exceeds the dataset size");
  return rng.sample_without_replacement(data.size(), m);
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer and schedules

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr, double b1,
               double b2, double eps) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and moment lengths differ");
  ++state.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
  }
}

double StepDecay::operator()(std::size_t k) const {
  const double v = initial * std::pow(factor, static_cast<double>(k / interval));
  return std::max(v, floor);
}

void StepDecay::validate(const char* what) const {
  const std::string w(what);
  if (!(initial >= 0.0) || !std::isfinite(initial)) throw DomainError(w + ": initial step must be finite and >= 0");
  if (!(factor > 0.0 && factor <= 1.0)) throw DomainError(w + ": decay factor must lie in (0, 1]");
  if (interval < 1) throw DomainError(w + ": decay interval must be >= 1");
  if (!(floor >= 0.0) || floor > initial) throw DomainError(w + ": floor must lie in [0, initial]");
}

double AlphaRamp::operator()(std::size_t k) const {
  if (ramp == 0 || k >= ramp) return ramp == 0 ? start : 1.0;
  return start + (1.0 - start) * static_cast<double>(k) / static_cast<double>(ramp);
}

void AlphaRamp::validate(const char* what) const {
  if (!(start > 0.0 && start <= 1.0)) throw DomainError(std::string(what) + ": alpha must lie in (0, 1]");
}

double LambdaRamp::operator()(std::size_t k) const {
  if (ramp == 0 || k >= ramp) return 1.0;
  return static_cast<double>(k) / static_cast<double>(ramp);
}

void rmsprop_update(std::span<double> v, std::span<const double> g, double alpha, double delta,
                    std::span<double> m) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = alpha * v[i] + (1.0 - alpha) * g[i] * g[i];
    m[i] = 1.0 / (delta + std::sqrt(v[i]));
  }
}

void langevin_step(std::span<double> z, std::span<const double> g, std::span<const double> m, double rho,
                   Rng& rng) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double mi = m.empty() ? 1.0 : m[i];
    z[i] += rho * mi * g[i] + std::sqrt(2.0 * rho * mi) * rng.gaussian();
  }
}

// ---------------------------------------------------------------------------
// Problem

void Problem::validate() const {
  if (!model) throw DomainError("problem: no model");
  spec.validate();
  prior.validate();
  data.validate();
  if (spec.state_dim != model->state_dim()) throw ShapeError("problem: path and model state dimensions differ");
  if (data.dim != model->output_dim()) throw ShapeError("problem: dataset and model output dimensions differ");
  for (double t : data.times) {
    if (t < 0.0 || t > prior.window * (1.0 + 1e-12))
      throw DomainError("problem: measurement time " + std::to_string(t) + " lies outside [0, T]");
  }
}

template <class T>
T log_likelihood_minibatch(const OdeModel& model, const PathSpec& spec, std::span<const T> w,
                           std::span<const T> theta, const Dataset& data, std::span<const std::size_t> idx) {
  if (idx.empty()) throw DomainError("log_likelihood_minibatch: empty index set");
  const std::size_t d = spec.state_dim;
  const std::size_t dy = data.dim;
  small_vec<T> x(d), y(dy), r(dy);
  double log_norm = 0.0;
  for (double s : data.sigma_y) log_norm -= std::log(s) + kHalfLog2Pi;
  T sq = 0.0;
  for (const std::size_t i : idx) {
    if (i >= data.size()) throw RangeError("log_likelihood_minibatch: index out of range");
    const double t = data.times[i];
    eval_path<T>(spec, w, t, mut(x));
    model.response(view(x), t, theta, mut(y));
    for (std::size_t j = 0; j < dy; ++j) r[j] = (data.y[i * dy + j] - y[j]) / data.sigma_y[j];
    sq += ad::norm2(view(r));
  }
  const double m = static_cast<double>(idx.size());
  const double scale = static_cast<double>(data.size()) / m;
  return scale * (-0.5 * sq + m * log_norm);
}

template <class T>
void expand_path(const PathSpec& spec, std::span<const T> x0, std::span<const T> w_latent, std::span<T> w_full) {
  if (spec.kind == PathKind::ReparamFourier) {
    reparam_expand<T>(spec, x0, w_latent, w_full);
    return;
  }
  std::copy(w_latent.begin(), w_latent.end(), w_full.begin());
}

// ---------------------------------------------------------------------------
// NSVI

void NsviOptions::validate() const {
  if (sizes.n_sample < 1 || sizes.n_t < 1 || sizes.n_eps_aux < 1 || sizes.n_t_aux < 1 || sizes.m_y < 1)
    throw DomainError("nsvi: sample sizes must be >= 1");
  lr.validate("nsvi lr");
  lr_aux.validate("nsvi aux lr");
  if (!(init_scale > 0.0)) throw DomainError("nsvi: init_scale must be > 0");
  if (log_every < 1) throw DomainError("nsvi: log_every must be >= 1");
}

namespace {

Guide make_guide(GuideFamily family, std::vector<double> mean, double scale) {
  return family == GuideFamily::Diagonal ? Guide::diagonal(std::move(mean), scale)
                                         : Guide::full_rank(std::move(mean), scale);
}

std::vector<double> default_x0(const PathSpec& spec, std::span<const double> w_latent) {
  if (spec.kind == PathKind::ReparamFourier) return std::vector<double>(spec.state_dim, 0.0);
  return initial_value(spec, w_latent);
}

}  // namespace

NsviState nsvi_init(const Problem& problem, const NsviOptions& opt, std::span<const double> w_init,
                    std::span<const double> theta_init) {
  if (w_init.size() != problem.w_dim()) throw ShapeError("nsvi_init: w_init has the wrong length");
  if (theta_init.size() != problem.theta_dim()) throw ShapeError("nsvi_init: theta_init has the wrong length");
  NsviState s;
  const std::vector<double> w(w_init.begin(), w_init.end());
  s.phi = make_guide(opt.w_family, w, opt.init_scale);
  s.psi = make_guide(opt.theta_family, {theta_init.begin(), theta_init.end()}, opt.init_scale);
  s.chi = make_guide(opt.x0_family, default_x0(problem.spec, w_init), opt.init_scale);
  s.phi_tilde = make_guide(opt.w_family, w, opt.init_scale);
  s.adam_phi = AdamState(s.phi.params.size());
  s.adam_psi = AdamState(s.psi.params.size());
  s.adam_chi = AdamState(s.chi.params.size());
  s.adam_tilde = AdamState(s.phi_tilde.params.size());
  return s;
}

void svi_prior(const Problem& problem, Guide& phi_tilde, AdamState& adam, std::span<const double> x0,
               std::span<const double> theta, std::size_t niter, std::size_t n_eps, std::size_t n_t, double lr,
               Rng& rng, double b1, double b2, double eps) {
  const PathSpec& spec = problem.spec;
  const std::size_t nw = phi_tilde.dim;
  const std::size_t nfull = param_count(spec);
  const auto x0v = constants(x0);
  const auto thv = constants(theta);
  thread_local ad::Tape tape;
  std::vector<ad::Var> w(nw), wf(nfull);
  std::vector<double> e(nw), grad(phi_tilde.params.size());
  for (std::size_t it = 0; it < niter; ++it) {
    try {
      tape.clear();
      const auto p = tape.variables(phi_tilde.params);
      ad::Var obj = 0.0;
      for (std::size_t s = 0; s < n_eps; ++s) {
        rng.fill_gaussian(e);
        guide_sample<ad::Var>(phi_tilde.family, nw, cview(p), e, w);
        expand_path<ad::Var>(spec, cview(x0v), cview(w), wf);
        const auto times = sample_times(problem.prior, n_t, rng);
        obj += log_pi_estimate<ad::Var>(problem.prior, *problem.model, spec, cview(wf), cview(x0v), cview(thv),
                                        times) -
               guide_log_density<ad::Var>(phi_tilde.family, nw, cview(p), cview(w));
      }
      obj = obj / static_cast<double>(n_eps);
      tape.gradient(obj, p, grad);
    } catch (const NonFiniteError& err) {
      throw DivergenceError("svi_prior: non-finite ELBO at iteration " + std::to_string(it) + " (" + err.what() +
                            ")");
    }
    if (!all_finite(grad))
      throw DivergenceError("svi_prior: non-finite ELBO gradient at iteration " + std::to_string(it));
    for (double& g : grad) g = -g;
    adam_step(phi_tilde.params, grad, adam, lr, b1, b2, eps);
  }
}

namespace {

struct NsviDraws {
  std::vector<double> eps, eta, zeta;
};

// Builds the surrogate on `tape` for one (eps, eta, zeta) draw; the aux
// loop, if any, has already run. Adds term values into `terms`.
ad::Var nsvi_surrogate(const Problem& problem, const NsviOptions& opt, const NsviState& state,
                       std::span<const ad::Var> phi, std::span<const ad::Var> psi, std::span<const ad::Var> chi,
                       const NsviDraws& d, double lambda, Rng& rng, NsviTraceRow& terms) {
  const PathSpec& spec = problem.spec;
  const OdeModel& model = *problem.model;
  const std::size_t nw = state.phi.dim, nx = state.chi.dim;
  const std::size_t nfull = param_count(spec);
  const bool filter = opt.fixed_theta.has_value();

  std::vector<ad::Var> w(nw), wf(nfull), x0(nx), theta;
  guide_sample<ad::Var>(state.phi.family, nw, phi, d.eps, w);
  guide_sample<ad::Var>(state.chi.family, nx, chi, d.zeta, x0);
  if (filter) {
    theta = constants(*opt.fixed_theta);
  } else {
    theta.resize(state.psi.dim);
    guide_sample<ad::Var>(state.psi.family, state.psi.dim, psi, d.eta, theta);
  }
  expand_path<ad::Var>(spec, cview(x0), cview(w), wf);

  const auto times = sample_times(problem.prior, opt.sizes.n_t, rng);
  const auto batch = draw_batch(problem.data, opt.sizes.m_y, rng);

  const ad::Var like = log_likelihood_minibatch<ad::Var>(model, spec, cview(wf), cview(theta), problem.data, batch);
  const ad::Var ham = log_pi_estimate<ad::Var>(problem.prior, model, spec, cview(wf), cview(x0), cview(theta), times);
  ad::Var prior = standard_normal_log_prior<ad::Var>(cview(x0));
  ad::Var entropy = -guide_log_density<ad::Var>(state.phi.family, nw, phi, cview(w)) -
                    guide_log_density<ad::Var>(state.chi.family, nx, chi, cview(x0));
  if (!filter) {
    prior += standard_normal_log_prior<ad::Var>(cview(theta));
    entropy -= guide_log_density<ad::Var>(state.psi.family, state.psi.dim, psi, cview(theta));
  }

  ad::Var partition = 0.0;
  if (!filter && lambda > 0.0) {
    std::vector<double> e(nw);
    std::vector<ad::Var> wt(nw), wtf(nfull);
    for (std::size_t k = 0; k < opt.sizes.n_eps_aux; ++k) {
      rng.fill_gaussian(e);
      const auto sample = state.phi_tilde.sample(e);
      const auto wtc = constants(sample);
      expand_path<ad::Var>(spec, cview(x0), cview(wtc), wtf);
      const auto t_aux = sample_times(problem.prior, opt.sizes.n_t_aux, rng);
      partition -= log_pi_estimate<ad::Var>(problem.prior, model, spec, cview(wtf), cview(x0), cview(theta), t_aux);
    }
    partition = partition * (lambda / static_cast<double>(opt.sizes.n_eps_aux));
  }

  terms.like += like.value();
  terms.ham += ham.value();
  terms.prior += prior.value();
  terms.entropy += entropy.value();
  terms.partition += partition.value();
  return like + ham + prior + entropy + partition;
}

NsviDraws draw_noise(const NsviState& state, bool filter, Rng& rng) {
  NsviDraws d;
  d.eps = rng.gaussian_vector(state.phi.dim);
  if (!filter) d.eta = rng.gaussian_vector(state.psi.dim);
  d.zeta = rng.gaussian_vector(state.chi.dim);
  return d;
}

// One outer iteration: aux loop (when `run_aux`), then the surrogate
// gradient. Returns gradients in `g`.
void nsvi_iteration(const Problem& problem, const NsviOptions& opt, NsviState& state, double lambda, double lr_aux,
                    bool run_aux, Rng& rng, NsviGradient& g) {
  const bool filter = opt.fixed_theta.has_value();
  thread_local ad::Tape tape;
  tape.clear();
  const auto phi = tape.variables(state.phi.params);
  const auto psi = tape.variables(state.psi.params);
  const auto chi = tape.variables(state.chi.params);
  ad::Var total = 0.0;
  g.terms = NsviTraceRow{};
  for (std::size_t s = 0; s < opt.sizes.n_sample; ++s) {
    const NsviDraws d = draw_noise(state, filter, rng);
    if (run_aux && !filter) {
      const auto x0 = state.chi.sample(d.zeta);
      const auto theta = state.psi.sample(d.eta);
      svi_prior(problem, state.phi_tilde, state.adam_tilde, x0, theta, opt.niter_auxi, opt.sizes.n_eps_aux,
                opt.sizes.n_t_aux, lr_aux, rng, opt.b1, opt.b2, opt.eps);
    }
    total += nsvi_surrogate(problem, opt, state, cview(phi), cview(psi), cview(chi), d, lambda, rng, g.terms);
  }
  const double inv = 1.0 / static_cast<double>(opt.sizes.n_sample);
  total = total * inv;
  for (double* v : {&g.terms.like, &g.terms.ham, &g.terms.prior, &g.terms.entropy, &g.terms.partition}) *v *= inv;
  g.phi = tape.gradient(total, phi);
  g.psi = tape.gradient(total, psi);
  g.chi = tape.gradient(total, chi);
}

void ascend(std::span<double> params, std::vector<double>& grad, AdamState& adam, double lr, const NsviOptions& opt) {
  for (double& v : grad) v = -v;
  adam_step(params, grad, adam, lr, opt.b1, opt.b2, opt.eps);
}

}  // namespace

NsviGradient nsvi_gradient(const Problem& problem, const NsviOptions& opt, const NsviState& state, double lambda,
                           Rng& rng) {
  NsviState copy = state;
  NsviGradient g;
  nsvi_iteration(problem, opt, copy, lambda, 0.0, false, rng, g);
  return g;
}

std::vector<NsviTraceRow> nsvi_posterior(const Problem& problem, const NsviOptions& opt, NsviState& state,
                                         Rng& rng) {
  problem.validate();
  opt.validate();
  const bool filter = opt.fixed_theta.has_value();
  if (filter && opt.fixed_theta->size() != problem.theta_dim())
    throw ShapeError("nsvi: fixed theta has the wrong length");

  std::vector<NsviTraceRow> trace;
  NsviTraceRow acc;
  std::size_t in_window = 0;
  NsviGradient g;
  const std::size_t end = state.iter + opt.niter;
  for (; state.iter < end; ++state.iter) {
    const std::size_t k = state.iter;
    try {
      nsvi_iteration(problem, opt, state, opt.partition(k), opt.lr_aux(k), true, rng, g);
    } catch (const NonFiniteError& err) {
      throw DivergenceError("nsvi: non-finite ELBO at iteration " + std::to_string(k) + " (" + err.what() + ")");
    }
    if (!all_finite(g.phi) || !all_finite(g.psi) || !all_finite(g.chi))
      throw DivergenceError("nsvi: non-finite ELBO gradient at iteration " + std::to_string(k));
    const double lr = opt.lr(k);
    ascend(state.phi.params, g.phi, state.adam_phi, lr, opt);
    ascend(state.chi.params, g.chi, state.adam_chi, lr, opt);
    if (!filter) ascend(state.psi.params, g.psi, state.adam_psi, lr, opt);

    acc.like += g.terms.like;
    acc.ham += g.terms.ham;
    acc.prior += g.terms.prior;
    acc.entropy += g.terms.entropy;
    acc.partition += g.terms.partition;
    ++in_window;
    if ((k + 1) % opt.log_every == 0 || k + 1 == end) {
      const double inv = 1.0 / static_cast<double>(in_window);
      NsviTraceRow row{k + 1, acc.like * inv, acc.ham * inv, acc.prior * inv, acc.entropy * inv,
                       acc.partition * inv, {}};
      if (!filter) row.means.assign(state.psi.mean().begin(), state.psi.mean().end());
      row.means.insert(row.means.end(), state.chi.mean().begin(), state.chi.mean().end());
      trace.push_back(std::move(row));
      acc = NsviTraceRow{};
      in_window = 0;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Langevin samplers

void NpsgldOptions::validate() const {
  if (n_t < 1 || n_t_aux < 1 || n_w_aux < 1 || m_y < 1) throw DomainError("npsgld: sample sizes must be >= 1");
  if (n_chains < 1) throw DomainError("npsgld: n_chains must be >= 1");
  if (thin < 1) throw DomainError("npsgld: thin must be >= 1");
  if (threads < 1) throw DomainError("npsgld: threads must be >= 1");
  main.rho.validate("npsgld rho");
  aux.rho.validate("npsgld aux rho");
  main.alpha.validate("npsgld alpha");
  aux.alpha.validate("npsgld aux alpha");
  if (!(main.delta > 0.0) || !(aux.delta > 0.0)) throw DomainError("npsgld: delta must be > 0");
}

NpsgldChainState npsgld_init(const Problem& problem, const NpsgldOptions& opt, std::size_t chain,
                             std::span<const double> theta_init) {
  NpsgldChainState s;
  s.w = init_params(problem.spec, opt.init_seed + chain);
  if (!opt.fixed_theta) {
    if (theta_init.size() != problem.theta_dim()) throw ShapeError("npsgld_init: theta_init has the wrong length");
    s.theta.assign(theta_init.begin(), theta_init.end());
  }
  s.x0 = default_x0(problem.spec, s.w);
  for (std::size_t k = 0; k < opt.n_w_aux; ++k) s.aux_w.insert(s.aux_w.end(), s.w.begin(), s.w.end());
  const std::size_t nz = s.w.size() + s.theta.size() + s.x0.size();
  s.v.assign(nz, 0.0);
  s.m.assign(nz, 1.0 / opt.main.delta);
  s.aux_v.assign(s.aux_w.size(), 0.0);
  s.aux_m.assign(s.aux_w.size(), 1.0 / opt.aux.delta);
  return s;
}

void psgld_prior(const Problem& problem, std::span<double> w, std::span<double> v, std::span<double> m,
                 std::span<const double> x0, std::span<const double> theta, std::size_t niter, std::size_t n_t,
                 const LangevinOptions& opt, std::size_t k0, Rng& rng) {
  const PathSpec& spec = problem.spec;
  const auto x0v = constants(x0);
  const auto thv = constants(theta);
  thread_local ad::Tape tape;
  std::vector<ad::Var> wf(param_count(spec));
  std::vector<double> g(w.size());
  for (std::size_t j = 0; j < niter; ++j) {
    const std::size_t k = k0 + j;
    try {
      tape.clear();
      const auto wv = tape.variables(w);
      expand_path<ad::Var>(spec, cview(x0v), cview(wv), wf);
      const auto times = sample_times(problem.prior, n_t, rng);
      const ad::Var lp =
          log_pi_estimate<ad::Var>(problem.prior, *problem.model, spec, cview(wf), cview(x0v), cview(thv), times);
      tape.gradient(lp, wv, g);
    } catch (const NonFiniteError& err) {
      throw DivergenceError("psgld_prior: non-finite log prior at step " + std::to_string(k) + " (" + err.what() +
                            ")");
    }
    if (opt.precondition) rmsprop_update(v, g, opt.alpha(k), opt.delta, m);
    langevin_step(w, g, opt.precondition ? std::span<const double>(m) : std::span<const double>(), opt.rho(k), rng);
    if (!all_finite(w)) throw DivergenceError("psgld_prior: non-finite state at step " + std::to_string(k));
  }
}

void npsgld_run_chain(const Problem& problem, const NpsgldOptions& opt, NpsgldChainState& s, Rng& rng,
                      NpsgldChain& out) {
  const PathSpec& spec = problem.spec;
  const OdeModel& model = *problem.model;
  const bool filter = opt.fixed_theta.has_value();
  const std::size_t nw = s.w.size(), nth = s.theta.size(), nx = s.x0.size();
  const std::size_t nfull = param_count(spec);
  std::vector<double> z;
  z.reserve(nw + nth + nx);
  z.insert(z.end(), s.w.begin(), s.w.end());
  z.insert(z.end(), s.theta.begin(), s.theta.end());
  z.insert(z.end(), s.x0.begin(), s.x0.end());
  std::vector<double> g(z.size());
  std::vector<ad::Var> wf(nfull), wtf(nfull);
  thread_local ad::Tape tape;

  auto sync = [&] {
    std::copy_n(z.begin(), nw, s.w.begin());
    std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(nw), nth, s.theta.begin());
    std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(nw + nth), nx, s.x0.begin());
  };
  const std::vector<double> fixed = filter ? *opt.fixed_theta : std::vector<double>{};

  const std::size_t end = s.iter + opt.niter;
  for (; s.iter < end; ++s.iter) {
    const std::size_t k = s.iter;
    const std::span<const double> theta_now = filter ? std::span<const double>(fixed) : std::span<const double>(s.theta);
    if (!filter) {
      for (std::size_t a = 0; a < opt.n_w_aux; ++a) {
        const auto off = a * nw;
        psgld_prior(problem, std::span(s.aux_w).subspan(off, nw), std::span(s.aux_v).subspan(off, nw),
                    std::span(s.aux_m).subspan(off, nw), s.x0, theta_now, opt.niter_auxi, opt.n_t_aux, opt.aux,
                    k * opt.niter_auxi, rng);
      }
    }
    try {
      tape.clear();
      const auto zv = tape.variables(z);
      const std::span<const ad::Var> all(zv);
      const auto w = all.first(nw);
      const auto x0 = all.subspan(nw + nth, nx);
      const auto fixed_v = constants(fixed);
      const auto theta = filter ? cview(fixed_v) : all.subspan(nw, nth);
      expand_path<ad::Var>(spec, x0, w, wf);
      const auto times = sample_times(problem.prior, opt.n_t, rng);
      const auto batch = draw_batch(problem.data, opt.m_y, rng);
      ad::Var obj = log_likelihood_minibatch<ad::Var>(model, spec, cview(wf), theta, problem.data, batch) +
                    log_pi_estimate<ad::Var>(problem.prior, model, spec, cview(wf), x0, theta, times) +
                    standard_normal_log_prior<ad::Var>(x0);
      if (!filter) {
        obj += standard_normal_log_prior<ad::Var>(theta);
        const double lambda = opt.partition(k);
        if (lambda > 0.0) {
          ad::Var part = 0.0;
          for (std::size_t a = 0; a < opt.n_w_aux; ++a) {
            const auto wtc = constants(std::span<const double>(s.aux_w).subspan(a * nw, nw));
            expand_path<ad::Var>(spec, x0, cview(wtc), wtf);
            const auto t_aux = sample_times(problem.prior, opt.n_t_aux, rng);
            part -= log_pi_estimate<ad::Var>(problem.prior, model, spec, cview(wtf), x0, theta, t_aux);
          }
          obj += part * (lambda / static_cast<double>(opt.n_w_aux));
        }
      }
      tape.gradient(obj, zv, g);
    } catch (const NonFiniteError& err) {
      throw DivergenceError("npsgld: non-finite log posterior at step " + std::to_string(k) + " (" + err.what() +
                            ")");
    }
    if (!all_finite(g)) throw DivergenceError("npsgld: non-finite gradient at step " + std::to_string(k));
    if (opt.main.precondition) rmsprop_update(s.v, g, opt.main.alpha(k), opt.main.delta, s.m);
    langevin_step(z, g, opt.main.precondition ? std::span<const double>(s.m) : std::span<const double>(),
                  opt.main.rho(k), rng);
    if (!all_finite(z)) throw DivergenceError("npsgld: non-finite state at step " + std::to_string(k));
    sync();

    const std::size_t done = k + 1;
    if (opt.trace_every > 0 && done % opt.trace_every == 0) {
      out.trace_iters.push_back(done);
      out.trace_theta.insert(out.trace_theta.end(), theta_now.begin(), theta_now.end());
    }
    if (done > opt.burn_in && (done - opt.burn_in) % opt.thin == 0) {
      out.iters.push_back(done);
      const std::size_t row = out.w.size();
      out.w.resize(row + nfull);
      expand_path<double>(spec, s.x0, s.w, std::span(out.w).subspan(row, nfull));
      out.theta.insert(out.theta.end(), theta_now.begin(), theta_now.end());
      out.x0.insert(out.x0.end(), s.x0.begin(), s.x0.end());
    }
  }
}

std::vector<NpsgldChain> npsgld_posterior(const Problem& problem, const NpsgldOptions& opt,
                                          std::span<const double> theta_init, std::uint64_t seed) {
  problem.validate();
  opt.validate();
  if (opt.fixed_theta && opt.fixed_theta->size() != problem.theta_dim())
    throw ShapeError("npsgld: fixed theta has the wrong length");
  std::vector<NpsgldChain> chains(opt.n_chains);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < opt.n_chains; c = next++) {
      NpsgldChain& out = chains[c];
      try {
        Rng rng = Rng::stream(seed, c);
        NpsgldChainState s = npsgld_init(problem, opt, c, theta_init);
        npsgld_run_chain(problem, opt, s, rng, out);
        out.final_state = std::move(s);
      } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(opt.threads, opt.n_chains);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  return chains;
}

std::vector<double> sample_langevin(const GradFn& grad, std::vector<double> z, std::size_t niter,
                                    const LangevinOptions& opt, std::size_t thin, Rng& rng) {
  if (thin < 1) throw DomainError("sample_langevin: thin must be >= 1");
  std::vector<double> g(z.size()), v(z.size(), 0.0), m(z.size(), 1.0 / opt.delta), out;
  for (std::size_t k = 0; k < niter; ++k) {
    grad(z, g);
    if (opt.precondition) rmsprop_update(v, g, opt.alpha(k), opt.delta, m);
    langevin_step(z, g, opt.precondition ? std::span<const double>(m) : std::span<const double>(), opt.rho(k), rng);
    if (!all_finite(z)) throw DivergenceError("sample_langevin: non-finite state at step " + std::to_string(k));
    if ((k + 1) % thin == 0) out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

#define NIFF_INFERENCE_INSTANTIATE(T)                                                                         \
  template T log_likelihood_minibatch<T>(const OdeModel&, const PathSpec&, std::span<const T>,               \
                                         std::span<const T>, const Dataset&, std::span<const std::size_t>);   \
  template void expand_path<T>(const PathSpec&, std::span<const T>, std::span<const T>, std::span<T>);
NIFF_INFERENCE_INSTANTIATE(double)
NIFF_INFERENCE_INSTANTIATE(ad::Var)

}  // namespace niff
