#include <doctest.h>

#include <cmath>
#include <random>

#include "niff/error.hpp"
#include "niff/inference.hpp"
#include "niff/verify.hpp"

using namespace niff;

namespace {

// x(t) = w psi(t) with psi numerically constant over the window.
PathSpec constant_path(double window) {
  PathSpec spec = rbf_path(1, window, 1, 1e12);
  spec.rbf_centers = {0.0};
  return spec;
}

Problem constant_problem(double beta1, double beta2, const Dataset& data) {
  Problem p;
  p.model = linear_model(1, {0.0}, 1, {1.0});
  p.spec = constant_path(1.0);
  p.prior.beta1 = beta1;
  p.prior.beta2 = beta2;
  p.prior.window = 1.0;
  p.prior.n_t = 4;
  p.data = data;
  return p;
}

Dataset one_datum(double t, double y, double sigma) {
  Dataset d;
  d.times = {t};
  d.y = {y};
  d.sigma_y = {sigma};
  d.dim = 1;
  return d;
}

Problem duffing_problem(double window, std::size_t modes) {
  Problem p;
  p.model = normalized(duffing());
  p.spec = fourier_path(2, window, modes);
  p.prior.window = window;
  const double x0[] = {1.0, 0.0};
  const double th[] = {0.3, -1.0, 1.0};
  const auto tr = rk4_integrate(*duffing(), x0, th, 0.0, window, 0.01);
  p.data = normalize_dataset(synthesize_dataset(*duffing(), tr, th, 10, 0.05, 11), duffing()->y_scale());
  return p;
}

}  // namespace

TEST_CASE("adam") {
  std::vector<double> p{0.0};
  AdamState s(1);
  const std::vector<double> one{1.0};
  adam_step(p, one, s, 1e-3);
  // m_hat = v_hat = 1 after bias correction.
  CHECK(p[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(std::abs(p[0] - -9.99999995e-4) < 1e-11);

  std::vector<double> q{0.3, -2.0};
  AdamState sq(2);
  const std::vector<double> zero{0.0, 0.0};
  adam_step(q, zero, sq, 1e-3);
  CHECK(q == std::vector<double>{0.3, -2.0});

  std::vector<double> a{1.0, 2.0}, b{1.0, 2.0};
  AdamState sa(2), sb(2);
  const std::vector<double> g{0.5, -3.0};
  for (int i = 0; i < 3; ++i) {
    adam_step(a, g, sa, 1e-2);
    adam_step(b, g, sb, 1e-2);
  }
  CHECK(a == b);
  CHECK_THROWS_AS(adam_step(a, one, sa, 1e-3), ShapeError);
}

TEST_CASE("rmsprop preconditioner") {
  std::vector<double> v{0.0}, m{0.0};
  const std::vector<double> g{1.0};
  rmsprop_update(v, g, 0.99, 0.1, m);
  CHECK(v[0] == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(m[0] == doctest::Approx(5.0).epsilon(1e-13));

  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 30.0);
  std::vector<double> vv(50, 0.0), mm(50), gg(50);
  for (int k = 0; k < 200; ++k) {
    for (double& x : gg) x = k % 7 == 0 ? 0.0 : n(gen);
    rmsprop_update(vv, gg, 0.9, 0.1, mm);
    for (std::size_t i = 0; i < mm.size(); ++i) {
      CHECK(vv[i] >= 0.0);
      CHECK(mm[i] > 0.0);
      CHECK(mm[i] <= 10.0);
    }
  }
}

TEST_CASE("schedules") {
  const StepDecay lr{1e-3, 0.1, 100000, 0.0};
  CHECK(lr(0) == 1e-3);
  CHECK(lr(99999) == 1e-3);
  CHECK(lr(100000) == doctest::Approx(1e-4));
  CHECK(lr(250000) == doctest::Approx(1e-5));

  const StepDecay rho{1e-4, 0.5, 1000, 1e-5};
  double last = rho(0);
  for (std::size_t k = 0; k < 20000; k += 37) {
    const double r = rho(k);
    CHECK(std::isfinite(r));
    CHECK(r <= last);
    CHECK(r >= 1e-5);
    last = r;
  }
  CHECK(rho(19999) == 1e-5);
  CHECK_THROWS_AS((StepDecay{1e-3, 0.1, 0, 0.0}).validate("lr"), DomainError);
  CHECK_THROWS_AS((StepDecay{1e-3, 0.1, 10, 1e-2}).validate("lr"), DomainError);

  const AlphaRamp alpha{0.99, 1000};
  double prev = 0.0;
  for (std::size_t k = 0; k < 2000; k += 13) {
    const double a = alpha(k);
    CHECK(a > 0.0);
    CHECK(a <= 1.0);
    CHECK(a >= prev);
    prev = a;
  }
  CHECK(alpha(0) == 0.99);
  CHECK(alpha(1000) == 1.0);
  CHECK(AlphaRamp{0.9, 0}(123456) == 0.9);

  const LambdaRamp lam{300};
  CHECK(lam(0) == 0.0);
  CHECK(lam(150) == 0.5);
  CHECK(lam(300) == 1.0);
  CHECK(lam(10000) == 1.0);
  CHECK(LambdaRamp{0}(0) == 1.0);
}

TEST_CASE("minibatch likelihood") {
  const auto model = linear_model(1, {0.0}, 1, {1.0});
  const auto spec = constant_path(10.0);
  Dataset d;
  for (int i = 0; i < 100; ++i) {
    d.times.push_back(0.1 * i);
    d.y.push_back(0.5 + 0.01 * i);
  }
  d.sigma_y = {0.2};
  d.dim = 1;
  const std::vector<double> w{0.5};
  const double norm = -std::log(0.2) - 0.5 * std::log(2.0 * std::acos(-1.0));

  std::vector<std::size_t> all(100);
  for (std::size_t i = 0; i < 100; ++i) all[i] = i;
  double exact = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double r = (0.01 * i) / 0.2;
    exact += -0.5 * r * r + norm;
  }
  CHECK(log_likelihood_minibatch<double>(*model, spec, w, {}, d, all) == doctest::Approx(exact).epsilon(1e-12));

  const std::vector<std::size_t> first{0};
  CHECK(log_likelihood_minibatch<double>(*model, spec, w, {}, d, first) ==
        doctest::Approx(100.0 * norm).epsilon(1e-12));

  const std::vector<std::size_t> ten{3, 17, 25, 40, 41, 55, 60, 71, 88, 99};
  double sum = 0.0;
  for (std::size_t i : ten) {
    const std::vector<std::size_t> single{i};
    sum += log_likelihood_minibatch<double>(*model, spec, w, {}, d, single) / 100.0;
  }
  CHECK(log_likelihood_minibatch<double>(*model, spec, w, {}, d, ten) == doctest::Approx(10.0 * sum).epsilon(1e-12));
  CHECK_THROWS_AS(log_likelihood_minibatch<double>(*model, spec, w, {}, d, {}), DomainError);
}

TEST_CASE("auxiliary SVI on a quadratic Hamiltonian") {
  const auto p = constant_problem(200.0, 100.0, one_datum(0.5, 0.0, 1.0));
  const std::vector<double> x0{0.3};
  Guide g = Guide::diagonal({0.0}, 0.1);
  AdamState adam(g.params.size());
  Rng rng(1);

  Guide same = g;
  svi_prior(p, same, adam, x0, {}, 0, 1, 4, 1e-2, rng);
  CHECK(same.params == g.params);

  for (double lr : {1e-2, 1e-3, 1e-4}) svi_prior(p, g, adam, x0, {}, 3000, 1, 4, lr, rng);
  // Target N(x0, 1 / (2 beta2)).
  CHECK(g.mean()[0] == doctest::Approx(0.3).epsilon(0.02));
  CHECK(g.stddev()[0] * g.stddev()[0] == doctest::Approx(1.0 / 200.0).epsilon(0.1));
}

TEST_CASE("auxiliary Langevin on a quadratic Hamiltonian") {
  const auto p = constant_problem(200.0, 100.0, one_datum(0.5, 0.0, 1.0));
  const std::vector<double> x0{-0.4};
  LangevinOptions opt;
  opt.rho = {1e-3, 1.0, 1, 0.0};
  opt.alpha = {0.99, 0};
  std::vector<double> w{0.0}, v{0.0}, m{10.0};
  Rng rng(2);

  LangevinOptions frozen = opt;
  frozen.rho.initial = 0.0;
  std::vector<double> w0 = w;
  psgld_prior(p, w0, v, m, x0, {}, 10, 4, frozen, 0, rng);
  CHECK(w0 == w);

  psgld_prior(p, w, v, m, x0, {}, 2000, 4, opt, 0, rng);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    psgld_prior(p, w, v, m, x0, {}, 5, 4, opt, 0, rng);
    s += w[0];
    s2 += w[0] * w[0];
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  // About 1400 effective draws: standard error near 0.002.
  CHECK(std::abs(mean + 0.4) < 0.01);
  CHECK(var == doctest::Approx(1.0 / 200.0).epsilon(0.1));
}

TEST_CASE("NSVI estimator is unbiased on a linear-Gaussian toy") {
  // One datum y = 0.8 at t = 0.5 with sigma 0.3; constant path w; x' = 0.
  const double y = 0.8, sig = 0.3, beta2 = 2.0, lambda = 0.7;
  const auto p = constant_problem(1.0, beta2, one_datum(0.5, y, sig));
  NsviOptions opt;
  opt.sizes = {1, 4, 1, 4, 1};
  auto state = nsvi_init(p, opt, std::vector<double>{0.2}, {});
  state.phi.params = {0.2, std::log(0.3)};
  state.chi.params = {-0.1, std::log(0.4)};
  state.phi_tilde.params = {0.5, std::log(0.2)};
  const double mw = 0.2, sw = 0.3, mx = -0.1, sx = 0.4, mt = 0.5;

  // Expected surrogate gradient in (mu_w, log s_w, mu_x, log s_x).
  const double exact[] = {
      (y - mw) / (sig * sig) - 2 * beta2 * (mw - mx),
      -sw * sw / (sig * sig) - 2 * beta2 * sw * sw + 1.0,
      2 * beta2 * (mw - mx) - mx - 2 * lambda * beta2 * (mt - mx),
      -2 * beta2 * sx * sx - sx * sx + 1.0 + 2 * lambda * beta2 * sx * sx,
  };
  Rng rng(99);
  const int reps = 10000;
  double sum[4] = {}, sum2[4] = {};
  for (int r = 0; r < reps; ++r) {
    const auto g = nsvi_gradient(p, opt, state, lambda, rng);
    const double v[] = {g.phi[0], g.phi[1], g.chi[0], g.chi[1]};
    for (int i = 0; i < 4; ++i) {
      sum[i] += v[i];
      sum2[i] += v[i] * v[i];
    }
  }
  for (int i = 0; i < 4; ++i) {
    const double mean = sum[i] / reps;
    const double se = std::sqrt((sum2[i] / reps - mean * mean) / reps);
    INFO("component " << i);
    CHECK(std::abs(mean - exact[i]) < 3.0 * se + 1e-9);
  }
}

TEST_CASE("NSVI bookkeeping") {
  auto p = duffing_problem(5.0, 4);
  NsviOptions opt;
  opt.niter = 0;
  opt.niter_auxi = 2;
  const auto w = init_params(p.spec, 3);
  const std::vector<double> th{0.0, 0.0, 0.0};
  auto s = nsvi_init(p, opt, w, th);
  const auto s0 = s;
  Rng rng(5);
  CHECK(nsvi_posterior(p, opt, s, rng).empty());
  CHECK(s.phi.params == s0.phi.params);
  CHECK(s.psi.params == s0.psi.params);
  CHECK(s.chi.params == s0.chi.params);

  // Two single steps equal one double step, with the auxiliary guide handed over as is.
  opt.niter = 2;
  opt.log_every = 1;
  auto a = s0;
  Rng ra(7);
  const auto trace = nsvi_posterior(p, opt, a, ra);
  REQUIRE(trace.size() == 2);
  CHECK(trace[1].iter == 2);
  CHECK(trace[1].means.size() == 5);
  opt.niter = 1;
  auto b = s0;
  Rng rb(7);
  nsvi_posterior(p, opt, b, rb);
  CHECK(b.iter == 1);
  CHECK(b.phi_tilde.params != s0.phi_tilde.params);
  nsvi_posterior(p, opt, b, rb);
  CHECK(a.phi.params == b.phi.params);
  CHECK(a.psi.params == b.psi.params);
  CHECK(a.chi.params == b.chi.params);
  CHECK(a.phi_tilde.params == b.phi_tilde.params);
  CHECK(a.adam_tilde.t == 2 * opt.niter_auxi);

  // Filter-only: theta and the auxiliary guide stay put.
  opt.fixed_theta = std::vector<double>{0.3, -1.0, 1.0};
  opt.niter = 3;
  auto f = s0;
  const auto ft = nsvi_posterior(p, opt, f, rb);
  CHECK(f.psi.params == s0.psi.params);
  CHECK(f.phi_tilde.params == s0.phi_tilde.params);
  CHECK(f.phi.params != s0.phi.params);
  CHECK(ft.back().partition == 0.0);
  CHECK(ft.back().means.size() == 2);
}

TEST_CASE("NPSGLD bookkeeping") {
  auto p = duffing_problem(5.0, 4);
  NpsgldOptions opt;
  opt.niter = 4;
  opt.niter_auxi = 2;
  opt.n_chains = 2;
  opt.main.rho = {1e-5, 1.0, 1, 0.0};
  opt.aux.rho = {1e-6, 1.0, 1, 0.0};
  const std::vector<double> th{0.0, 0.0, 0.0};
  const auto chains = npsgld_posterior(p, opt, th, 21);
  REQUIRE(chains.size() == 2);
  for (const auto& c : chains) {
    CHECK_FALSE(c.failed);
    CHECK(c.iters == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK(c.w.size() == 4 * param_count(p.spec));
    CHECK(c.theta.size() == 4 * 3);
    CHECK(c.x0.size() == 4 * 2);
  }
  CHECK(chains[0].w != chains[1].w);

  // Chain 1 does not depend on how many chains run.
  opt.n_chains = 3;
  opt.threads = 2;
  const auto more = npsgld_posterior(p, opt, th, 21);
  CHECK(more[1].w == chains[1].w);
  CHECK(more[1].theta == chains[1].theta);

  // Persistence: 2 + 2 steps equal 4 steps.
  opt.niter = 2;
  Rng rng = Rng::stream(21, 0);
  auto s = npsgld_init(p, opt, 0, th);
  NpsgldChain out;
  npsgld_run_chain(p, opt, s, rng, out);
  npsgld_run_chain(p, opt, s, rng, out);
  CHECK(out.w == chains[0].w);
  CHECK(out.x0 == chains[0].x0);

  // Thinning and burn-in.
  opt.niter = 10;
  opt.thin = 3;
  opt.burn_in = 2;
  opt.n_chains = 1;
  const auto thinned = npsgld_posterior(p, opt, th, 21);
  CHECK(thinned[0].iters == std::vector<std::size_t>{5, 8});

  // A diverging chain is reported, not thrown.
  opt.main.rho = {1e6, 1.0, 1, 0.0};
  opt.main.precondition = false;
  const auto bad = npsgld_posterior(p, opt, th, 21);
  CHECK(bad[0].failed);
  CHECK(bad[0].error.find("npsgld") != std::string::npos);
}

TEST_CASE("Langevin on a 2D standard normal") {
  const GradFn grad = [](std::span<const double> z, std::span<double> g) {
    for (std::size_t i = 0; i < z.size(); ++i) g[i] = -z[i];
  };
  LangevinOptions opt;
  opt.rho = {0.05, 1.0, 1, 0.0};
  opt.alpha = {0.99, 0};
  Rng rng(31);
  const auto s = sample_langevin(grad, {0.0, 0.0}, 200000, opt, 100, rng);
  const std::size_t n = s.size() / 2;
  double m0 = 0, m1 = 0, c00 = 0, c11 = 0, c01 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    m0 += s[2 * k];
    m1 += s[2 * k + 1];
  }
  m0 /= n;
  m1 /= n;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = s[2 * k] - m0, b = s[2 * k + 1] - m1;
    c00 += a * a;
    c11 += b * b;
    c01 += a * b;
  }
  CHECK(std::abs(m0) < 0.05);
  CHECK(std::abs(m1) < 0.05);
  CHECK(c00 / n == doctest::Approx(1.0).epsilon(0.1));
  CHECK(c11 / n == doctest::Approx(1.0).epsilon(0.1));
  CHECK(std::abs(c01 / n) < 0.1);

  // M = I is the plain SGLD step.
  LangevinOptions plain = opt;
  plain.precondition = false;
  Rng r1(8), r2(8);
  const auto one = sample_langevin(grad, {1.0, -2.0}, 1, plain, 1, r1);
  const double xi0 = r2.gaussian(), xi1 = r2.gaussian();
  CHECK(one[0] == 1.0 + 0.05 * -1.0 + std::sqrt(0.1) * xi0);
  CHECK(one[1] == -2.0 + 0.05 * 2.0 + std::sqrt(0.1) * xi1);
}
