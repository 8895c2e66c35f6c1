#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "niff/error.hpp"
#include "niff/paths.hpp"
#include "niff/verify.hpp"

using namespace niff;

namespace {

std::vector<PathSpec> all_kinds(std::size_t d, double window) {
  return {
      fourier_path(d, window, 5),
      rbf_path(d, window, 8, 0.05),
      residual_path(rbf_path(d, window, 6, 0.05), 3, {5}),
      residual_path(fourier_path(d, window, 2), 2, {4, 3}),
      reparam_fourier_path(d, window, 4),
  };
}

std::vector<double> random_w(const PathSpec& spec, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(param_count(spec));
  for (double& v : w) v = u(gen);
  return w;
}

}  // namespace

TEST_CASE("fourier path values and derivative") {
  const auto spec = fourier_path(1, 1.0, 1);
  const std::vector<double> w{1.0, 2.0, 3.0};
  CHECK(eval_path(spec, w, 0.0)[0] == 4.0);
  CHECK(eval_path(spec, w, 0.25)[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(eval_path_dot(spec, w, 0.0)[0] == doctest::Approx(4.0 * std::numbers::pi).epsilon(1e-14));
  CHECK(initial_value(spec, w)[0] == 4.0);
  CHECK_THROWS_AS(eval_path(spec, std::vector<double>{1.0, 2.0}, 0.0), ShapeError);
}

TEST_CASE("fourier features") {
  std::vector<double> f(3), df(3);
  fourier_features(1, 1.0, 0.0, f, df);
  CHECK(f == std::vector<double>{1.0, 0.0, 1.0});
  // Recurrence agrees with direct evaluation at high mode counts.
  const std::size_t k_max = 40;
  std::vector<double> g(2 * k_max + 1), dg(2 * k_max + 1);
  fourier_features(k_max, 20.0, 13.7, g, dg);
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) * 13.7 / 20.0;
    CHECK(g[2 * k - 1] == doctest::Approx(std::sin(a)).epsilon(1e-12));
    CHECK(g[2 * k] == doctest::Approx(std::cos(a)).epsilon(1e-12));
  }
}

TEST_CASE("rbf path") {
  PathSpec spec = rbf_path(1, 1.0, 1, 1.0);
  spec.rbf_centers = {0.0};
  const std::vector<double> w{1.0};
  CHECK(eval_path(spec, w, 0.0)[0] == 1.0);
  CHECK(eval_path_dot(spec, w, 0.0)[0] == 0.0);

  PathSpec far = rbf_path(1, 10.0, 1, 0.005);
  far.rbf_centers = {1.0};
  CHECK(initial_value(far, w)[0] < 1e-40);
}

TEST_CASE("residual network") {
  const auto spec = residual_path(rbf_path(4, 20.0, 20, 0.05), 10, {10});
  const auto w = init_params(spec, 5);
  CHECK(w == init_params(spec, 5));
  CHECK(w != init_params(spec, 6));
  // Zero output layer: the path is the linear basis alone.
  PathSpec basis_only = rbf_path(4, 20.0, 20, 0.05);
  const auto& lay = layout(spec);
  const auto basis = lay.find("basis");
  const std::vector<double> wb(w.begin() + static_cast<std::ptrdiff_t>(basis.offset), w.end());
  for (double t : {0.0, 3.3, 11.1, 20.0}) CHECK(eval_path(spec, w, t) == eval_path(basis_only, wb, t));

  // Zero output layer and zero basis: identically zero.
  std::vector<double> z = w;
  std::fill(z.begin() + static_cast<std::ptrdiff_t>(basis.offset), z.end(), 0.0);
  for (double v : initial_value(spec, z)) CHECK(v == 0.0);

  CHECK(swish(0.0) == 0.0);
  const double h = 1e-6;
  CHECK((swish(h) - swish(-h)) / (2 * h) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("dimension bookkeeping") {
  CHECK(param_count(fourier_path(2, 50.0, 40)) == 162);
  CHECK(param_count(rbf_path(4, 20.0, 20)) == 80);
  CHECK(param_count(residual_path(rbf_path(4, 20.0, 20), 10, {10})) == 344);
  CHECK(latent_count(reparam_fourier_path(2, 50.0, 40)) == 160);
  for (const auto& spec : all_kinds(3, 7.0)) {
    const auto lay = layout(spec);
    std::size_t next = 0;
    for (const auto& s : lay.slices) {
      CHECK(s.offset == next);
      next += s.size;
    }
    CHECK(next == lay.total);
    CHECK(init_params(spec, 1).size() == latent_count(spec));
  }
}

TEST_CASE("path derivative matches central differences in t") {
  const double window = 7.0;
  for (const auto& spec : all_kinds(3, window)) {
    INFO(path_kind_name(spec.kind));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto w = random_w(spec, seed);
      const double t = window * (0.05 + 0.09 * static_cast<double>(seed));
      const auto d = eval_path_dot(spec, w, t);
      const double h = 1e-6 * window;
      const auto xp = eval_path(spec, w, t + h);
      const auto xm = eval_path(spec, w, t - h);
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double fd = (xp[i] - xm[i]) / (2 * h);
        CHECK(std::abs(fd - d[i]) <= 1e-4 * std::max(std::abs(d[i]), 1e-3));
      }
    }
  }
}

TEST_CASE("tape evaluation equals plain evaluation and gradients match") {
  for (const auto& spec : all_kinds(2, 5.0)) {
    INFO(path_kind_name(spec.kind));
    const auto w = random_w(spec, 17);
    const double t = 1.9;
    ad::Tape tape;
    const auto wv = tape.variables(w);
    std::vector<ad::Var> x(2), xd(2);
    eval_path_and_dot<ad::Var>(spec, wv, t, x, xd);
    const auto xp = eval_path(spec, w, t);
    const auto dp = eval_path_dot(spec, w, t);
    CHECK(x[0].value() == xp[0]);
    CHECK(xd[1].value() == dp[1]);
    const ad::Var root = x[0] * xd[1];
    const auto g = tape.gradient(root, wv);
    const auto fd = verify::fd_grad(
        [&](std::span<const double> v) { return eval_path(spec, v, t)[0] * eval_path_dot(spec, v, t)[1]; }, w);
    CHECK(verify::max_rel_error(g, fd, 1e-6) < 1e-5);
  }
}

TEST_CASE("reparameterized Fourier path") {
  const auto spec = reparam_fourier_path(1, 1.0, 1);
  // Free coefficients (sin, cos) = (0, 3); x0 = 4 gives w0 = 1.
  const std::vector<double> free{0.0, 3.0};
  const std::vector<double> x0{4.0};
  CHECK(reparam_fourier_dependent(spec, x0, free)[0] == 1.0);
  const std::vector<double> zeros{0.0, 0.0};
  const std::vector<double> c{2.5};
  CHECK(reparam_fourier_dependent(spec, c, zeros)[0] == 2.5);

  const auto big = reparam_fourier_path(2, 20.0, 20);
  std::mt19937_64 gen(9);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> wf(latent_count(big)), xi{n(gen), n(gen)};
    for (double& v : wf) v = n(gen);
    const auto full = reparam_expand(big, xi, wf);
    const auto x = initial_value(big, full);
    CHECK(x[0] == doctest::Approx(xi[0]).epsilon(1e-13));
    CHECK(x[1] == doctest::Approx(xi[1]).epsilon(1e-13));
  }

  CHECK_THROWS_AS(reparam_fourier_path(1, 1.0, 2, 1), SingularBasisError);
  const auto cos_dep = reparam_fourier_path(1, 1.0, 2, 2);
  const std::vector<double> f4{0.5, 0.1, 0.2, 0.3};
  const auto full = reparam_expand(cos_dep, x0, f4);
  CHECK(initial_value(cos_dep, full)[0] == doctest::Approx(4.0));
}

TEST_CASE("specification validation") {
  CHECK_THROWS_AS(fourier_path(1, 1.0, 0), DomainError);
  CHECK_THROWS_AS(rbf_path(1, 1.0, 3, 0.0), DomainError);
  CHECK_THROWS_AS(fourier_path(1, 0.0, 3), DomainError);
  CHECK_THROWS_AS(residual_path(rbf_path(1, 1.0, 3), 2, {}), DomainError);
  CHECK(parse_path_kind("residual_net") == PathKind::ResidualNet);
  CHECK_THROWS_AS(parse_path_kind("spline"), ConfigError);
}
