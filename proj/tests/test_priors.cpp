#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "niff/error.hpp"
#include "niff/priors.hpp"
#include "niff/verify.hpp"

using namespace niff;

namespace {

PriorConfig config(double beta1, double beta2, double window, std::size_t n_t = 10) {
  PriorConfig c;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.window = window;
  c.n_t = n_t;
  return c;
}

}  // namespace

TEST_CASE("h1 on constant paths") {
  const auto still = linear_model(2, {0, 0, 0, 0}, 1, {1, 0});
  const auto decay = linear_model(2, {-1, 0, 0, -1}, 1, {1, 0});
  const auto spec = fourier_path(2, 3.0, 2);
  std::vector<double> w(param_count(spec), 0.0);
  w[0] = 0.7;  // state 1 constant term
  w[5] = -1.2;  // state 2 constant term
  const std::vector<double> c{0.7, -1.2};
  for (double t : {0.0, 1.1, 2.9}) {
    CHECK(h1_pointwise<double>(*still, spec, w, {}, t) == 0.0);
    CHECK(h1_pointwise<double>(*decay, spec, w, {}, t) ==
          doctest::Approx(verify::exact_h1_constant_path(c, 3.0) / 3.0).epsilon(1e-14));
  }
}

TEST_CASE("h2 kernel") {
  const auto spec = fourier_path(2, 1.0, 1);
  std::vector<double> w{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const std::vector<double> zero{0.0, 0.0};
  CHECK(h2_kernel<double>(spec, w, zero) == 1.0);
  const std::vector<double> x0{1.0, 0.0};
  CHECK(h2_kernel<double>(spec, w, x0) == 0.0);
  std::vector<double> neg_w(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) neg_w[i] = -w[i];
  const std::vector<double> y0{0.3, -0.4};
  const std::vector<double> neg_y0{-0.3, 0.4};
  CHECK(h2_kernel<double>(spec, w, y0) == h2_kernel<double>(spec, neg_w, neg_y0));
}

TEST_CASE("log prior estimate") {
  const auto decay = linear_model(1, {-1}, 1, {1});
  const auto spec = fourier_path(1, 50.0, 1);
  std::vector<double> w{1.0, 0.0, 0.0};  // constant unit path: unit residual everywhere
  const std::vector<double> at_path{1.0};
  const std::vector<double> times{3.0, 17.0, 44.0};
  CHECK(log_pi_estimate<double>(config(0.0, 1.0, 50.0), *decay, spec, w, at_path, {}, times) == 0.0);

  const std::vector<double> x0{0.5};
  const double expected = -200.0 * 50.0 * 1.0 - 7.0 * 0.25;
  CHECK(log_pi_estimate<double>(config(200.0, 7.0, 50.0), *decay, spec, w, x0, {}, times) ==
        doctest::Approx(expected).epsilon(1e-14));

  const auto still = linear_model(1, {0}, 1, {1});
  CHECK(log_pi_estimate<double>(config(200.0, 1e5, 50.0), *still, spec, w, at_path, {}, times) == 0.0);

  double last = 0.0;
  for (double b2 : {0.0, 1.0, 10.0, 1e3}) {
    const double v = log_pi_estimate<double>(config(1.0, b2, 50.0), *decay, spec, w, x0, {}, times);
    if (b2 > 0.0) CHECK(v < last);
    last = v;
  }
  CHECK_THROWS_AS(log_pi_estimate<double>(config(1.0, 1.0, 50.0), *decay, spec, w, x0, {}, {}), DomainError);

  // Discrete grids scale by their span.
  PriorConfig grid = config(1.0, 0.0, 50.0, 2);
  grid.time_mode = TimeMode::DiscreteGrid;
  grid.grid = {10.0, 12.0, 14.0};
  CHECK(log_pi_estimate<double>(grid, *decay, spec, w, x0, {}, times) == doctest::Approx(-4.0));
}

TEST_CASE("estimator is unbiased for an integrable residual") {
  // x = a + b sin(wt) + c cos(wt) under dx/dt = -x over one period:
  // integral of (dx/dt + x)^2 = a^2 T + ((b - c w)^2 + (c + b w)^2) T / 2.
  const double window = 4.0;
  const double a = 0.3, b = -0.8, c = 0.5;
  const double om = 2.0 * std::numbers::pi / window;
  const double exact = a * a * window + ((b - c * om) * (b - c * om) + (c + b * om) * (c + b * om)) * window / 2.0;

  const auto decay = linear_model(1, {-1}, 1, {1});
  const auto spec = fourier_path(1, window, 1);
  const std::vector<double> w{a, b, c};
  const std::vector<double> x0{a + c};
  const auto cfg = config(1.0, 0.0, window, 10);
  Rng rng(2024);
  const int reps = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const auto times = sample_times(cfg, cfg.n_t, rng);
    const double v = -log_pi_estimate<double>(cfg, *decay, spec, w, x0, {}, times);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - exact) < 3.0 * se);
}

TEST_CASE("time sampling") {
  PriorConfig grid = config(1.0, 1.0, 10.0, 1);
  grid.time_mode = TimeMode::DiscreteGrid;
  grid.grid = {5.0};
  Rng rng(1);
  CHECK(sample_times(grid, 1, rng) == std::vector<double>{5.0});
  CHECK_THROWS_AS(sample_times(grid, 2, rng), DomainError);

  const auto cfg = config(1.0, 1.0, 10.0);
  const auto ts = sample_times(cfg, 100000, rng);
  double s = 0.0;
  for (double t : ts) {
    CHECK(t >= 0.0);
    CHECK(t <= 10.0);
    s += t;
  }
  const double se = 10.0 / std::sqrt(12.0) / std::sqrt(1e5);
  CHECK(std::abs(s / 1e5 - 5.0) < 3.0 * se);

  Rng r1(77), r2(77);
  CHECK(sample_times(cfg, 10, r1) == sample_times(cfg, 10, r2));
}

TEST_CASE("Duffing log prior: tape value is bit-identical and gradient matches") {
  const auto model = normalized(duffing());
  const auto spec = fourier_path(2, 20.0, 20);
  const auto cfg = config(200.0, 1e5, 20.0);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Rng rng(8);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t nw = param_count(spec);
    std::vector<double> z(nw + 2 + 3);
    for (double& v : z) v = 0.1 * u(gen);
    const auto times = sample_times(cfg, 10, rng);
    auto plain = [&](std::span<const double> v) {
      return log_pi_estimate<double>(cfg, *model, spec, v.first(nw), v.subspan(nw, 2), v.subspan(nw + 2), times);
    };
    auto taped = [&](std::span<const ad::Var> v) {
      return log_pi_estimate<ad::Var>(cfg, *model, spec, v.first(nw), v.subspan(nw, 2), v.subspan(nw + 2), times);
    };
    const auto [val, grad] = ad::value_and_grad(taped, z);
    CHECK(val == plain(z));
    CHECK(verify::max_rel_error(grad, verify::fd_grad(plain, z), 1e-2) < 1e-5);
  }
}
