#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "niff/error.hpp"
#include "niff/models.hpp"

using namespace niff;

namespace {

std::vector<double> field_via_tape(const OdeModel& m, std::span<const double> x, double t,
                                   std::span<const double> th) {
  ad::Tape tape;
  const auto xv = tape.variables(x);
  const auto tv = tape.variables(th);
  std::vector<ad::Var> out(m.state_dim());
  m.field(std::span<const ad::Var>(xv), t, std::span<const ad::Var>(tv), out);
  std::vector<double> v;
  for (const auto& o : out) v.push_back(o.value());
  return v;
}

std::vector<double> response_via_tape(const OdeModel& m, std::span<const double> x, double t,
                                      std::span<const double> th) {
  ad::Tape tape;
  const auto xv = tape.variables(x);
  const auto tv = tape.variables(th);
  std::vector<ad::Var> out(m.output_dim());
  m.response(std::span<const ad::Var>(xv), t, std::span<const ad::Var>(tv), out);
  std::vector<double> v;
  for (const auto& o : out) v.push_back(o.value());
  return v;
}

TimeSeries ramp(double t_end, double slope) {
  TimeSeries ts;
  for (int k = 0; k <= 100; ++k) {
    const double t = t_end * k / 100.0;
    ts.times.push_back(t);
    ts.values.push_back(slope * t + std::sin(3.0 * t));
  }
  return ts;
}

}  // namespace

TEST_CASE("duffing") {
  const auto m = duffing();
  CHECK(m->state_dim() == 2);
  CHECK(m->param_dim() == 3);
  CHECK(m->output_dim() == 1);
  CHECK(m->state_scale()[0] == 1.5);
  CHECK(m->state_scale()[1] == 1.0);
  CHECK(m->y_scale()[0] == 1.5);
  const double th[] = {0.3, -1.0, 1.0};
  const double x1[] = {1.0, 0.0};
  auto f = eval_field(*m, x1, 0.0, th);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == doctest::Approx(0.37).epsilon(1e-15));
  const double x0[] = {0.0, 0.0};
  f = eval_field(*m, x0, 0.0, th);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == doctest::Approx(0.37).epsilon(1e-15));
  CHECK(eval_response(*m, x1, 2.0, th)[0] == 1.0);
  CHECK_THROWS_AS(eval_field(*m, th, 0.0, th), ShapeError);
}

TEST_CASE("two-dof system") {
  const auto m = two_dof_duffing(0.0, 1.0);
  CHECK(m->state_dim() == 4);
  CHECK(m->param_dim() == 8);
  CHECK(m->output_dim() == 2);
  for (double s : m->state_scale()) CHECK(s == 1.0);
  CHECK(m->y_scale()[0] == 1.0);
  CHECK(m->y_scale()[1] == 2.0);
  const double th[] = {1, 1, 0.2, 0.2, 1, 1, 0.2, 0.2};
  const double x[] = {0, 0, 0.5, 0};
  const auto f = eval_field(*m, x, 0.0, th);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == doctest::Approx(0.5));
  CHECK(f[2] == 0.0);
  CHECK(f[3] == doctest::Approx(-1.0));
  const auto y = eval_response(*m, x, 0.0, th);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.5);
  const double zero_mass[] = {0, 1, 0.2, 0.2, 1, 1, 0.2, 0.2};
  CHECK_THROWS_AS(eval_field(*m, x, 0.0, zero_mass), DomainError);
}

TEST_CASE("bouc-wen frame") {
  TimeSeries ag{{0.0, 10.0}, {1.0, 1.0}};
  const auto m = bouc_wen_frame(3, ag);
  CHECK(m->state_dim() == 6);
  CHECK(m->param_dim() == 3);
  CHECK(m->output_dim() == 3);
  const double s[] = {9.0, 8.5, 9.5};
  const std::vector<double> rest(6, 0.0);
  CHECK(eval_response(*m, rest, 1.0, s)[0] == -1.0);
  // Every term of dz_1 carries v_1.
  const double x[] = {0.0, 0.4, -0.3, 0.2, 0.1, -0.5};
  CHECK(eval_field(*m, x, 1.0, s)[3] == 0.0);
  CHECK_THROWS_AS(eval_field(*m, x, 11.0, s), RangeError);
  CHECK_THROWS_AS(bouc_wen_frame(0, ag), DomainError);
}

TEST_CASE("nonlinear energy sink") {
  const auto m = nes(ramp(5.0, 1.0), ramp(5.0, -1.0));
  CHECK(m->state_dim() == 4);
  CHECK(m->param_dim() == 4);
  CHECK(m->output_dim() == 4);
  CHECK(kNesMass == 0.664);
  const double th[] = {0.3, 0.2, 10.0, 500.0};
  const std::vector<double> rest(4, 0.0);
  const auto y = eval_response(*m, rest, 1.0, th);
  CHECK(y[1] == 0.0);
  CHECK(y[3] == 0.0);
  // Only the friction term: acc = -c_f tanh(200 v) / m.
  const double x[] = {0.0, 0.001, 0.0, 0.0};
  const double friction_only[] = {0.0, 1.0, 0.0, 0.0};
  CHECK(eval_response(*m, x, 1.0, friction_only)[1] == doctest::Approx(-std::tanh(0.2) / 0.664));
}

TEST_CASE("tape evaluation equals plain evaluation exactly") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<ModelPtr> models = {duffing(), two_dof_duffing(0.8, 1.3), bouc_wen_frame(4, ramp(10.0, 0.5)),
                                  nes(ramp(10.0, 1.0), ramp(10.0, 2.0)), normalized(duffing())};
  for (const auto& m : models) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> x(m->state_dim()), th(m->param_dim());
      for (double& v : x) v = u(gen);
      for (double& v : th) v = u(gen) + 2.0;
      const double t = 0.5 + 4.0 * (u(gen) + 1.5) / 3.0;
      INFO(m->name());
      CHECK(field_via_tape(*m, x, t, th) == eval_field(*m, x, t, th));
      CHECK(response_via_tape(*m, x, t, th) == eval_response(*m, x, t, th));
    }
  }
}

TEST_CASE("normalized wrapper") {
  const auto phys = duffing();
  const auto norm = normalized(phys);
  const double xn[] = {0.4, -0.2};
  const double thn[] = {0.3, -1.0, 1.0};
  const double x[] = {0.4 * 1.5, -0.2};
  const auto fp = eval_field(*phys, x, 0.7, thn);
  const auto fn = eval_field(*norm, xn, 0.7, thn);
  CHECK(fn[0] == doctest::Approx(fp[0] / 1.5));
  CHECK(fn[1] == doctest::Approx(fp[1]));
  CHECK(eval_response(*norm, xn, 0.0, thn)[0] == doctest::Approx(0.4));
}

TEST_CASE("rk4 on exponential decay") {
  const auto m = linear_model(1, {-1.0}, 1, {1.0});
  const double x0[] = {1.0};
  const auto one = rk4_integrate(*m, x0, {}, 0.0, 0.1, 0.1);
  REQUIRE(one.size() == 2);
  // One classical RK4 step on dx/dt = -x is the degree-4 Taylor polynomial of exp(-h).
  const double h = 0.1;
  CHECK(one.state(1)[0] == doctest::Approx(1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24).epsilon(1e-15));
  CHECK(std::abs(one.state(1)[0] - std::exp(-0.1)) < 1e-7);

  auto max_err = [&](double dt) {
    const auto tr = rk4_integrate(*m, x0, {}, 0.0, 2.0, dt);
    double e = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) e = std::max(e, std::abs(tr.state(k)[0] - std::exp(-tr.times[k])));
    return e;
  };
  CHECK(max_err(0.1) / max_err(0.05) >= 12.0);

  const auto partial = rk4_integrate(*m, x0, {}, 0.0, 0.25, 0.1);
  CHECK(partial.times.back() == 0.25);
  CHECK(partial.size() == 4);

  const auto still = linear_model(2, {0, 0, 0, 0}, 1, {1, 0});
  const double c[] = {0.7, -3.0};
  const auto tr = rk4_integrate(*still, c, {}, 0.0, 1.0, 0.1);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    CHECK(tr.state(k)[0] == 0.7);
    CHECK(tr.state(k)[1] == -3.0);
  }
  CHECK_THROWS_AS(rk4_integrate(*m, x0, {}, 0.0, 1.0, 0.0), DomainError);
  const auto blowup = linear_model(1, {1e200}, 1, {1.0});
  CHECK_THROWS_AS(rk4_integrate(*blowup, x0, {}, 0.0, 1.0, 0.5), DivergenceError);
}

TEST_CASE("synthetic data") {
  const auto m = duffing();
  const double x0[] = {1.0, 0.0};
  const double th[] = {0.3, -1.0, 1.0};
  const auto tr = rk4_integrate(*m, x0, th, 0.0, 5.0, 0.01);
  const auto clean = synthesize_dataset(*m, tr, th, 10, 0.0, 1);
  CHECK(clean.size() == 51);
  for (std::size_t k = 0; k < clean.size(); ++k) CHECK(clean.y[k] == tr.state(10 * k)[0]);

  const auto a = synthesize_dataset(*m, tr, th, 10, 0.05, 42);
  const auto b = synthesize_dataset(*m, tr, th, 10, 0.05, 42);
  CHECK(a.sigma_y[0] == doctest::Approx(0.075));
  CHECK(a.y == b.y);
  const auto c = synthesize_dataset(*m, tr, th, 10, 0.05, 43);
  CHECK(a.y != c.y);

  const auto rms = synthesize_dataset(*m, tr, th, 10, 0.01, 1, NoiseRule::FractionOfRms);
  double ss = 0.0;
  for (double v : clean.y) ss += v * v;
  CHECK(rms.sigma_y[0] == doctest::Approx(0.01 * std::sqrt(ss / 51.0)));

  const auto n = normalize_dataset(a, m->y_scale());
  CHECK(n.sigma_y[0] == doctest::Approx(0.05));
  CHECK(n.y[3] == doctest::Approx(a.y[3] / 1.5));
}

TEST_CASE("csv round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "niff_test_models";
  std::filesystem::create_directories(dir);
  TimeSeries ts{{0.0, 0.5, 1.0}, {1.0, 3.0, 2.0}};
  ts.write_csv(dir / "exc.csv");
  const auto back = TimeSeries::read_csv(dir / "exc.csv");
  CHECK(back.times == ts.times);
  CHECK(back.values == ts.values);
  CHECK(back.at(0.25) == doctest::Approx(2.0));
  CHECK(back.at(1.0) == 2.0);
  CHECK_THROWS_AS(back.at(1.5), RangeError);

  Dataset d;
  d.times = {0.1, 0.2};
  d.y = {1.0 / 3.0, 2.0, -0.1, 1e-17};
  d.dim = 2;
  d.sigma_y = {0.1, 0.2};
  d.write_csv(dir / "data.csv");
  const auto e = Dataset::read_csv(dir / "data.csv", {0.1, 0.2});
  CHECK(e.y == d.y);
  CHECK(e.times == d.times);
  std::filesystem::remove_all(dir);
}
