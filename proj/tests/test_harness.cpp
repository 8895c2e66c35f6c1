#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "niff/error.hpp"
#include "niff/harness.hpp"

using namespace niff;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(NIFF_SOURCE_DIR) / "configs";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("niff_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Duffing over 4 s with a short run of every algorithm.
ExperimentConfig tiny_config() {
  return parse_config_string(R"(
name = "tiny"
window = 4.0
seed = 3
theta_init = [0.0, 0.0, 0.0]

[model]
kind = "duffing"

[data]
theta_true = [0.3, -1.0, 1.0]
x_init = [1.0, 0.0]
seed = 5

[path]
kind = "fourier"
modes = 4
period = 8.0

[nsvi]
niter = 150
log_every = 50
lr = { initial = 1e-3 }

[npsgld]
niter = 200
n_chains = 2
burn_in = 100
thin = 10
trace_every = 50

[summary]
grid_points = 20
guide_samples = 30

[predict]
max_samples = 5
)");
}

}  // namespace

TEST_CASE("quantile") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  // Linear interpolation between order statistics: h = (n - 1) q = 0.75.
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(quantile({7.0}, 0.05) == 7.0);
  CHECK_THROWS_AS(quantile({}, 0.5), DomainError);
  CHECK_THROWS_AS(quantile({1.0}, 1.5), DomainError);

  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> v(1 + rep % 17);
    for (auto& x : v) x = nd(gen);
    const double a = quantile(v, 0.05), b = quantile(v, 0.5), c = quantile(v, 0.95);
    CHECK(a <= b);
    CHECK(b <= c);
  }
}

TEST_CASE("mse metric") {
  const std::vector<double> meas_d{0.1, -0.2, 0.3}, meas_a{1.0, 2.0, -1.0};
  CHECK(mse_metric(meas_d, meas_a, meas_d, meas_a) == 0.0);

  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(mse_metric(one, one, zero, zero, 1.0, 1.0) == doctest::Approx(200.0).epsilon(1e-15));

  const double both = mse_metric(one, zero, zero, zero, 1.0, 1.0);
  CHECK(mse_metric(one, zero, zero, zero, 2.0, 1.0) == doctest::Approx(both / 2).epsilon(1e-15));

  CHECK(kMseDisplacementVariance == 1.44e-12);
  CHECK(kMseAccelerationVariance == 5.32e-3);
  const std::vector<double> pd{1e-6}, pa{0.1};
  CHECK(mse_metric(pd, pa, zero, zero) ==
        mse_metric(pd, pa, zero, zero, kMseDisplacementVariance, kMseAccelerationVariance));

  // Two samples average their per-sample values.
  const std::vector<double> two_d{1.0, 3.0}, two_a{0.0, 0.0};
  CHECK(mse_metric(two_d, two_a, zero, zero, 1.0, 1.0) == doctest::Approx(500.0).epsilon(1e-15));

  CHECK_THROWS_AS(mse_metric(one, one, std::vector<double>{}, std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(mse_metric(one, two_a, zero, zero), ShapeError);
}

TEST_CASE("posterior predictive") {
  const auto m = duffing();
  const std::vector<double> th{0.3, -1.0, 1.0}, x0{1.0, 0.0}, sigma{0.0};
  Rng rng(1);

  SUBCASE("one sample equals the integrator and collapses the bands") {
    const auto res = posterior_predictive(*m, th, 3, x0, 2.0, 0.01, sigma, rng);
    const auto tr = rk4_integrate(*m, x0, th, 0.0, 2.0, 0.01);
    REQUIRE(res.times.size() == tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      for (std::size_t d = 0; d < 2; ++d) {
        CHECK(res.states[d].q50[i] == tr.state(i)[d]);
        CHECK(res.states[d].q05[i] == res.states[d].q95[i]);
      }
      CHECK(res.measurements[0].q50[i] == tr.state(i)[0]);
    }
  }
  SUBCASE("zero horizon keeps only the initial state") {
    const auto res = posterior_predictive(*m, th, 3, x0, 0.0, 0.01, sigma, rng);
    REQUIRE(res.times.size() == 1);
    CHECK(res.states[0].q50[0] == 1.0);
    CHECK(res.states[1].q50[0] == 0.0);
  }
  SUBCASE("a divergent sample is flagged, not fatal") {
    const std::vector<double> two{0.3, -1.0, 1.0, 0.0, 0.0, -100.0};
    const auto res = posterior_predictive(*m, two, 3, x0, 2.0, 0.01, sigma, rng);
    CHECK(res.used == 1);
    REQUIRE(res.flagged.size() == 1);
    CHECK(res.flagged[0] == 1);
  }
  SUBCASE("measurement noise widens only the measurement bands") {
    std::vector<double> many;
    for (int k = 0; k < 50; ++k) many.insert(many.end(), th.begin(), th.end());
    const std::vector<double> s{0.1};
    const auto res = posterior_predictive(*m, many, 3, x0, 1.0, 0.01, s, rng);
    CHECK(res.states[0].q05.back() == res.states[0].q95.back());
    CHECK(res.measurements[0].q95.back() - res.measurements[0].q05.back() > 0.1);
  }
  CHECK_THROWS_AS(posterior_predictive(*m, std::vector<double>{}, 3, x0, 1.0, 0.01, sigma, rng), DomainError);
}

TEST_CASE("config files") {
  for (const auto& entry : fs::directory_iterator(kConfigs)) {
    if (entry.path().extension() != ".toml") continue;
    CAPTURE(entry.path().string());
    const ExperimentConfig cfg = parse_config(entry.path());
    const ExperimentConfig back = parse_config_string(serialize_config(cfg));
    CHECK(back == cfg);
    CHECK(serialize_config(back) == serialize_config(cfg));
    CHECK_NOTHROW(prepare(cfg));
  }
}

TEST_CASE("config extends and paths") {
  const auto base = parse_config(kConfigs / "duffing_base.toml");
  const auto nsgld = parse_config(kConfigs / "duffing_nsgld.toml");
  CHECK(nsgld.algorithm == "nsgld");
  CHECK(nsgld.npsgld.main.rho.initial == 1e-6);
  CHECK(nsgld.npsgld.main.alpha == base.npsgld.main.alpha);
  CHECK(nsgld.npsgld.main.delta == base.npsgld.main.delta);
  CHECK(nsgld.nsvi == base.nsvi);
  CHECK(nsgld.data == base.data);

  const fs::path dir = scratch_dir("extends");
  {
    std::ofstream(dir / "base.toml") << "[data]\nfile = \"meas.csv\"\nsigma_y = [0.1]\n";
    std::ofstream(dir / "child.toml") << "[extends]\nbase = \"base.toml\"\n[nsvi]\nlr = { factor = 0.5 }\n";
  }
  const auto child = parse_config(dir / "child.toml");
  CHECK(fs::path(child.data.file).is_absolute());
  CHECK(fs::path(child.data.file) == fs::weakly_canonical(dir) / "meas.csv");
  CHECK(child.nsvi.lr.factor == 0.5);
  CHECK(child.nsvi.lr.initial == NsviConfig{}.lr.initial);

  {
    std::ofstream(dir / "loop_a.toml") << "[extends]\nbase = \"loop_b.toml\"\n";
    std::ofstream(dir / "loop_b.toml") << "[extends]\nbase = \"loop_a.toml\"\n";
  }
  CHECK_THROWS_AS(parse_config(dir / "loop_a.toml"), ConfigError);
}

TEST_CASE("config errors name the field") {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_config_string(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  const std::string sim = "[data]\ntheta_true = [0.3, -1.0, 1.0]\nx_init = [1.0, 0.0]\n";
  CHECK(message(sim + "[nsvi]\nnitr = 5\n").find("nsvi.nitr") != std::string::npos);
  CHECK(message(sim + "[npsgld]\nniter = 10\nburn_in = 10\n").find("npsgld.burn_in") != std::string::npos);
  CHECK(message(sim + "[npsgld]\nthin = 0\n").find("npsgld.thin") != std::string::npos);
  CHECK(message(sim + "[model]\nkind = \"two_dof\"\n").find("forcing_amplitude") != std::string::npos);
  CHECK(message(sim + "[path]\nmodes = \"ten\"\n").find("path.modes") != std::string::npos);
  CHECK(message(sim + "[nsvi]\nlr = { initial = 1e-3, rate = 2 }\n").find("nsvi.lr.rate") != std::string::npos);
  CHECK(message("[data]\nx_init = [1.0, 0.0]\n").find("data.theta_true") != std::string::npos);
  CHECK(message("window = ").find(":1:") != std::string::npos);

  auto cfg = parse_config_string(sim);
  cfg.theta_init = {1.0};
  CHECK_THROWS_WITH_AS(prepare(cfg), doctest::Contains("theta_init"), ConfigError);
}

TEST_CASE("summaries of a degenerate posterior") {
  auto cfg = tiny_config();
  const Experiment exp = prepare(cfg);
  PosteriorSamples s;
  s.w_dim = param_count(exp.problem.spec);
  s.theta_dim = 3;
  const auto w = init_params(exp.problem.spec, 1);
  for (std::size_t k = 0; k < 4; ++k) {
    s.chain.push_back(0);
    s.iter.push_back(k);
    s.w.insert(s.w.end(), w.begin(), w.end());
    s.theta.insert(s.theta.end(), {1.0, 2.0, 3.0});
  }
  const auto sum = summarize(exp, s);
  REQUIRE(sum.grid.size() == 20);
  CHECK(sum.grid.front() == 0.0);
  CHECK(sum.grid.back() == 4.0);
  for (std::size_t i = 0; i < sum.grid.size(); ++i) {
    const auto x = eval_path(exp.problem.spec, w, sum.grid[i]);
    for (std::size_t d = 0; d < 2; ++d) {
      CHECK(sum.states[d].q05[i] == sum.states[d].q95[i]);
      CHECK(sum.states[d].q50[i] == doctest::Approx(x[d] * exp.model->state_scale()[d]).epsilon(1e-14));
    }
  }
  CHECK(sum.theta_mean == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(sum.theta_sd == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(sum.state_rmse.size() == 2);
}

TEST_CASE("samples file round trip") {
  const Experiment exp = prepare(tiny_config());
  PosteriorSamples s;
  s.w_dim = param_count(exp.problem.spec);
  s.theta_dim = 3;
  Rng rng(2);
  for (std::size_t k = 0; k < 3; ++k) {
    s.chain.push_back(k % 2);
    s.iter.push_back(10 * k);
    const auto w = rng.gaussian_vector(s.w_dim);
    s.w.insert(s.w.end(), w.begin(), w.end());
    const auto th = rng.gaussian_vector(3);
    s.theta.insert(s.theta.end(), th.begin(), th.end());
  }
  const fs::path dir = scratch_dir("samples");
  write_samples(dir / "samples.csv", exp, s);
  const auto back = read_samples(dir / "samples.csv", exp);
  CHECK(back.chain == s.chain);
  CHECK(back.iter == s.iter);
  CHECK(back.w == s.w);
  CHECK(back.theta == s.theta);
  CHECK(slurp(dir / "samples.csv").rfind("chain,iter,w0,w1,", 0) == 0);
}

TEST_CASE("commands are deterministic") {
  const auto cfg = tiny_config();
  const std::pair<Command, std::vector<std::string>> runs[] = {
      {Command::Simulate, {"data.csv", "truth.csv"}},
      {Command::FitNsvi, {"trace.csv", "samples.csv", "x0_chain.csv"}},
      {Command::FitNpsgld, {"trace.csv", "samples.csv", "x0_chain.csv"}},
      {Command::Filter, {"trace.csv", "samples.csv"}},
  };
  for (const auto& [cmd, files] : runs) {
    CAPTURE(static_cast<int>(cmd));
    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    RunOptions oa{a, std::nullopt, std::nullopt, {}}, ob{b, std::nullopt, std::size_t{2}, {}};
    run_experiment(cfg, cmd, oa);
    run_experiment(cfg, cmd, ob);
    for (const auto& f : files) {
      CAPTURE(f);
      REQUIRE(fs::exists(a / f));
      CHECK(slurp(a / f) == slurp(b / f));
    }
    if (cmd != Command::Simulate) {
      CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
      // Predictive bands from the samples just written.
      run_experiment(cfg, Command::Predict, oa);
      run_experiment(cfg, Command::Predict, ob);
      CHECK(slurp(a / "predictive.csv") == slurp(b / "predictive.csv"));
      // Summaries recomputed from disk match the ones written by the fit.
      const std::string before = slurp(a / "summary.json");
      summarize_dir(a);
      CHECK(slurp(a / "summary.json") == before);
    }
  }
}

TEST_CASE("run outputs") {
  const auto cfg = tiny_config();
  const fs::path dir = scratch_dir("outputs");
  RunOptions opt{dir, std::nullopt, std::nullopt, {}};

  run_experiment(cfg, Command::FitNpsgld, opt);
  const auto s = read_samples(dir / "samples.csv", prepare(cfg));
  CHECK(s.size() == 2 * 10);  // two chains, (200 - 100) / 10 draws each
  CHECK(s.theta_dim == 3);
  CHECK(slurp(dir / "trace.csv").rfind("iter,chain,k1,k2,k3\n", 0) == 0);
  CHECK(slurp(dir / "samples.csv").find("x0") == std::string::npos);

  run_experiment(cfg, Command::FitNsvi, opt);
  CHECK(read_samples(dir / "samples.csv", prepare(cfg)).size() == 30);
  CHECK(slurp(dir / "trace.csv")
            .rfind("iter,elbo_like,elbo_ham,elbo_prior,elbo_entropy,elbo_partition,k1,k2,k3,x0_x1,x0_x2\n", 0) == 0);

  run_experiment(cfg, Command::Filter, opt);
  const auto f = read_samples(dir / "samples.csv", prepare(cfg));
  CHECK(f.theta_dim == 0);
  CHECK(slurp(dir / "summary.json").find("\"theta\"") == std::string::npos);

  const auto seeded = parse_config_string(serialize_config(cfg));
  RunOptions other{dir, std::uint64_t{99}, std::nullopt, {}};
  run_experiment(seeded, Command::Simulate, other);
  CHECK(parse_config(dir / "config.toml").seed == 99);
}
