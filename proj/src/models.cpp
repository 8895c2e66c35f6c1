#include "niff/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "niff/csv.hpp"
#include "niff/error.hpp"
#include "niff/rng.hpp"
#include "scratch.hpp"

namespace niff {

using detail::mut;
using detail::small_vec;
using detail::view;

// ---------------------------------------------------------------------------
// TimeSeries

void TimeSeries::validate() const {
  if (times.size() != values.size()) throw ShapeError("time series: times and values differ in length");
  if (times.size() < 2) throw DomainError("time series needs at least two samples");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw DomainError("time series times must be strictly increasing");
  }
}

double TimeSeries::at(double t) const {
  if (times.empty()) throw RangeError("empty time series");
  if (t < times.front() || t > times.back() || std::isnan(t)) {
    throw RangeError("t = " + csv::format(t) + " outside signal support [" + csv::format(times.front()) + ", " +
                     csv::format(times.back()) + "]");
  }
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.end()) return values.back();
  const auto i = static_cast<std::size_t>(it - times.begin());
  const double t0 = times[i - 1];
  const double t1 = times[i];
  const double s = (t - t0) / (t1 - t0);
  return values[i - 1] + s * (values[i] - values[i - 1]);
}

TimeSeries TimeSeries::read_csv(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path);
  if (table.header.size() != 2) throw ConfigError(path.string() + ": expected two columns t,value");
  TimeSeries ts{table.column_values(0), table.column_values(1)};
  ts.validate();
  return ts;
}

void TimeSeries::write_csv(const std::filesystem::path& path) const {
  csv::Writer w(path, {"t", "value"});
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double row[2] = {times[i], values[i]};
    w.row(row);
  }
}

// ---------------------------------------------------------------------------
// OdeModel

OdeModel::OdeModel(std::string name, std::vector<std::string> state_names, std::vector<std::string> param_names,
                   std::vector<std::string> output_names)
    : name_(std::move(name)),
      state_names_(std::move(state_names)),
      param_names_(std::move(param_names)),
      output_names_(std::move(output_names)),
      state_scale_(state_names_.size(), 1.0),
      theta_scale_(param_names_.size(), 1.0),
      y_scale_(output_names_.size(), 1.0) {}

void OdeModel::set_scales(std::vector<double> state_scale, std::vector<double> theta_scale,
                          std::vector<double> y_scale) {
  if (state_scale.size() != state_dim() || theta_scale.size() != param_dim() || y_scale.size() != output_dim()) {
    throw ShapeError("scales for model '" + name_ + "' have the wrong length");
  }
  for (const auto* v : {&state_scale, &theta_scale, &y_scale}) {
    for (double s : *v) {
      if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("normalization constants must be positive");
    }
  }
  state_scale_ = std::move(state_scale);
  theta_scale_ = std::move(theta_scale);
  y_scale_ = std::move(y_scale);
}

namespace {

void check_shapes(const OdeModel& m, std::size_t nx, std::size_t nth) {
  if (nx != m.state_dim()) throw ShapeError("state has length " + std::to_string(nx) + ", model '" + m.name() +
                                            "' expects " + std::to_string(m.state_dim()));
  if (nth != m.param_dim()) throw ShapeError("theta has length " + std::to_string(nth) + ", model '" + m.name() +
                                             "' expects " + std::to_string(m.param_dim()));
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// --- Duffing ---------------------------------------------------------------

class Duffing final : public OdeModelBase<Duffing> {
 public:
  static constexpr double kGamma = 0.37;
  static constexpr double kOmega = 1.2;

  Duffing() : OdeModelBase("duffing", {"x1", "x2"}, {"k1", "k2", "k3"}, {"y1"}) {
    set_scales({1.5, 1.0}, {1.0, 1.0, 1.0}, {1.5});
  }

  template <class T>
  void eval_field(std::span<const T> x, double t, std::span<const T> th, std::span<T> dx) const {
    using std::cos;
    dx[0] = x[1];
    dx[1] = -th[0] * x[1] - th[1] * x[0] - th[2] * x[0] * x[0] * x[0] + kGamma * cos(kOmega * t);
  }

  template <class T>
  void eval_response(std::span<const T> x, double, std::span<const T>, std::span<T> y) const {
    y[0] = x[0];
  }
};

// --- Two degree of freedom ------------------------------------------------

class TwoDof final : public OdeModelBase<TwoDof> {
 public:
  TwoDof(double f0, double w0)
      : OdeModelBase("two_dof", {"q1", "q1dot", "q2", "q2dot"},
                     {"m1", "m2", "c1", "c2", "k1", "k2", "eps1", "eps2"}, {"y1", "y2"}),
        f0_(f0),
        w0_(w0) {
    set_scales({1, 1, 1, 1}, {1, 1, 1, 1, 1, 1, 1, 1}, {1, 2});
  }

  template <class T>
  void eval_field(std::span<const T> x, double t, std::span<const T> th, std::span<T> dx) const {
    using std::sin;
    const T& q1 = x[0];
    const T& q1d = x[1];
    const T& q2 = x[2];
    const T& q2d = x[3];
    const T& m1 = th[0];
    const T& m2 = th[1];
    const T& c1 = th[2];
    const T& c2 = th[3];
    const T& k1 = th[4];
    const T& k2 = th[5];
    const T& e1 = th[6];
    const T& e2 = th[7];
    if (ad::value_of(m1) == 0.0 || ad::value_of(m2) == 0.0) {
      throw DomainError("two_dof: zero mass makes the mass matrix singular");
    }
    const T q2d3 = q2d * q2d * q2d;
    const T r1 = f0_ * sin(w0_ * t) - (c1 * q1d - c2 * q2d) - (k1 * q1 - k2 * q2) -
                 (k1 * e1 * q1 * q1 * q1 - c2 * e2 * q2d3);
    const T r2 = -(c2 * q2d) - k2 * q2 - c2 * e2 * q2d3;
    const T q1dd = r1 / m1;
    dx[0] = q1d;
    dx[1] = q1dd;
    dx[2] = q2d;
    dx[3] = r2 / m2 - q1dd;
  }

  template <class T>
  void eval_response(std::span<const T> x, double, std::span<const T>, std::span<T> y) const {
    y[0] = x[0];
    y[1] = x[0] + x[2];
  }

 private:
  double f0_;
  double w0_;
};

// --- Bouc-Wen frame ---------------------------------------------------------

class BoucWen final : public OdeModelBase<BoucWen> {
 public:
  BoucWen(std::size_t n, TimeSeries ag, BoucWenConstants c)
      : OdeModelBase("bouc_wen", state_labels(n), numbered("s", n), numbered("a", n)),
        n_(n),
        ag_(std::move(ag)),
        c_(c) {}

  template <class T>
  void eval_field(std::span<const T> x, double t, std::span<const T> th, std::span<T> dx) const {
    accelerations<T>(x, t, th, dx.first(n_));
    hysteresis<T>(x, dx.subspan(n_, n_));
  }

  template <class T>
  void eval_response(std::span<const T> x, double t, std::span<const T> th, std::span<T> y) const {
    accelerations<T>(x, t, th, y);
  }

 private:
  static std::vector<std::string> state_labels(std::size_t n) {
    auto v = numbered("v", n);
    auto z = numbered("z", n);
    v.insert(v.end(), z.begin(), z.end());
    return v;
  }

  // a = -a_g - (C v + S z) / m with tridiagonal C and S.
  template <class T>
  void accelerations(std::span<const T> x, double t, std::span<const T> s, std::span<T> a) const {
    const double ag = ag_.at(t);
    const double inv_m = 1.0 / c_.mass;
    const auto v = x.first(n_);
    const auto z = x.subspan(n_, n_);
    for (std::size_t l = 0; l < n_; ++l) {
      const T dv_lo = l == 0 ? v[0] : v[l] - v[l - 1];
      const T dz_lo = l == 0 ? z[0] : z[l] - z[l - 1];
      T force = c_.damping * dv_lo + s[l] * dz_lo;
      if (l + 1 < n_) {
        force = force - c_.damping * (v[l + 1] - v[l]) - s[l + 1] * (z[l + 1] - z[l]);
      }
      a[l] = -ag - force * inv_m;
    }
  }

  template <class T>
  void hysteresis(std::span<const T> x, std::span<T> dz) const {
    using std::abs;
    using std::pow;
    const auto v = x.first(n_);
    const auto z = x.subspan(n_, n_);
    for (std::size_t l = 0; l < n_; ++l) {
      const T dv = l == 0 ? v[0] : v[l] - v[l - 1];
      const T az = abs(z[l]);
      if (c_.exponent == 1.0) {
        dz[l] = dv - c_.beta * abs(dv) * z[l] - c_.gamma * dv * az;
      } else {
        dz[l] = dv - c_.beta * abs(dv) * pow(az, c_.exponent - 1.0) * z[l] - c_.gamma * dv * pow(az, c_.exponent);
      }
    }
  }

  std::size_t n_;
  TimeSeries ag_;
  BoucWenConstants c_;
};

// --- Nonlinear energy sink --------------------------------------------------

class Nes final : public OdeModelBase<Nes> {
 public:
  Nes(TimeSeries e1, TimeSeries e2)
      : OdeModelBase("nes", {"x1", "x2", "x3", "x4"}, {"c_nu", "c_f", "k", "z"}, {"y1", "y2", "y3", "y4"}),
        e1_(std::move(e1)),
        e2_(std::move(e2)) {}

  template <class T>
  void eval_field(std::span<const T> x, double t, std::span<const T> th, std::span<T> dx) const {
    dx[0] = x[1];
    dx[1] = relative_acc<T>(x[0], x[1], th) - e1_.at(t);
    dx[2] = x[3];
    dx[3] = relative_acc<T>(x[2], x[3], th) - e2_.at(t);
  }

  template <class T>
  void eval_response(std::span<const T> x, double, std::span<const T> th, std::span<T> y) const {
    y[0] = x[0];
    y[1] = relative_acc<T>(x[0], x[1], th);
    y[2] = x[2];
    y[3] = relative_acc<T>(x[2], x[3], th);
  }

 private:
  template <class T>
  static T relative_acc(const T& disp, const T& vel, std::span<const T> th) {
    using std::tanh;
    const T force = th[0] * vel + th[1] * tanh(200.0 * vel) + th[2] * disp + th[3] * disp * disp * disp;
    return -(force / kNesMass);
  }

  TimeSeries e1_;
  TimeSeries e2_;
};

// --- Linear ------------------------------------------------------------------

class Linear final : public OdeModelBase<Linear> {
 public:
  Linear(std::size_t nx, std::vector<double> a, std::size_t ny, std::vector<double> c)
      : OdeModelBase("linear", numbered("x", nx), {}, numbered("y", ny)), a_(std::move(a)), c_(std::move(c)) {
    if (a_.size() != nx * nx) throw ShapeError("linear_model: A must be state_dim x state_dim");
    if (c_.size() != ny * nx) throw ShapeError("linear_model: C must be output_dim x state_dim");
  }

  template <class T>
  void eval_field(std::span<const T> x, double, std::span<const T>, std::span<T> dx) const {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) dx[i] = ad::dot(x, std::span<const double>(a_.data() + i * n, n));
  }

  template <class T>
  void eval_response(std::span<const T> x, double, std::span<const T>, std::span<T> y) const {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad::dot(x, std::span<const double>(c_.data() + i * n, n));
  }

 private:
  std::vector<double> a_;
  std::vector<double> c_;
};

// --- Normalized wrapper ---------------------------------------------------------

class Normalized final : public OdeModelBase<Normalized> {
 public:
  explicit Normalized(ModelPtr inner)
      : OdeModelBase(inner->name(), inner->state_names(), inner->param_names(), inner->output_names()),
        inner_(std::move(inner)) {}

  template <class T>
  void eval_field(std::span<const T> xn, double t, std::span<const T> thn, std::span<T> dx) const {
    small_vec<T> x(xn.size()), th(thn.size());
    scale_up<T>(xn, inner_->state_scale(), x);
    scale_up<T>(thn, inner_->theta_scale(), th);
    inner_->field(view(x), t, view(th), dx);
    scale_down<T>(dx, inner_->state_scale());
  }

  template <class T>
  void eval_response(std::span<const T> xn, double t, std::span<const T> thn, std::span<T> y) const {
    small_vec<T> x(xn.size()), th(thn.size());
    scale_up<T>(xn, inner_->state_scale(), x);
    scale_up<T>(thn, inner_->theta_scale(), th);
    inner_->response(view(x), t, view(th), y);
    scale_down<T>(y, inner_->y_scale());
  }

 private:
  template <class T>
  static void scale_up(std::span<const T> in, std::span<const double> scale, small_vec<T>& out) {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = scale[i] == 1.0 ? in[i] : in[i] * scale[i];
  }
  template <class T>
  static void scale_down(std::span<T> v, std::span<const double> scale) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (scale[i] != 1.0) v[i] = v[i] / scale[i];
    }
  }

  ModelPtr inner_;
};

}  // namespace

std::vector<double> eval_field(const OdeModel& model, std::span<const double> x, double t,
                               std::span<const double> theta) {
  check_shapes(model, x.size(), theta.size());
  std::vector<double> out(model.state_dim());
  model.field(x, t, theta, out);
  return out;
}

std::vector<double> eval_response(const OdeModel& model, std::span<const double> x, double t,
                                  std::span<const double> theta) {
  check_shapes(model, x.size(), theta.size());
  std::vector<double> out(model.output_dim());
  model.response(x, t, theta, out);
  return out;
}

std::shared_ptr<OdeModel> duffing() { return std::make_shared<Duffing>(); }

std::shared_ptr<OdeModel> two_dof_duffing(double forcing_amplitude, double forcing_frequency) {
  return std::make_shared<TwoDof>(forcing_amplitude, forcing_frequency);
}

std::shared_ptr<OdeModel> bouc_wen_frame(std::size_t n_stories, TimeSeries ground_accel, BoucWenConstants constants) {
  if (n_stories < 1) throw DomainError("bouc_wen_frame: need at least one story");
  if (!(constants.mass > 0.0)) throw DomainError("bouc_wen_frame: mass must be positive");
  ground_accel.validate();
  return std::make_shared<BoucWen>(n_stories, std::move(ground_accel), constants);
}

std::shared_ptr<OdeModel> nes(TimeSeries excitation_1, TimeSeries excitation_2) {
  excitation_1.validate();
  excitation_2.validate();
  return std::make_shared<Nes>(std::move(excitation_1), std::move(excitation_2));
}

std::shared_ptr<OdeModel> linear_model(std::size_t state_dim, std::vector<double> a, std::size_t output_dim,
                                       std::vector<double> c) {
  return std::make_shared<Linear>(state_dim, std::move(a), output_dim, std::move(c));
}

ModelPtr normalized(ModelPtr model) { return std::make_shared<Normalized>(std::move(model)); }

// ---------------------------------------------------------------------------
// Integration

void Trajectory::write_csv(const std::filesystem::path& path) const {
  std::vector<std::string> header{"t"};
  for (std::size_t i = 1; i <= dim; ++i) header.push_back("x" + std::to_string(i));
  csv::Writer w(path, header);
  std::vector<double> row(dim + 1);
  for (std::size_t k = 0; k < size(); ++k) {
    row[0] = times[k];
    std::copy_n(states.begin() + static_cast<std::ptrdiff_t>(k * dim), dim, row.begin() + 1);
    w.row(row);
  }
}

Trajectory rk4_integrate(const OdeModel& model, std::span<const double> x_init, std::span<const double> theta,
                         double t0, double t1, double dt) {
  check_shapes(model, x_init.size(), theta.size());
  if (!(dt > 0.0)) throw DomainError("rk4_integrate: dt must be positive");
  if (!(t1 >= t0)) throw DomainError("rk4_integrate: t_span must be increasing");

  const std::size_t n = model.state_dim();
  const double span = t1 - t0;
  auto full_steps = static_cast<std::size_t>(std::floor(span / dt + 1e-9));
  std::vector<double> grid;
  grid.reserve(full_steps + 2);
  for (std::size_t k = 0; k <= full_steps; ++k) grid.push_back(t0 + static_cast<double>(k) * dt);
  if (t1 - grid.back() > 1e-9 * dt) {
    grid.push_back(t1);
  } else {
    grid.back() = t1;
  }

  Trajectory traj;
  traj.dim = n;
  traj.times = grid;
  traj.states.reserve(grid.size() * n);
  std::vector<double> x(x_init.begin(), x_init.end());
  traj.states.insert(traj.states.end(), x.begin(), x.end());

  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t s = 0; s + 1 < grid.size(); ++s) {
    const double t = grid[s];
    const double h = grid[s + 1] - t;
    model.field(x, t, theta, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    model.field(tmp, t + 0.5 * h, theta, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    model.field(tmp, t + 0.5 * h, theta, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
    model.field(tmp, t + h, theta, k4);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!std::isfinite(x[i])) {
        throw DivergenceError("rk4_integrate: non-finite state at t = " + csv::format(grid[s + 1]));
      }
    }
    traj.states.insert(traj.states.end(), x.begin(), x.end());
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Data

void Dataset::validate() const {
  if (times.empty()) throw DomainError("dataset is empty");
  if (y.size() != times.size() * dim) throw ShapeError("dataset: y has the wrong size");
  if (sigma_y.size() != dim) throw ShapeError("dataset: sigma_y has the wrong length");
  for (double s : sigma_y) {
    if (!(s > 0.0)) throw DomainError("dataset: noise standard deviations must be positive");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw DomainError("dataset: times must be strictly increasing");
  }
}

void Dataset::write_csv(const std::filesystem::path& path) const {
  std::vector<std::string> header{"t"};
  for (std::size_t i = 1; i <= dim; ++i) header.push_back("y" + std::to_string(i));
  csv::Writer w(path, header);
  std::vector<double> r(dim + 1);
  for (std::size_t k = 0; k < size(); ++k) {
    r[0] = times[k];
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(k * dim), dim, r.begin() + 1);
    w.row(r);
  }
}

Dataset Dataset::read_csv(const std::filesystem::path& path, std::vector<double> sigma_y) {
  const csv::Table table = csv::read(path);
  if (table.header.size() < 2) throw ConfigError(path.string() + ": expected columns t,y1..yd");
  Dataset d;
  d.dim = table.header.size() - 1;
  for (const auto& r : table.rows) {
    d.times.push_back(r[0]);
    d.y.insert(d.y.end(), r.begin() + 1, r.end());
  }
  d.sigma_y = std::move(sigma_y);
  d.validate();
  return d;
}

Dataset synthesize_dataset(const OdeModel& model, const Trajectory& trajectory, std::span<const double> theta,
                           std::size_t sample_stride, double noise_fraction, std::uint64_t seed, NoiseRule rule) {
  if (sample_stride < 1) throw DomainError("synthesize_dataset: sample_stride must be >= 1");
  if (!(noise_fraction >= 0.0)) throw DomainError("synthesize_dataset: noise_fraction must be >= 0");
  check_shapes(model, trajectory.dim, theta.size());

  Dataset d;
  d.dim = model.output_dim();
  std::vector<double> yk(d.dim);
  for (std::size_t k = 0; k < trajectory.size(); k += sample_stride) {
    model.response(trajectory.state(k), trajectory.times[k], theta, yk);
    d.times.push_back(trajectory.times[k]);
    d.y.insert(d.y.end(), yk.begin(), yk.end());
  }

  d.sigma_y.assign(d.dim, 0.0);
  if (rule == NoiseRule::FractionOfScale) {
    for (std::size_t c = 0; c < d.dim; ++c) d.sigma_y[c] = noise_fraction * model.y_scale()[c];
  } else {
    for (std::size_t c = 0; c < d.dim; ++c) {
      double ss = 0.0;
      for (std::size_t k = 0; k < d.size(); ++k) ss += d.y[k * d.dim + c] * d.y[k * d.dim + c];
      d.sigma_y[c] = noise_fraction * std::sqrt(ss / static_cast<double>(d.size()));
    }
  }

  Rng rng(seed);
  for (std::size_t k = 0; k < d.size(); ++k) {
    for (std::size_t c = 0; c < d.dim; ++c) {
      const double e = rng.gaussian();
      d.y[k * d.dim + c] += d.sigma_y[c] * e;
    }
  }
  return d;
}

Dataset normalize_dataset(const Dataset& data, std::span<const double> y_scale) {
  if (y_scale.size() != data.dim) throw ShapeError("normalize_dataset: y_scale has the wrong length");
  Dataset out = data;
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t c = 0; c < out.dim; ++c) out.y[k * out.dim + c] /= y_scale[c];
  }
  for (std::size_t c = 0; c < out.dim; ++c) out.sigma_y[c] /= y_scale[c];
  return out;
}

}  // namespace niff
