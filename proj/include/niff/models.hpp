#pragma once

// ODE system definitions dx/dt = f(x, t; theta), y = R(x, t; theta), the
// benchmark systems, a classical RK4 integrator and synthetic data generation.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "niff/diffengine.hpp"

namespace niff {

/// Uniformly or non-uniformly sampled scalar signal, linearly interpolated.
struct TimeSeries {
  std::vector<double> times;
  std::vector<double> values;

  /// Linear interpolation; throws RangeError outside [times.front(), times.back()].
  double at(double t) const;
  void validate() const;

  /// Two columns `t,value` with a header row.
  static TimeSeries read_csv(const std::filesystem::path& path);
  void write_csv(const std::filesystem::path& path) const;
};

class OdeModel {
 public:
  virtual ~OdeModel() = default;

  const std::string& name() const noexcept { return name_; }
  std::size_t state_dim() const noexcept { return state_names_.size(); }
  std::size_t param_dim() const noexcept { return param_names_.size(); }
  std::size_t output_dim() const noexcept { return output_names_.size(); }
  const std::vector<std::string>& state_names() const noexcept { return state_names_; }
  const std::vector<std::string>& param_names() const noexcept { return param_names_; }
  const std::vector<std::string>& output_names() const noexcept { return output_names_; }

  std::span<const double> state_scale() const noexcept { return state_scale_; }
  std::span<const double> theta_scale() const noexcept { return theta_scale_; }
  std::span<const double> y_scale() const noexcept { return y_scale_; }

  /// Overrides the normalization constants (all entries must be > 0).
  void set_scales(std::vector<double> state_scale, std::vector<double> theta_scale, std::vector<double> y_scale);

  virtual void field(std::span<const double> x, double t, std::span<const double> theta,
                     std::span<double> dxdt) const = 0;
  virtual void field(std::span<const ad::Var> x, double t, std::span<const ad::Var> theta,
                     std::span<ad::Var> dxdt) const = 0;
  virtual void response(std::span<const double> x, double t, std::span<const double> theta,
                        std::span<double> y) const = 0;
  virtual void response(std::span<const ad::Var> x, double t, std::span<const ad::Var> theta,
                        std::span<ad::Var> y) const = 0;

 protected:
  OdeModel(std::string name, std::vector<std::string> state_names, std::vector<std::string> param_names,
           std::vector<std::string> output_names);

 private:
  std::string name_;
  std::vector<std::string> state_names_;
  std::vector<std::string> param_names_;
  std::vector<std::string> output_names_;
  std::vector<double> state_scale_;
  std::vector<double> theta_scale_;
  std::vector<double> y_scale_;
};

using ModelPtr = std::shared_ptr<const OdeModel>;

/// Routes both virtual overloads to `Derived::template eval_field<T>` and
/// `Derived::template eval_response<T>`.
template <class Derived>
class OdeModelBase : public OdeModel {
 public:
  using OdeModel::OdeModel;

  void field(std::span<const double> x, double t, std::span<const double> theta,
             std::span<double> dxdt) const final {
    self().template eval_field<double>(x, t, theta, dxdt);
  }
  void field(std::span<const ad::Var> x, double t, std::span<const ad::Var> theta,
             std::span<ad::Var> dxdt) const final {
    self().template eval_field<ad::Var>(x, t, theta, dxdt);
  }
  void response(std::span<const double> x, double t, std::span<const double> theta,
                std::span<double> y) const final {
    self().template eval_response<double>(x, t, theta, y);
  }
  void response(std::span<const ad::Var> x, double t, std::span<const ad::Var> theta,
                std::span<ad::Var> y) const final {
    self().template eval_response<ad::Var>(x, t, theta, y);
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

std::vector<double> eval_field(const OdeModel& model, std::span<const double> x, double t,
                               std::span<const double> theta);
std::vector<double> eval_response(const OdeModel& model, std::span<const double> x, double t,
                                  std::span<const double> theta);

// ---------------------------------------------------------------------------
// Built-in systems

/// Single-degree-of-freedom Duffing oscillator driven by 0.37 cos(1.2 t).
/// theta = (k1, k2, k3); y = x1.
std::shared_ptr<OdeModel> duffing();

/// Two masses in q1 = y1, q2 = y2 - y1 coordinates; state (q1, q1', q2, q2'),
/// theta = (m1, m2, c1, c2, k1, k2, eps1, eps2), y = (q1, q1 + q2).
std::shared_ptr<OdeModel> two_dof_duffing(double forcing_amplitude, double forcing_frequency);

struct BoucWenConstants {
  double beta = 2.0;
  double gamma = 1.0;
  double exponent = 1.0;
  double mass = 1.0;
  double damping = 0.25;

  bool operator==(const BoucWenConstants&) const = default;
};

/// Shear frame with Bouc-Wen hysteresis; state (v_1..v_n, z_1..z_n),
/// theta = story stiffnesses, y = story accelerations.
std::shared_ptr<OdeModel> bouc_wen_frame(std::size_t n_stories, TimeSeries ground_accel,
                                         BoucWenConstants constants = {});

/// Nonlinear energy sink, two experiments stacked; theta = (c_nu, c_f, k, z),
/// y = (x1, acc1, x3, acc2). Mass fixed at 0.664 kg.
std::shared_ptr<OdeModel> nes(TimeSeries excitation_1, TimeSeries excitation_2);

inline constexpr double kNesMass = 0.664;

/// dx/dt = A x, y = C x (row-major matrices). Used by tests and oracles.
std::shared_ptr<OdeModel> linear_model(std::size_t state_dim, std::vector<double> a,
                                       std::size_t output_dim, std::vector<double> c);

/// The same system expressed in x/x_bar, theta/theta_bar, y/y_bar.
ModelPtr normalized(ModelPtr model);

// ---------------------------------------------------------------------------
// Integration and data

struct Trajectory {
  std::vector<double> times;
  std::vector<double> states;  // row-major, times.size() x dim
  std::size_t dim = 0;

  std::size_t size() const noexcept { return times.size(); }
  std::span<const double> state(std::size_t k) const { return {states.data() + k * dim, dim}; }

  /// Header `t,x1..xd`.
  void write_csv(const std::filesystem::path& path) const;
};

/// Classical fourth-order Runge-Kutta on the grid t0 + k dt; the last step is
/// shortened to land on t1. Throws DivergenceError on non-finite states.
Trajectory rk4_integrate(const OdeModel& model, std::span<const double> x_init, std::span<const double> theta,
                         double t0, double t1, double dt);

struct Dataset {
  std::vector<double> times;
  std::vector<double> y;  // row-major, times.size() x dim
  std::vector<double> sigma_y;
  std::size_t dim = 0;

  std::size_t size() const noexcept { return times.size(); }
  std::span<const double> row(std::size_t k) const { return {y.data() + k * dim, dim}; }
  void validate() const;

  /// Header `t,y1..yd`.
  void write_csv(const std::filesystem::path& path) const;
  static Dataset read_csv(const std::filesystem::path& path, std::vector<double> sigma_y);
};

enum class NoiseRule {
  FractionOfScale,  // sigma = fraction * y_scale
  FractionOfRms,    // sigma = fraction * RMS of the clean channel
};

Dataset synthesize_dataset(const OdeModel& model, const Trajectory& trajectory, std::span<const double> theta,
                           std::size_t sample_stride, double noise_fraction, std::uint64_t seed,
                           NoiseRule rule = NoiseRule::FractionOfScale);

/// Divides measurements and noise levels by the model's y_scale.
Dataset normalize_dataset(const Dataset& data, std::span<const double> y_scale);

}  // namespace niff
