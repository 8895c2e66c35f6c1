#pragma once

// State path parameterizations x(t; w).
//
// Every kind shares one coefficient convention: a per-state linear basis
// psi(t) with coefficients stored state-major (w^b[i * n_b + j]). The residual
// network adds a Fourier-encoded MLP with one output head per state.
//
// Parameter vector order: hidden layers (weights, bias) in depth order, output
// layer (weights, bias), then the basis coefficients.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "niff/diffengine.hpp"

namespace niff {

enum class PathKind { Fourier, Rbf, ResidualNet, ReparamFourier };
enum class BasisKind { None, Fourier, Rbf };

const char* path_kind_name(PathKind kind) noexcept;
PathKind parse_path_kind(const std::string& name);

struct PathSpec {
  PathKind kind = PathKind::Fourier;
  std::size_t state_dim = 1;
  double window = 1.0;  // T, seconds
  double period = 0.0;  // T_bar for Fourier features; 0 selects `window`

  BasisKind basis = BasisKind::Fourier;
  std::size_t modes = 1;  // K of a Fourier basis
  std::size_t rbf_count = 0;
  double rbf_scale = 0.05;
  std::vector<double> rbf_centers;  // normalized time t/T; empty = evenly spaced on [0, 1]

  std::size_t encoder_modes = 0;  // K of the network's Fourier encoder
  std::vector<std::size_t> hidden_widths;

  std::size_t dependent_index = 0;  // reparameterized Fourier only

  double effective_period() const noexcept { return period > 0.0 ? period : window; }
  std::size_t basis_size() const noexcept;  // n_b, per state
  std::size_t encoder_size() const noexcept { return 2 * encoder_modes + 1; }
  bool has_network() const noexcept { return kind == PathKind::ResidualNet; }
  double rbf_center(std::size_t k) const;

  /// Throws DomainError on an inconsistent specification.
  void validate() const;
};

PathSpec fourier_path(std::size_t state_dim, double window, std::size_t modes, double period = 0.0);
PathSpec rbf_path(std::size_t state_dim, double window, std::size_t centers, double scale = 0.05);
/// Linear basis of `basis_spec` (Fourier, rbf, or none when `basis_spec.basis`
/// is None) plus a Fourier-encoded swish MLP.
PathSpec residual_path(PathSpec basis_spec, std::size_t encoder_modes, std::vector<std::size_t> hidden_widths);
PathSpec reparam_fourier_path(std::size_t state_dim, double window, std::size_t modes,
                              std::size_t dependent_index = 0, double period = 0.0);

struct Slice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct PathLayout {
  std::vector<Slice> slices;
  std::size_t total = 0;

  const Slice& find(const std::string& name) const;  // throws ShapeError
};

PathLayout layout(const PathSpec& spec);
/// Length of w as consumed by eval_path.
std::size_t param_count(const PathSpec& spec);
/// Coordinates that inference samples: param_count, minus the d_x dependent
/// coefficients for the reparameterized Fourier path.
std::size_t latent_count(const PathSpec& spec);

/// Linear basis and its time derivative at t (length basis_size()).
void basis_values(const PathSpec& spec, double t, std::span<double> psi, std::span<double> dpsi);
/// (1, sin(2 pi t / T_bar), cos(2 pi t / T_bar), ..., sin(2 pi K t / T_bar), cos(...)) and derivative.
void fourier_features(std::size_t modes, double period, double t, std::span<double> feat, std::span<double> dfeat);

double swish(double x) noexcept;

template <class T>
void eval_path(const PathSpec& spec, std::span<const T> w, double t, std::span<T> x);
template <class T>
void eval_path_dot(const PathSpec& spec, std::span<const T> w, double t, std::span<T> xdot);
template <class T>
void eval_path_and_dot(const PathSpec& spec, std::span<const T> w, double t, std::span<T> x, std::span<T> xdot);

/// Checked convenience forms.
std::vector<double> eval_path(const PathSpec& spec, std::span<const double> w, double t);
std::vector<double> eval_path_dot(const PathSpec& spec, std::span<const double> w, double t);
std::vector<double> initial_value(const PathSpec& spec, std::span<const double> w);

/// Full coefficient vector from the auxiliary initial state and the free
/// coefficients of a reparameterized Fourier path.
template <class T>
void reparam_expand(const PathSpec& spec, std::span<const T> x0, std::span<const T> w_free, std::span<T> w_full);
std::vector<double> reparam_expand(const PathSpec& spec, std::span<const double> x0, std::span<const double> w_free);
/// The d_x dependent coefficients w_i = (x0 - sum_{j != i} w_j psi_j(0)) / psi_i(0).
std::vector<double> reparam_fourier_dependent(const PathSpec& spec, std::span<const double> x0,
                                              std::span<const double> w_free);

/// Starting point of length latent_count(spec): basis coefficients N(0, 0.1^2),
/// Glorot-uniform hidden weights, zero biases and a zero output layer.
std::vector<double> init_params(const PathSpec& spec, std::uint64_t seed);

extern template void eval_path<double>(const PathSpec&, std::span<const double>, double, std::span<double>);
extern template void eval_path<ad::Var>(const PathSpec&, std::span<const ad::Var>, double, std::span<ad::Var>);
extern template void eval_path_dot<double>(const PathSpec&, std::span<const double>, double, std::span<double>);
extern template void eval_path_dot<ad::Var>(const PathSpec&, std::span<const ad::Var>, double,
                                            std::span<ad::Var>);
extern template void eval_path_and_dot<double>(const PathSpec&, std::span<const double>, double, std::span<double>,
                                               std::span<double>);
extern template void eval_path_and_dot<ad::Var>(const PathSpec&, std::span<const ad::Var>, double,
                                                std::span<ad::Var>, std::span<ad::Var>);
extern template void reparam_expand<double>(const PathSpec&, std::span<const double>, std::span<const double>,
                                            std::span<double>);
extern template void reparam_expand<ad::Var>(const PathSpec&, std::span<const ad::Var>, std::span<const ad::Var>,
                                             std::span<ad::Var>);

}  // namespace niff
