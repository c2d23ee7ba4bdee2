#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gisurrogate/numerics.hpp"
#include "gisurrogate/params.hpp"

namespace gisur {

/// Design-variable order used throughout: magnet height, magnet width,
/// magnet offset, magnet tilt.
enum ParamIndex : std::size_t { kMagnetHeight = 0, kMagnetWidth = 1, kMagnetOffset = 2, kMagnetTilt = 3 };
inline constexpr std::size_t kParamCount = 4;

std::array<std::string, kParamCount> param_names();

/// MH in [2,12] mm, MW in [8,22] mm, MAG in [5,15] mm, Theta1 in [15,23] deg.
ParamBounds default_bounds();

enum class MaterialLaw { Linear, Brauer };

/// nu(B^2) = k1 * exp(k2 * B^2) + k3, SI units.
struct BrauerConstants {
  double k1 = 0.3774;
  double k2 = 2.970;
  double k3 = 388.33;
};

struct TestbedConfig {
  int resolution = 24;          // elements per side
  double half_width_mm = 50.0;  // domain is [-L, L]^2
  MaterialLaw material = MaterialLaw::Linear;
  BrauerConstants brauer;
  double remanence_T = 1.0;
  double source_current_A_per_mm2 = 0.0;
  ParamBounds bounds = default_bounds();

  double newton_tolerance = 1e-10;
  int newton_max_iterations = 50;
  /// Replace the analytic geometric derivative by central differences
  /// (step 1e-7 * range); cross-checking only.
  bool finite_difference_geometry = false;

  void validate() const;
};

std::string to_string(MaterialLaw law);
MaterialLaw material_from_string(const std::string& s);

/// Vacuum reluctivity 1/mu0 [m/H].
inline constexpr double kNu0 = 1.0 / (4.0e-7 * 3.14159265358979323846);

struct FieldSolution {
  Vector u;             // A_z at free nodes
  Matrix sensitivities; // n x n_p, column i = du/dp_i
  int newton_iterations = 0;
  double residual_norm = 0.0;
  std::vector<double> residual_history;
};

struct KpiSample {
  double value = 0.0;  // magnetic energy [J/m]
  Vector gradient;
};

struct AssembledSystem {
  Matrix matrix;  // secant stiffness A(p, u) on free nodes
  Vector rhs;
};

enum class Region { Air, Magnet, Core, Coil };

/// Fixed-topology reference mesh plus the parameter-dependent geometry map.
/// Node count, connectivity and the Dirichlet set never change with p; only
/// node positions do.
class Testbed {
 public:
  explicit Testbed(TestbedConfig cfg);

  const TestbedConfig& config() const { return cfg_; }
  std::size_t free_count() const { return free_nodes_.size(); }
  std::size_t node_count() const { return ref_nodes_.size(); }
  std::size_t element_count() const { return elements_.size(); }
  int nodes_per_side() const { return cfg_.resolution + 1; }

  /// Grid coordinates (i, j) of a free degree of freedom.
  std::pair<int, int> free_node_grid(std::size_t free_index) const;
  /// -1 for boundary nodes.
  long free_index(int i, int j) const;
  Region region(std::size_t element) const { return regions_[element]; }

  /// Physical node positions in mm.
  std::vector<std::array<double, 2>> node_positions(const ParamPoint& p) const;
  /// d(node position)/dp_i in mm per parameter unit.
  std::vector<std::array<double, 2>> node_position_derivative(const ParamPoint& p, std::size_t i) const;
  /// Blend weight in [0, 1] applied to the magnet transform at a node.
  double blend_weight(std::size_t node) const { return blend_[node]; }

  /// Smallest ratio det J(p) / det J(reference) over all element sample points.
  double min_jacobian_ratio(const ParamPoint& p) const;
  bool is_feasible(const ParamPoint& p) const;

  AssembledSystem assemble(const ParamPoint& p, const Vector& u) const;
  /// Stiffness with unit reluctivity everywhere, zero state, no sources.
  Matrix unit_stiffness(const ParamPoint& p) const;

  /// R(p, u) = A(p, u) u - b(p).
  Vector residual(const ParamPoint& p, const Vector& u) const;
  /// dR/du, the Newton tangent (symmetric).
  Matrix tangent(const ParamPoint& p, const Vector& u) const;
  /// dR/dp at fixed u, n x n_p.
  Matrix residual_parameter_derivative(const ParamPoint& p, const Vector& u) const;

  FieldSolution solve(const ParamPoint& p) const;
  Matrix solve_sensitivities(const ParamPoint& p, const Vector& u) const;

  /// Magnetic energy W(p, u) = sum_e int 1/2 Psi(|grad u|^2), Psi' = nu.
  double energy(const ParamPoint& p, const Vector& u) const;
  /// dW/dp at fixed u (length n_p) and dW/du (length n).
  std::pair<Vector, Vector> energy_partials(const ParamPoint& p, const Vector& u) const;
  /// Energy plus its total parameter gradient from one adjoint solve.
  KpiSample compute_kpi(const ParamPoint& p, const FieldSolution& sol) const;

 private:
  struct Element {
    std::array<int, 4> nodes;
  };

  void check_point(const ParamPoint& p) const;
  void require_nondegenerate(const ParamPoint& p, const std::vector<std::array<double, 2>>& x) const;
  Vector remanence(const ParamPoint& p) const;
  Vector remanence_derivative(const ParamPoint& p, std::size_t i) const;
  Matrix residual_parameter_derivative_fd(const ParamPoint& p, const Vector& u) const;
  Vector energy_parameter_derivative_fd(const ParamPoint& p, const Vector& u) const;
  std::array<double, 4> element_state(std::size_t e, const Vector& u) const;

  TestbedConfig cfg_;
  double h_mm_ = 0.0;
  double box_half_x_ = 0.0;
  double box_half_y_ = 0.0;
  double annulus_width_ = 0.0;
  std::vector<std::array<double, 2>> ref_nodes_;
  std::vector<Element> elements_;
  std::vector<Region> regions_;
  std::vector<long> free_of_node_;
  std::vector<int> free_nodes_;
  std::vector<double> blend_;
  std::vector<double> ref_det_;  // per element sample point, reference configuration
};

// Free-function forms operating on a fresh mesh built from cfg.
AssembledSystem assemble(const ParamPoint& p, const Vector& u, const TestbedConfig& cfg);
FieldSolution solve(const ParamPoint& p, const TestbedConfig& cfg);
Matrix solve_sensitivities(const ParamPoint& p, const Vector& u, const TestbedConfig& cfg);
KpiSample compute_kpi(const ParamPoint& p, const FieldSolution& sol, const TestbedConfig& cfg);
bool is_feasible(const ParamPoint& p, const TestbedConfig& cfg);

}  // namespace gisur
