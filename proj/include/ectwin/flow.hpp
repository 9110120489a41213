#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ectwin/electrostatics.hpp"
#include "ectwin/geometry.hpp"

namespace ectwin {

/// Gas (air) and liquid (white oil) properties. SI units.
struct FluidProperties {
  double rho_liquid = 879.0;
  double rho_gas = 1.3;
  double mu_liquid = 0.02;
  double mu_gas = 1.81e-5;
  double eps_liquid = 2.18;
  double eps_gas = 1.0;
  /// Surface tension coefficient (N/m). When set, a continuum-surface-force term is added.
  std::optional<double> surface_tension;
  std::array<double, 3> gravity{0.0, 0.0, -9.81};
  /// Additional volume force (N/m^3).
  std::array<double, 3> body_force{0.0, 0.0, 0.0};

  void validate() const;
};

struct MixtureProperties {
  double density;
  double viscosity;
  double permittivity;
};

/// Linear mixture rules for density and viscosity and the Wiener upper bound for
/// permittivity. `void_fraction` must lie in [0, 1].
MixtureProperties mixture_properties(double void_fraction, const FluidProperties& props);

/// Gas void fraction per lumen voxel (lumen order).
struct PhaseVolume {
  std::vector<double> values;
};

/// Staggered (MAC) velocity: component d lives on faces normal to axis d, stored with the
/// VoxelGrid face layout. Pressure is per lumen voxel.
struct VelocityField {
  std::array<std::vector<double>, 3> components;
  std::vector<double> pressure;
};

enum class InitialFill { liquid, gas };

struct VelocityBounds {
  double gas_min = 0.0;
  double gas_max = 5.0;
  double liquid_min = 0.0;
  double liquid_max = 5.0;
};

struct FlowConditions {
  std::string id = "c000";
  double inlet_gas_velocity = 0.0;     ///< m/s through the central disc
  double inlet_liquid_velocity = 0.0;  ///< m/s through the surrounding annulus
  InitialFill initial_fill = InitialFill::liquid;
  double gas_inlet_radius_fraction = 0.5;
  double duration = 2.0;
  double output_interval = 0.1;
  /// Relative amplitude of the seeded inlet velocity fluctuation (0 disables it).
  double inlet_fluctuation = 0.0;

  void validate(const VelocityBounds& bounds = {}) const;
};

/// Lumen-restricted flow domain with no-slip walls. The bottom face layer is the inlet
/// and the top face layer a zero-pressure outlet; either can be closed (solid wall).
class FlowDomain {
 public:
  enum class FaceKind : std::uint8_t { solid, interior, inlet, outlet };

  explicit FlowDomain(const VoxelGrid& grid, bool inlet_open = true, bool outlet_open = true);

  const GridDims& dims() const noexcept { return dims_; }
  const std::array<double, 3>& spacing() const noexcept { return spacing_; }
  double min_spacing() const noexcept;
  double max_spacing() const noexcept;
  std::size_t cell_count() const noexcept { return fluid_.size(); }
  std::size_t fluid_count() const noexcept { return fluid_cells_.size(); }
  bool fluid(std::size_t cell) const noexcept { return fluid_[cell] != 0; }
  bool fluid(int i, int j, int k) const noexcept;
  std::size_t cell_index(int i, int j, int k) const noexcept;
  std::int64_t fluid_index(std::size_t cell) const noexcept { return fluid_index_[cell]; }
  std::size_t fluid_cell(std::size_t ordinal) const noexcept { return fluid_cells_[ordinal]; }
  std::array<double, 3> cell_center(std::size_t cell) const noexcept;

  std::array<int, 3> face_extent(int axis) const noexcept;
  std::size_t face_count(int axis) const noexcept;
  std::size_t face_index(int axis, int i, int j, int k) const noexcept;
  FaceKind face_kind(int axis, std::size_t face) const noexcept { return kinds_[static_cast<std::size_t>(axis)][face]; }

  /// Bottom faces of the inlet, in lumen order of their cells.
  const std::vector<std::size_t>& inlet_faces() const noexcept { return inlet_faces_; }
  bool inlet_open() const noexcept { return inlet_open_; }
  bool outlet_open() const noexcept { return outlet_open_; }

  double volume() const noexcept { return spacing_[0] * spacing_[1] * spacing_[2]; }

 private:
  GridDims dims_;
  std::array<double, 3> spacing_;
  std::array<double, 3> origin_;
  std::vector<std::uint8_t> fluid_;
  std::vector<std::int64_t> fluid_index_;
  std::vector<std::size_t> fluid_cells_;
  std::array<std::vector<FaceKind>, 3> kinds_;
  std::vector<std::size_t> inlet_faces_;
  bool inlet_open_;
  bool outlet_open_;
};

/// Velocity and void fraction imposed on the inlet faces (FlowDomain::inlet_faces order).
struct InletState {
  std::vector<double> velocity;
  std::vector<double> phase;
};

/// Zero velocity everywhere except the inlet faces.
VelocityField make_velocity(const FlowDomain& domain, const InletState& inlet);

double max_speed(const VelocityField& velocity);
/// Largest |div u| over fluid cells, in 1/s.
double max_divergence(const FlowDomain& domain, const VelocityField& velocity);

struct NsSettings {
  double cfl_limit = 0.4;
  double pressure_tolerance = 1e-10;
  double viscous_tolerance = 1e-10;
  double divergence_tolerance = 1e-6;  ///< relative to max|u| / h_min
};

/// Projects `velocity` onto the discretely divergence-free space (inlet faces fixed).
VelocityField project(const FlowDomain& domain, const VelocityField& velocity, const PhaseVolume& phase,
                      const FluidProperties& props, double dt, const NsSettings& settings = {});

/// One projection step: explicit upwind advection, implicit viscous diffusion with the
/// transpose stress term lagged, gravity and volume forces, then a variable-density
/// pressure projection. Throws StabilityError on a CFL violation and NumericalError
/// when the projected field is not divergence-free to tolerance.
VelocityField ns_step(const FlowDomain& domain, const VelocityField& state, const PhaseVolume& phase,
                      const FluidProperties& props, double dt, const InletState& inlet,
                      const NsSettings& settings = {});

struct LevelSetParams {
  double gamma = 1.0;  ///< reinitialization velocity scale (m/s)
  /// Interface thickness; defaults to half the largest voxel edge.
  std::optional<double> epsilon;
};

struct LevelSetStats {
  double min_before_clamp = 0.0;
  double max_before_clamp = 1.0;
  /// Largest excursion outside [0, 1] before clamping.
  double overshoot() const noexcept;
};

/// Largest time step admitted by the explicit reinitialization term.
double levelset_stable_dt(const FlowDomain& domain, const LevelSetParams& params);

/// Conservative level-set transport: flux-limited (van Leer) advection plus the
/// compressive reinitialization flux, integrated with two-stage SSP Runge-Kutta, then
/// clamped to [0, 1]. Throws StabilityError when dt exceeds the reinitialization bound
/// or the advective CFL limit of 0.5.
PhaseVolume levelset_step(const FlowDomain& domain, const PhaseVolume& phase, const VelocityField& velocity,
                          double dt, const InletState& inlet, const LevelSetParams& params = {},
                          LevelSetStats* stats = nullptr);

struct PhaseSnapshot {
  double time = 0.0;
  PhaseVolume phase;
};

struct SimulationSettings {
  NsSettings ns;
  LevelSetParams levelset;
  VelocityBounds bounds;
  /// Optional per-snapshot progress hook (index, time).
  std::function<void(std::size_t, double)> on_snapshot;
};

/// Inlet split for the given conditions: gas through the central disc, liquid through
/// the annulus.
InletState make_inlet(const FlowDomain& domain, const FlowConditions& cond);

/// Time-marches the coupled level-set / Navier-Stokes system from the initial fill and
/// returns one snapshot per output interval (the initial state is not included).
std::vector<PhaseSnapshot> simulate_flow(const VoxelGrid& grid, const FluidProperties& props,
                                         const FlowConditions& cond, std::uint64_t seed,
                                         const SimulationSettings& settings = {});

/// Lumen voxels from the mixture rule, wall voxels at `wall_eps`, everything else 1.
PermittivityVolume phase_to_permittivity(const PhaseVolume& phase, const VoxelGrid& grid,
                                         const FluidProperties& props, double wall_eps = 2.6);

}  // namespace ectwin
