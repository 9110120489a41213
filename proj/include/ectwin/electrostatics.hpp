#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ectwin/geometry.hpp"
#include "ectwin/linear_solver.hpp"

namespace ectwin {

inline constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m

/// Relative permittivity per grid cell (all cells; shield cells are ignored).
struct PermittivityVolume {
  std::vector<double> values;
};

/// Electric potential per grid cell in volts. Shield cells hold 0.
struct PotentialVolume {
  std::vector<double> values;
};

enum class FrameKind { raw, normalized };

/// One value per electrode pair, in electrode_pairs() order.
struct CapacitanceFrame {
  std::vector<double> values;
  FrameKind kind = FrameKind::raw;
};

/// Linearized map from normalized permittivity (lumen order) to normalized capacitance.
/// Rows are normalized to sum to one; `row_sums` keeps the unnormalized sums so raw
/// field-product rows are entries.row(m) * row_sums[m].
struct SensitivityMatrix {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> entries;
  std::vector<double> row_sums;
  std::vector<ElectrodePair> pairs;
  std::uint64_t grid_hash = 0;

  Eigen::Index rows() const noexcept { return entries.rows(); }
  Eigen::Index cols() const noexcept { return entries.cols(); }
};

/// Permittivity of the lumen/wall/exterior regions of a grid.
PermittivityVolume uniform_permittivity(const VoxelGrid& grid, double lumen, double wall, double exterior = 1.0);

/// Cell-centred finite-volume discretization of -div(eps0 eps grad phi) = 0 with
/// harmonic face averaging. Conductor faces (electrodes, shield) are Dirichlet faces at
/// half-cell distance; every other boundary face is insulating. The matrix depends only
/// on (grid, permittivity), so one assembly serves every excitation.
class ElectrostaticOperator {
 public:
  ElectrostaticOperator(const VoxelGrid& grid, const PermittivityVolume& permittivity);

  PotentialVolume solve(int excited, double v_exc, SolveStats* stats = nullptr) const;
  /// Charge on a conductor given the potential of the solve that produced `potential`.
  /// `label` is an electrode index or kShieldFace.
  double charge(const PotentialVolume& potential, int label, int excited, double v_exc) const;

  const VoxelGrid& grid() const noexcept { return *grid_; }
  const CgSettings& settings() const noexcept { return settings_; }
  bool has_label(int label) const noexcept;

 private:
  struct DirichletFace {
    std::size_t cell;
    int label;
    double conductance;
  };

  const VoxelGrid* grid_;
  std::vector<std::int64_t> unknown_of_cell_;
  std::vector<std::size_t> cell_of_unknown_;
  SparseMatrix matrix_;
  std::vector<DirichletFace> dirichlet_;
  CgSettings settings_;
};

/// Potential for one electrode driven at `v_exc`, all other conductors grounded.
PotentialVolume solve_potential(const VoxelGrid& grid, const PermittivityVolume& perm, int excited, double v_exc);

/// Charge on `electrode` (index, or kShieldFace for the screen) as the discrete flux
/// integral over its faces. `excited`/`v_exc` identify the solve behind `potential`.
double electrode_charge(const VoxelGrid& grid, const PermittivityVolume& perm, const PotentialVolume& potential,
                        int electrode, int excited, double v_exc);

/// Full single-electrode excitation sweep. Entry (i, j) is -Q_j / V with electrode i
/// driven; excitations run on up to `jobs` threads and merge in pair order.
CapacitanceFrame measure_frame(const VoxelGrid& grid, const PermittivityVolume& perm, double v_exc, int jobs = 1);

/// Every mutual capacitance C(i -> j) for i != j, row i = excited electrode.
Eigen::MatrixXd capacitance_matrix(const VoxelGrid& grid, const PermittivityVolume& perm, double v_exc, int jobs = 1);

/// Entry-wise (raw - low) / (high - low).
CapacitanceFrame normalize_frame(const CapacitanceFrame& raw, const CapacitanceFrame& low,
                                 const CapacitanceFrame& high);

struct CalibrationFrames {
  CapacitanceFrame low;
  CapacitanceFrame high;
};

/// Raw frames with the lumen filled uniformly with the low and high permittivity.
CalibrationFrames calibration_frames(const VoxelGrid& grid, double eps_low, double eps_high, double eps_wall,
                                     double v_exc, int jobs = 1);

/// Field-product sensitivity on the given background, rows scaled to sum to one.
/// Entry (m, j) for pair (a, b) is proportional to -integral over voxel j of
/// grad(phi_a) . grad(phi_b), with unit-volt excitations.
SensitivityMatrix compute_sensitivity(const VoxelGrid& grid, const PermittivityVolume& background, double v_exc,
                                      int jobs = 1);

}  // namespace ectwin
