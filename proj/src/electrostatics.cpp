#include "ectwin/electrostatics.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "ectwin/error.hpp"
#include "ectwin/parallel.hpp"

namespace ectwin {

namespace {

bool is_conductor(std::int16_t label) { return label != kNoConductor; }

struct Neighbor {
  std::size_t face;
  bool inside;
  std::size_t cell;
};

// Lower (side 0) or upper (side 1) face of a cell along an axis, and the cell beyond it.
Neighbor neighbor(const VoxelGrid& grid, const std::array<int, 3>& ijk, int axis, int side) {
  std::array<int, 3> f = ijk;
  if (side == 1) f[static_cast<std::size_t>(axis)] += 1;
  const std::size_t face = grid.face_index(axis, f[0], f[1], f[2]);
  std::array<int, 3> n = ijk;
  n[static_cast<std::size_t>(axis)] += side == 1 ? 1 : -1;
  const std::array<int, 3> extent{grid.nx(), grid.ny(), grid.nz()};
  const bool inside = n[static_cast<std::size_t>(axis)] >= 0 && n[static_cast<std::size_t>(axis)] < extent[static_cast<std::size_t>(axis)];
  return {face, inside, inside ? grid.cell_index(n[0], n[1], n[2]) : 0};
}

void check_permittivity(const VoxelGrid& grid, const PermittivityVolume& perm) {
  if (perm.values.size() != grid.cell_count())
    throw PreconditionError("permittivity volume does not match the grid (" + std::to_string(perm.values.size()) +
                            " values for " + std::to_string(grid.cell_count()) + " cells)");
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    if (grid.region(c) == Region::shield) continue;
    if (!(perm.values[c] > 0.0) || !std::isfinite(perm.values[c]))
      throw PreconditionError("permittivity must be positive and finite (cell " + std::to_string(c) + ")");
  }
}

void check_excitation(const VoxelGrid& grid, int excited, double v_exc) {
  if (excited < 0 || excited >= grid.electrode_count())
    throw PreconditionError("excited electrode " + std::to_string(excited) + " outside [0, " +
                            std::to_string(grid.electrode_count() - 1) + "]");
  if (!(v_exc != 0.0) || !std::isfinite(v_exc)) throw PreconditionError("excitation voltage must be nonzero and finite");
}

}  // namespace

PermittivityVolume uniform_permittivity(const VoxelGrid& grid, double lumen, double wall, double exterior) {
  PermittivityVolume perm;
  perm.values.resize(grid.cell_count());
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    switch (grid.region(c)) {
      case Region::lumen: perm.values[c] = lumen; break;
      case Region::pipe_wall: perm.values[c] = wall; break;
      case Region::exterior: perm.values[c] = exterior; break;
      case Region::shield: perm.values[c] = 1.0; break;
    }
  }
  return perm;
}

ElectrostaticOperator::ElectrostaticOperator(const VoxelGrid& grid, const PermittivityVolume& permittivity)
    : grid_(&grid) {
  check_permittivity(grid, permittivity);
  const auto& eps = permittivity.values;

  unknown_of_cell_.assign(grid.cell_count(), -1);
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    if (grid.region(c) == Region::shield) continue;
    unknown_of_cell_[c] = static_cast<std::int64_t>(cell_of_unknown_.size());
    cell_of_unknown_.push_back(c);
  }

  // eps0 is factored out of the matrix and reapplied in charge().
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(cell_of_unknown_.size() * 7);
  const auto& h = grid.spacing();
  for (std::size_t u = 0; u < cell_of_unknown_.size(); ++u) {
    const std::size_t c = cell_of_unknown_[u];
    const auto ijk = grid.cell_coords(c);
    double diag = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
      const double area = grid.face_area(axis);
      const double hd = h[static_cast<std::size_t>(axis)];
      for (int side = 0; side < 2; ++side) {
        const Neighbor nb = neighbor(grid, ijk, axis, side);
        const std::int16_t label = grid.face_label(axis, nb.face);
        const bool shield_beyond = nb.inside && grid.region(nb.cell) == Region::shield;
        if (is_conductor(label) || shield_beyond) {
          const double t = eps[c] * area / (0.5 * hd);
          diag += t;
          dirichlet_.push_back({c, is_conductor(label) ? label : kShieldFace, t});
        } else if (nb.inside) {
          const double en = eps[nb.cell];
          const double t = area / hd * (2.0 * eps[c] * en / (eps[c] + en));
          diag += t;
          triplets.emplace_back(static_cast<int>(u), static_cast<int>(unknown_of_cell_[nb.cell]), -t);
        }
      }
    }
    triplets.emplace_back(static_cast<int>(u), static_cast<int>(u), diag);
  }
  const auto n = static_cast<Eigen::Index>(cell_of_unknown_.size());
  matrix_.resize(n, n);
  matrix_.setFromTriplets(triplets.begin(), triplets.end());
  matrix_.makeCompressed();

  settings_.tolerance = 1e-10;
  settings_.max_iterations = 20 * (grid.nx() + grid.ny() + grid.nz());
  settings_.preconditioner = Preconditioner::jacobi;
}

bool ElectrostaticOperator::has_label(int label) const noexcept {
  for (const auto& f : dirichlet_)
    if (f.label == label) return true;
  return false;
}

PotentialVolume ElectrostaticOperator::solve(int excited, double v_exc, SolveStats* stats) const {
  check_excitation(*grid_, excited, v_exc);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(matrix_.rows());
  for (const auto& f : dirichlet_)
    if (f.label == excited) b[unknown_of_cell_[f.cell]] += f.conductance * v_exc;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(matrix_.rows());
  const SolveStats s = solve_spd(matrix_, b, x, settings_, "potential solve (electrode " + std::to_string(excited) + ")");
  if (stats) *stats = s;

  PotentialVolume out;
  out.values.assign(grid_->cell_count(), 0.0);
  for (std::size_t u = 0; u < cell_of_unknown_.size(); ++u) out.values[cell_of_unknown_[u]] = x[static_cast<Eigen::Index>(u)];
  return out;
}

double ElectrostaticOperator::charge(const PotentialVolume& potential, int label, int excited, double v_exc) const {
  if (potential.values.size() != grid_->cell_count())
    throw PreconditionError("potential volume does not match the grid");
  if (!has_label(label)) throw PreconditionError("electrode label " + std::to_string(label) + " is absent from the grid");
  double q = 0.0;
  for (const auto& f : dirichlet_) {
    if (f.label != label) continue;
    const double v_face = label == excited ? v_exc : 0.0;
    q += f.conductance * (v_face - potential.values[f.cell]);
  }
  return kVacuumPermittivity * q;
}

PotentialVolume solve_potential(const VoxelGrid& grid, const PermittivityVolume& perm, int excited, double v_exc) {
  check_excitation(grid, excited, v_exc);
  return ElectrostaticOperator(grid, perm).solve(excited, v_exc);
}

double electrode_charge(const VoxelGrid& grid, const PermittivityVolume& perm, const PotentialVolume& potential,
                        int electrode, int excited, double v_exc) {
  return ElectrostaticOperator(grid, perm).charge(potential, electrode, excited, v_exc);
}

Eigen::MatrixXd capacitance_matrix(const VoxelGrid& grid, const PermittivityVolume& perm, double v_exc, int jobs) {
  const ElectrostaticOperator op(grid, perm);
  const int n = grid.electrode_count();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    const int exc = static_cast<int>(i);
    PotentialVolume phi;
    try {
      phi = op.solve(exc, v_exc);
    } catch (const SolverError& e) {
      throw SolverError("excitation " + std::to_string(exc) + ": " + e.what(), e.residual());
    }
    for (int j = 0; j < n; ++j) {
      if (j == exc) continue;
      c(exc, j) = -op.charge(phi, j, exc, v_exc) / v_exc;
    }
  });
  return c;
}

CapacitanceFrame measure_frame(const VoxelGrid& grid, const PermittivityVolume& perm, double v_exc, int jobs) {
  const Eigen::MatrixXd c = capacitance_matrix(grid, perm, v_exc, jobs);
  CapacitanceFrame frame;
  frame.kind = FrameKind::raw;
  for (const auto& [i, j] : electrode_pairs(grid.electrode_count())) frame.values.push_back(c(i, j));
  return frame;
}

CapacitanceFrame normalize_frame(const CapacitanceFrame& raw, const CapacitanceFrame& low,
                                 const CapacitanceFrame& high) {
  if (raw.values.size() != low.values.size() || raw.values.size() != high.values.size())
    throw PreconditionError("normalize_frame: frames have different lengths");
  CapacitanceFrame out;
  out.kind = FrameKind::normalized;
  out.values.resize(raw.values.size());
  for (std::size_t m = 0; m < raw.values.size(); ++m) {
    const double span = high.values[m] - low.values[m];
    if (span == 0.0) {
      std::ostringstream msg;
      msg << "degenerate calibration: high and low frames coincide at measurement " << m;
      throw ValidationError(msg.str());
    }
    out.values[m] = (raw.values[m] - low.values[m]) / span;
  }
  return out;
}

CalibrationFrames calibration_frames(const VoxelGrid& grid, double eps_low, double eps_high, double eps_wall,
                                     double v_exc, int jobs) {
  return {measure_frame(grid, uniform_permittivity(grid, eps_low, eps_wall), v_exc, jobs),
          measure_frame(grid, uniform_permittivity(grid, eps_high, eps_wall), v_exc, jobs)};
}

SensitivityMatrix compute_sensitivity(const VoxelGrid& grid, const PermittivityVolume& background, double v_exc,
                                      int jobs) {
  const ElectrostaticOperator op(grid, background);
  const int n = grid.electrode_count();
  std::vector<PotentialVolume> phi(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    try {
      phi[i] = op.solve(static_cast<int>(i), v_exc);
    } catch (const SolverError& e) {
      throw SolverError("excitation " + std::to_string(i) + ": " + e.what(), e.residual());
    }
  });

  const auto pairs = electrode_pairs(n);
  const auto lumen = grid.lumen_cells();
  SensitivityMatrix s;
  s.pairs = pairs;
  s.grid_hash = grid.hash();
  s.entries.resize(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(lumen.size()));

  const auto& h = grid.spacing();
  const double scale = -kVacuumPermittivity * grid.cell_volume() / (v_exc * v_exc);
  std::vector<std::array<double, 6>> grad(static_cast<std::size_t>(n));
  for (std::size_t col = 0; col < lumen.size(); ++col) {
    const std::size_t c = lumen[col];
    const auto ijk = grid.cell_coords(c);
    for (int e = 0; e < n; ++e) {
      const auto& p = phi[static_cast<std::size_t>(e)].values;
      for (int axis = 0; axis < 3; ++axis) {
        const double hd = h[static_cast<std::size_t>(axis)];
        for (int side = 0; side < 2; ++side) {
          const Neighbor nb = neighbor(grid, ijk, axis, side);
          const std::int16_t label = grid.face_label(axis, nb.face);
          const bool shield_beyond = nb.inside && grid.region(nb.cell) == Region::shield;
          double g = 0.0;
          if (is_conductor(label) || shield_beyond) {
            const double v_face = label == e ? v_exc : 0.0;
            g = (v_face - p[c]) / (0.5 * hd);
          } else if (nb.inside) {
            g = (p[nb.cell] - p[c]) / hd;
          }
          grad[static_cast<std::size_t>(e)][static_cast<std::size_t>(2 * axis + side)] = g;
        }
      }
    }
    for (std::size_t m = 0; m < pairs.size(); ++m) {
      const auto& ga = grad[static_cast<std::size_t>(pairs[m].first)];
      const auto& gb = grad[static_cast<std::size_t>(pairs[m].second)];
      double dot = 0.0;
      for (int f = 0; f < 6; ++f) dot += ga[static_cast<std::size_t>(f)] * gb[static_cast<std::size_t>(f)];
      s.entries(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(col)) = scale * 0.5 * dot;
    }
  }

  s.row_sums.resize(pairs.size());
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    const double sum = s.entries.row(static_cast<Eigen::Index>(m)).sum();
    if (!(std::fabs(sum) > 0.0) || !std::isfinite(sum))
      throw NumericalError("sensitivity row " + std::to_string(m) + " has zero or non-finite sum");
    s.row_sums[m] = sum;
    s.entries.row(static_cast<Eigen::Index>(m)) /= sum;
  }
  return s;
}

}  // namespace ectwin
