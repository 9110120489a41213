#include "ectwin/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ectwin/error.hpp"
#include "ectwin/linear_solver.hpp"

namespace ectwin {

namespace {

using Kind = FlowDomain::FaceKind;
using Ijk = std::array<int, 3>;

Ijk shifted(Ijk p, int axis, int by) {
  p[static_cast<std::size_t>(axis)] += by;
  return p;
}

struct CellFields {
  std::vector<double> rho;
  std::vector<double> mu;
};

CellFields cell_fields(const FlowDomain& domain, const PhaseVolume& phase, const FluidProperties& props) {
  CellFields f;
  f.rho.assign(domain.cell_count(), 0.0);
  f.mu.assign(domain.cell_count(), 0.0);
  for (std::size_t n = 0; n < domain.fluid_count(); ++n) {
    const auto m = mixture_properties(phase.values[n], props);
    const std::size_t c = domain.fluid_cell(n);
    f.rho[c] = m.density;
    f.mu[c] = m.viscosity;
  }
  return f;
}

void check_phase(const FlowDomain& domain, const PhaseVolume& phase) {
  if (phase.values.size() != domain.fluid_count())
    throw PreconditionError("phase volume has " + std::to_string(phase.values.size()) + " values for " +
                            std::to_string(domain.fluid_count()) + " lumen voxels");
}

void check_velocity(const FlowDomain& domain, const VelocityField& v) {
  for (int a = 0; a < 3; ++a)
    if (v.components[static_cast<std::size_t>(a)].size() != domain.face_count(a))
      throw PreconditionError("velocity field does not match the flow domain");
}

void check_inlet(const FlowDomain& domain, const InletState& inlet) {
  if (inlet.velocity.size() != domain.inlet_faces().size() || inlet.phase.size() != domain.inlet_faces().size())
    throw PreconditionError("inlet state does not match the number of inlet faces");
  if (!domain.inlet_open())
    for (double w : inlet.velocity)
      if (w != 0.0) throw PreconditionError("inlet velocity must be zero on a closed inlet");
}

// Helper bound to one domain for face/cell lookups by coordinates.
struct Mesh {
  const FlowDomain& d;
  Ijk n;

  explicit Mesh(const FlowDomain& domain) : d(domain), n{domain.dims().nx, domain.dims().ny, domain.dims().nz} {}

  bool cell_in(const Ijk& p) const {
    return p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] < n[0] && p[1] < n[1] && p[2] < n[2];
  }
  bool fluid(const Ijk& p) const { return cell_in(p) && d.fluid(p[0], p[1], p[2]); }
  std::size_t cell(const Ijk& p) const { return d.cell_index(p[0], p[1], p[2]); }
  bool face_in(int axis, const Ijk& f) const {
    for (int q = 0; q < 3; ++q) {
      const int hi = n[static_cast<std::size_t>(q)] + (q == axis ? 1 : 0);
      if (f[static_cast<std::size_t>(q)] < 0 || f[static_cast<std::size_t>(q)] >= hi) return false;
    }
    return true;
  }
  std::size_t face(int axis, const Ijk& f) const { return d.face_index(axis, f[0], f[1], f[2]); }
  Kind kind(int axis, const Ijk& f) const { return d.face_kind(axis, face(axis, f)); }
};

double mean_fluid(const Mesh& m, const std::vector<double>& field, std::initializer_list<Ijk> cells) {
  double sum = 0.0;
  int count = 0;
  for (const auto& c : cells) {
    if (!m.fluid(c)) continue;
    sum += field[m.cell(c)];
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

// Curvature -div(n) per cell, n = grad(phi)/|grad(phi)|, with zero-gradient ghosts.
std::vector<double> curvature(const Mesh& m, const PhaseVolume& phase) {
  const auto& h = m.d.spacing();
  const std::size_t cells = m.d.cell_count();
  auto phi_at = [&](const Ijk& p, double fallback) {
    return m.fluid(p) ? phase.values[static_cast<std::size_t>(m.d.fluid_index(m.cell(p)))] : fallback;
  };
  std::array<std::vector<double>, 3> normal;
  for (auto& v : normal) v.assign(cells, 0.0);
  for (std::size_t n = 0; n < m.d.fluid_count(); ++n) {
    const std::size_t c = m.d.fluid_cell(n);
    const Ijk p{static_cast<int>(c % m.n[0]), static_cast<int>((c / m.n[0]) % m.n[1]),
                static_cast<int>(c / (static_cast<std::size_t>(m.n[0]) * m.n[1]))};
    const double self = phase.values[n];
    std::array<double, 3> g{};
    for (int a = 0; a < 3; ++a)
      g[static_cast<std::size_t>(a)] =
          (phi_at(shifted(p, a, 1), self) - phi_at(shifted(p, a, -1), self)) / (2.0 * h[static_cast<std::size_t>(a)]);
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (norm > 1e-8 / m.d.min_spacing())
      for (int a = 0; a < 3; ++a) normal[static_cast<std::size_t>(a)][c] = g[static_cast<std::size_t>(a)] / norm;
  }
  std::vector<double> kappa(cells, 0.0);
  for (std::size_t n = 0; n < m.d.fluid_count(); ++n) {
    const std::size_t c = m.d.fluid_cell(n);
    const Ijk p{static_cast<int>(c % m.n[0]), static_cast<int>((c / m.n[0]) % m.n[1]),
                static_cast<int>(c / (static_cast<std::size_t>(m.n[0]) * m.n[1]))};
    double div = 0.0;
    for (int a = 0; a < 3; ++a) {
      const auto& na = normal[static_cast<std::size_t>(a)];
      const Ijk up = shifted(p, a, 1), dn = shifted(p, a, -1);
      const double vu = m.fluid(up) ? na[m.cell(up)] : na[c];
      const double vd = m.fluid(dn) ? na[m.cell(dn)] : na[c];
      div += (vu - vd) / (2.0 * h[static_cast<std::size_t>(a)]);
    }
    kappa[c] = -div;
  }
  return kappa;
}

Ijk coords_of_face(const FlowDomain& d, int axis, std::size_t f) {
  const auto ext = d.face_extent(axis);
  const auto ex = static_cast<std::size_t>(ext[0]), ey = static_cast<std::size_t>(ext[1]);
  return {static_cast<int>(f % ex), static_cast<int>((f / ex) % ey), static_cast<int>(f / (ex * ey))};
}

VelocityField apply_projection(const FlowDomain& domain, std::array<std::vector<double>, 3> ustar,
                               const std::vector<double>& rho, double dt, const NsSettings& settings) {
  const Mesh m(domain);
  const auto& h = domain.spacing();
  const std::array<double, 3> area{h[1] * h[2], h[0] * h[2], h[0] * h[1]};
  const auto n = static_cast<Eigen::Index>(domain.fluid_count());

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n) * 7);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  bool anchored = false;
  for (std::size_t q = 0; q < domain.fluid_count(); ++q) {
    const std::size_t c = domain.fluid_cell(q);
    const Ijk p{static_cast<int>(c % m.n[0]), static_cast<int>((c / m.n[0]) % m.n[1]),
                static_cast<int>(c / (static_cast<std::size_t>(m.n[0]) * m.n[1]))};
    double diag = 0.0;
    for (int a = 0; a < 3; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      for (int side = 0; side < 2; ++side) {
        const Ijk f = side == 1 ? shifted(p, a, 1) : p;
        const std::size_t fi = m.face(a, f);
        const Kind k = domain.face_kind(a, fi);
        rhs[static_cast<Eigen::Index>(q)] -= area[ua] * ustar[ua][fi] * (side == 1 ? 1.0 : -1.0);
        if (k == Kind::interior) {
          const std::size_t nb = m.cell(shifted(p, a, side == 1 ? 1 : -1));
          const double coef = dt * area[ua] / (0.5 * (rho[c] + rho[nb]) * h[ua]);
          diag += coef;
          triplets.emplace_back(static_cast<int>(q), static_cast<int>(domain.fluid_index(nb)), -coef);
        } else if (k == Kind::outlet) {
          diag += dt * area[ua] / (rho[c] * 0.5 * h[ua]);
          anchored = true;
        }
      }
    }
    triplets.emplace_back(static_cast<int>(q), static_cast<int>(q), diag);
  }
  if (!anchored) rhs.array() -= rhs.mean();

  SparseMatrix a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  a.makeCompressed();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  CgSettings cg;
  cg.tolerance = settings.pressure_tolerance;
  cg.max_iterations = 200 * (m.n[0] + m.n[1] + m.n[2]);
  cg.preconditioner = Preconditioner::incomplete_cholesky;
  if (rhs.squaredNorm() > 0.0) solve_spd(a, rhs, p, cg, "pressure projection");
  if (!anchored) p.array() -= p.mean();

  // The divergence limit is scaled by the larger of the input and output speeds: when the
  // projection removes almost everything (hydrostatic rest) the output speed alone is
  // round-off and no solver tolerance could meet a limit relative to it.
  const double scale = max_speed(VelocityField{ustar, {}});
  VelocityField out;
  out.components = std::move(ustar);
  for (int ax = 0; ax < 3; ++ax) {
    const auto ua = static_cast<std::size_t>(ax);
    auto& comp = out.components[ua];
    for (std::size_t fi = 0; fi < comp.size(); ++fi) {
      const Kind k = domain.face_kind(ax, fi);
      if (k == Kind::solid) {
        comp[fi] = 0.0;
        continue;
      }
      if (k == Kind::inlet) continue;
      const Ijk f = coords_of_face(domain, ax, fi);
      const std::size_t lo = m.cell(shifted(f, ax, -1));
      if (k == Kind::interior) {
        const std::size_t hi = m.cell(f);
        const double rf = 0.5 * (rho[lo] + rho[hi]);
        comp[fi] -= dt / (rf * h[ua]) * (p[domain.fluid_index(hi)] - p[domain.fluid_index(lo)]);
      } else {
        comp[fi] -= dt / (rho[lo] * 0.5 * h[ua]) * (0.0 - p[domain.fluid_index(lo)]);
      }
    }
  }
  out.pressure.assign(p.data(), p.data() + p.size());

  const double umax = std::max(max_speed(out), scale);
  const double div = max_divergence(domain, out);
  const double limit = settings.divergence_tolerance * umax / domain.min_spacing();
  if (umax > 0.0 && div > limit) {
    std::ostringstream msg;
    msg << "projection left divergence " << div << " 1/s above the limit " << limit << " 1/s";
    throw NumericalError(msg.str());
  }
  return out;
}

double vanleer(double a, double b) { return a * b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Properties

void FluidProperties::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw PreconditionError(std::string("fluid properties: ") + what);
  };
  require(rho_liquid > 0.0 && rho_gas > 0.0, "densities must be positive");
  require(mu_liquid > 0.0 && mu_gas > 0.0, "viscosities must be positive");
  require(eps_liquid >= 1.0 && eps_gas >= 1.0, "relative permittivities must be at least 1");
  require(!surface_tension || *surface_tension >= 0.0, "surface tension must be non-negative");
  for (double g : gravity) require(std::isfinite(g), "gravity must be finite");
  for (double f : body_force) require(std::isfinite(f), "body force must be finite");
}

MixtureProperties mixture_properties(double void_fraction, const FluidProperties& props) {
  if (!(void_fraction >= 0.0 && void_fraction <= 1.0))
    throw PreconditionError("void fraction " + std::to_string(void_fraction) + " outside [0, 1]");
  const double phi = void_fraction;
  // Written as convex combinations so that phi = 0 and phi = 1 hit the pure-phase values exactly.
  return {props.rho_liquid * (1.0 - phi) + props.rho_gas * phi, props.mu_liquid * (1.0 - phi) + props.mu_gas * phi,
          props.eps_gas * phi + props.eps_liquid * (1.0 - phi)};
}

void FlowConditions::validate(const VelocityBounds& bounds) const {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("flow conditions '" + id + "': " + what);
  };
  require(inlet_gas_velocity >= bounds.gas_min && inlet_gas_velocity <= bounds.gas_max,
          "inlet gas velocity " + std::to_string(inlet_gas_velocity) + " m/s outside the admissible range");
  require(inlet_liquid_velocity >= bounds.liquid_min && inlet_liquid_velocity <= bounds.liquid_max,
          "inlet liquid velocity " + std::to_string(inlet_liquid_velocity) + " m/s outside the admissible range");
  require(gas_inlet_radius_fraction > 0.0 && gas_inlet_radius_fraction < 1.0,
          "gas_inlet_radius_fraction must lie in (0, 1)");
  require(duration > 0.0, "duration must be positive");
  require(output_interval > 0.0 && output_interval <= duration, "output_interval must lie in (0, duration]");
  require(inlet_fluctuation >= 0.0 && inlet_fluctuation < 1.0, "inlet_fluctuation must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Domain

FlowDomain::FlowDomain(const VoxelGrid& grid, bool inlet_open, bool outlet_open)
    : dims_(grid.dims()),
      spacing_(grid.spacing()),
      origin_(grid.origin()),
      inlet_open_(inlet_open),
      outlet_open_(outlet_open) {
  fluid_.assign(grid.cell_count(), 0);
  fluid_index_.assign(grid.cell_count(), -1);
  for (std::size_t c : grid.lumen_cells()) {
    fluid_[c] = 1;
    fluid_index_[c] = static_cast<std::int64_t>(fluid_cells_.size());
    fluid_cells_.push_back(c);
  }
  if (fluid_cells_.empty()) throw PreconditionError("flow domain: grid has no lumen voxels");

  const Ijk n{dims_.nx, dims_.ny, dims_.nz};
  for (int a = 0; a < 3; ++a) {
    const auto ext = face_extent(a);
    auto& kinds = kinds_[static_cast<std::size_t>(a)];
    kinds.assign(face_count(a), FaceKind::solid);
    for (int k = 0; k < ext[2]; ++k) {
      for (int j = 0; j < ext[1]; ++j) {
        for (int i = 0; i < ext[0]; ++i) {
          const Ijk f{i, j, k};
          const Ijk lo = shifted(f, a, -1);
          const bool lo_in = lo[static_cast<std::size_t>(a)] >= 0;
          const bool hi_in = f[static_cast<std::size_t>(a)] < n[static_cast<std::size_t>(a)];
          const bool lo_f = lo_in && fluid(lo[0], lo[1], lo[2]);
          const bool hi_f = hi_in && fluid(f[0], f[1], f[2]);
          FaceKind kind = FaceKind::solid;
          if (lo_f && hi_f) kind = FaceKind::interior;
          else if (a == 2 && !lo_in && hi_f && inlet_open_) kind = FaceKind::inlet;
          else if (a == 2 && !hi_in && lo_f && outlet_open_) kind = FaceKind::outlet;
          kinds[face_index(a, i, j, k)] = kind;
        }
      }
    }
  }
  for (std::size_t c : fluid_cells_) {
    const std::size_t plane = static_cast<std::size_t>(dims_.nx) * static_cast<std::size_t>(dims_.ny);
    if (c >= plane) break;
    inlet_faces_.push_back(face_index(2, static_cast<int>(c % dims_.nx), static_cast<int>(c / dims_.nx), 0));
  }
}

double FlowDomain::min_spacing() const noexcept { return std::min({spacing_[0], spacing_[1], spacing_[2]}); }
double FlowDomain::max_spacing() const noexcept { return std::max({spacing_[0], spacing_[1], spacing_[2]}); }

bool FlowDomain::fluid(int i, int j, int k) const noexcept { return fluid_[cell_index(i, j, k)] != 0; }

std::size_t FlowDomain::cell_index(int i, int j, int k) const noexcept {
  return static_cast<std::size_t>(i) +
         static_cast<std::size_t>(dims_.nx) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.ny) * k);
}

std::array<double, 3> FlowDomain::cell_center(std::size_t cell) const noexcept {
  const auto nx = static_cast<std::size_t>(dims_.nx), ny = static_cast<std::size_t>(dims_.ny);
  return {origin_[0] + (static_cast<double>(cell % nx) + 0.5) * spacing_[0],
          origin_[1] + (static_cast<double>((cell / nx) % ny) + 0.5) * spacing_[1],
          origin_[2] + (static_cast<double>(cell / (nx * ny)) + 0.5) * spacing_[2]};
}

std::array<int, 3> FlowDomain::face_extent(int axis) const noexcept {
  std::array<int, 3> ext{dims_.nx, dims_.ny, dims_.nz};
  ext[static_cast<std::size_t>(axis)] += 1;
  return ext;
}

std::size_t FlowDomain::face_count(int axis) const noexcept {
  const auto ext = face_extent(axis);
  return static_cast<std::size_t>(ext[0]) * static_cast<std::size_t>(ext[1]) * static_cast<std::size_t>(ext[2]);
}

std::size_t FlowDomain::face_index(int axis, int i, int j, int k) const noexcept {
  const auto ext = face_extent(axis);
  return static_cast<std::size_t>(i) +
         static_cast<std::size_t>(ext[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(ext[1]) * k);
}

// ---------------------------------------------------------------------------
// Velocity utilities

VelocityField make_velocity(const FlowDomain& domain, const InletState& inlet) {
  check_inlet(domain, inlet);
  VelocityField v;
  for (int a = 0; a < 3; ++a) v.components[static_cast<std::size_t>(a)].assign(domain.face_count(a), 0.0);
  for (std::size_t q = 0; q < domain.inlet_faces().size(); ++q)
    if (domain.inlet_open()) v.components[2][domain.inlet_faces()[q]] = inlet.velocity[q];
  v.pressure.assign(domain.fluid_count(), 0.0);
  return v;
}

double max_speed(const VelocityField& velocity) {
  double m = 0.0;
  for (const auto& comp : velocity.components)
    for (double u : comp) m = std::max(m, std::fabs(u));
  return m;
}

double max_divergence(const FlowDomain& domain, const VelocityField& velocity) {
  check_velocity(domain, velocity);
  const Mesh m(domain);
  const auto& h = domain.spacing();
  double worst = 0.0;
  for (std::size_t q = 0; q < domain.fluid_count(); ++q) {
    const std::size_t c = domain.fluid_cell(q);
    const Ijk p{static_cast<int>(c % m.n[0]), static_cast<int>((c / m.n[0]) % m.n[1]),
                static_cast<int>(c / (static_cast<std::size_t>(m.n[0]) * m.n[1]))};
    double div = 0.0;
    for (int a = 0; a < 3; ++a) {
      const auto& comp = velocity.components[static_cast<std::size_t>(a)];
      div += (comp[m.face(a, shifted(p, a, 1))] - comp[m.face(a, p)]) / h[static_cast<std::size_t>(a)];
    }
    worst = std::max(worst, std::fabs(div));
  }
  return worst;
}

VelocityField project(const FlowDomain& domain, const VelocityField& velocity, const PhaseVolume& phase,
                      const FluidProperties& props, double dt, const NsSettings& settings) {
  check_velocity(domain, velocity);
  check_phase(domain, phase);
  if (!(dt > 0.0)) throw PreconditionError("project: dt must be positive");
  const CellFields cf = cell_fields(domain, phase, props);
  return apply_projection(domain, velocity.components, cf.rho, dt, settings);
}

// ---------------------------------------------------------------------------
// Momentum

VelocityField ns_step(const FlowDomain& domain, const VelocityField& state, const PhaseVolume& phase,
                      const FluidProperties& props, double dt, const InletState& inlet, const NsSettings& settings) {
  check_velocity(domain, state);
  check_phase(domain, phase);
  check_inlet(domain, inlet);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw PreconditionError("ns_step: dt must be positive and finite");

  const double hmin = domain.min_spacing();
  double umax = max_speed(state);
  for (double w : inlet.velocity) umax = std::max(umax, std::fabs(w));
  if (umax > 0.0 && umax * dt / hmin > settings.cfl_limit * (1.0 + 1e-9)) {
    std::ostringstream msg;
    msg << "ns_step: CFL number " << umax * dt / hmin << " exceeds " << settings.cfl_limit;
    throw StabilityError(msg.str(), settings.cfl_limit * hmin / umax);
  }

  const Mesh m(domain);
  const auto& h = domain.spacing();
  const CellFields cf = cell_fields(domain, phase, props);
  const auto& rho = cf.rho;
  const auto& mu = cf.mu;
  const auto& u = state.components;

  std::vector<double> kappa;
  const bool tension = props.surface_tension && *props.surface_tension > 0.0;
  if (tension) kappa = curvature(m, phase);
  auto phi_cell = [&](std::size_t c) { return phase.values[static_cast<std::size_t>(domain.fluid_index(c))]; };

  // New inlet values, seen by the implicit solve as Dirichlet data.
  std::vector<double> inlet_w(domain.face_count(2), 0.0);
  for (std::size_t q = 0; q < domain.inlet_faces().size(); ++q) inlet_w[domain.inlet_faces()[q]] = inlet.velocity[q];

  std::array<std::vector<double>, 3> ustar;
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    const auto& comp = u[ua];
    ustar[ua].assign(comp.size(), 0.0);

    std::vector<std::int64_t> unknown(comp.size(), -1);
    std::vector<std::size_t> faces;
    for (std::size_t fi = 0; fi < comp.size(); ++fi) {
      if (domain.face_kind(a, fi) == Kind::interior) {
        unknown[fi] = static_cast<std::int64_t>(faces.size());
        faces.push_back(fi);
      }
    }
    const auto n = static_cast<Eigen::Index>(faces.size());
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(faces.size() * 7);
    Eigen::VectorXd rhs(n);
    Eigen::VectorXd x(n);
    std::vector<double> accel(faces.size(), 0.0);

    for (std::size_t q = 0; q < faces.size(); ++q) {
      const std::size_t fi = faces[q];
      const Ijk f = coords_of_face(domain, a, fi);
      const Ijk lo = shifted(f, a, -1);
      const Ijk hi = f;
      const std::size_t clo = m.cell(lo), chi = m.cell(hi);
      const double rf = 0.5 * (rho[clo] + rho[chi]);
      const double uf = comp[fi];
      double diag = rf / dt;
      double b = rf / dt * uf;

      // Neighbour value of this component across a face along axis `d`, side `s`,
      // with the no-slip / outflow ghost rules; used by the explicit advection.
      auto neighbour = [&](int d, int s) -> double {
        const Ijk g = shifted(f, d, s);
        if (d == a) return m.face_in(a, g) ? comp[m.face(a, g)] : 0.0;
        if (m.face_in(a, g) && m.kind(a, g) == Kind::interior) return comp[m.face(a, g)];
        if (d == 2 && s == 1 && g[2] == m.n[2] && domain.outlet_open()) return uf;
        return -uf;
      };

      // Implicit part of div(mu grad u_a).
      for (int s = -1; s <= 1; s += 2) {
        const Ijk g = shifted(f, a, s);
        const double coef = mu[m.cell(s > 0 ? hi : lo)] / (h[ua] * h[ua]);
        const Kind k = m.kind(a, g);
        if (k == Kind::interior) {
          diag += coef;
          triplets.emplace_back(static_cast<int>(q), static_cast<int>(unknown[m.face(a, g)]), -coef);
        } else if (k == Kind::solid) {
          diag += coef;
        } else if (k == Kind::inlet) {
          diag += coef;
          b += coef * inlet_w[m.face(a, g)];
        }
      }
      for (int d = 0; d < 3; ++d) {
        if (d == a) continue;
        const auto ud = static_cast<std::size_t>(d);
        for (int s = -1; s <= 1; s += 2) {
          const Ijk g = shifted(f, d, s);
          const double mu_e = mean_fluid(m, mu, {lo, hi, shifted(lo, d, s), shifted(hi, d, s)});
          const double coef = mu_e / (h[ud] * h[ud]);
          if (m.face_in(a, g) && m.kind(a, g) == Kind::interior) {
            diag += coef;
            triplets.emplace_back(static_cast<int>(q), static_cast<int>(unknown[m.face(a, g)]), -coef);
          } else if (d == 2 && s == 1 && g[2] == m.n[2] && domain.outlet_open()) {
            // zero-gradient outflow
          } else {
            diag += 2.0 * coef;
          }
        }
      }
      triplets.emplace_back(static_cast<int>(q), static_cast<int>(q), diag);

      // Explicit terms.
      double adv = 0.0;
      for (int d = 0; d < 3; ++d) {
        const auto ud = static_cast<std::size_t>(d);
        double vel = uf;
        if (d != a) {
          const auto& cd = u[ud];
          vel = 0.25 * (cd[m.face(d, lo)] + cd[m.face(d, shifted(lo, d, 1))] + cd[m.face(d, hi)] +
                        cd[m.face(d, shifted(hi, d, 1))]);
        }
        if (vel > 0.0) adv += vel * (uf - neighbour(d, -1)) / h[ud];
        else if (vel < 0.0) adv += vel * (neighbour(d, 1) - uf) / h[ud];
      }

      // Lagged transpose stress div(mu grad(u)^T), a-component.
      double transpose = (mu[chi] * (comp[m.face(a, shifted(f, a, 1))] - uf) -
                          mu[clo] * (uf - comp[m.face(a, shifted(f, a, -1))])) /
                         (h[ua] * h[ua]);
      for (int d = 0; d < 3; ++d) {
        if (d == a) continue;
        const auto ud = static_cast<std::size_t>(d);
        const auto& cd = u[ud];
        const double mu_p = mean_fluid(m, mu, {lo, hi, shifted(lo, d, 1), shifted(hi, d, 1)});
        const double mu_m = mean_fluid(m, mu, {lo, hi, shifted(lo, d, -1), shifted(hi, d, -1)});
        const double dp = (cd[m.face(d, shifted(hi, d, 1))] - cd[m.face(d, shifted(lo, d, 1))]) / h[ua];
        const double dm = (cd[m.face(d, hi)] - cd[m.face(d, lo)]) / h[ua];
        transpose += (mu_p * dp - mu_m * dm) / h[ud];
      }

      double force = rf * props.gravity[ua] + props.body_force[ua];
      if (tension) {
        const double kf = 0.5 * (kappa[clo] + kappa[chi]);
        force += *props.surface_tension * kf * (phi_cell(chi) - phi_cell(clo)) / h[ua];
      }

      rhs[static_cast<Eigen::Index>(q)] = b - rf * adv + transpose;
      accel[q] = force / rf;
      x[static_cast<Eigen::Index>(q)] = uf;
    }

    if (n > 0) {
      SparseMatrix mat(n, n);
      mat.setFromTriplets(triplets.begin(), triplets.end());
      mat.makeCompressed();
      CgSettings cg;
      cg.tolerance = settings.viscous_tolerance;
      cg.max_iterations = 20 * (m.n[0] + m.n[1] + m.n[2]);
      solve_spd(mat, rhs, x, cg, "viscous solve (axis " + std::to_string(a) + ")");
    }
    // Volume forces enter after the viscous solve so that a force balanced by a pressure
    // gradient (hydrostatics) stays a pure gradient and the projection removes it exactly.
    for (std::size_t q = 0; q < faces.size(); ++q)
      ustar[ua][faces[q]] = x[static_cast<Eigen::Index>(q)] + dt * accel[q];
  }

  // Boundary faces: inlet prescribed, outlet extrapolated from the face below.
  for (std::size_t fi : domain.inlet_faces())
    if (domain.inlet_open()) ustar[2][fi] = inlet_w[fi];
  if (domain.outlet_open()) {
    for (std::size_t fi = 0; fi < ustar[2].size(); ++fi) {
      if (domain.face_kind(2, fi) != Kind::outlet) continue;
      const Ijk f = coords_of_face(domain, 2, fi);
      ustar[2][fi] = ustar[2][m.face(2, shifted(f, 2, -1))];
    }
  }

  return apply_projection(domain, std::move(ustar), rho, dt, settings);
}

// ---------------------------------------------------------------------------
// Level set

double LevelSetStats::overshoot() const noexcept {
  return std::max({0.0, -min_before_clamp, max_before_clamp - 1.0});
}

double levelset_stable_dt(const FlowDomain& domain, const LevelSetParams& params) {
  const double eps = params.epsilon.value_or(0.5 * domain.max_spacing());
  double sum = 0.0;
  for (double h : domain.spacing()) sum += 2.0 / (h * h);
  if (params.gamma <= 0.0 || eps <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (params.gamma * eps * sum);
}

namespace {

std::vector<double> levelset_rate(const FlowDomain& domain, const std::vector<double>& phi, const VelocityField& vel,
                                  const InletState& inlet, double gamma, double eps) {
  const Mesh m(domain);
  const auto& h = domain.spacing();
  const std::array<double, 3> area{h[1] * h[2], h[0] * h[2], h[0] * h[1]};
  const double vol = domain.volume();
  const std::size_t nf = domain.fluid_count();

  auto value = [&](const Ijk& p) { return phi[static_cast<std::size_t>(domain.fluid_index(m.cell(p)))]; };

  // Cell-centred gradient with zero-gradient ghosts, for the tangential parts of |grad phi|.
  std::vector<std::array<double, 3>> grad(nf);
  for (std::size_t q = 0; q < nf; ++q) {
    const std::size_t c = domain.fluid_cell(q);
    const Ijk p{static_cast<int>(c % m.n[0]), static_cast<int>((c / m.n[0]) % m.n[1]),
                static_cast<int>(c / (static_cast<std::size_t>(m.n[0]) * m.n[1]))};
    for (int a = 0; a < 3; ++a) {
      const Ijk up = shifted(p, a, 1), dn = shifted(p, a, -1);
      const double vu = m.fluid(up) ? value(up) : phi[q];
      const double vd = m.fluid(dn) ? value(dn) : phi[q];
      grad[q][static_cast<std::size_t>(a)] = (vu - vd) / (2.0 * h[static_cast<std::size_t>(a)]);
    }
  }

  std::vector<double> rate(nf, 0.0);
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    const auto& comp = vel.components[ua];
    for (std::size_t fi = 0; fi < comp.size(); ++fi) {
      const Kind k = domain.face_kind(a, fi);
      if (k == Kind::solid) continue;
      const Ijk f = coords_of_face(domain, a, fi);
      const double uf = comp[fi];
      if (k == Kind::inlet) {
        const auto q = static_cast<std::size_t>(domain.fluid_index(m.cell(f)));
        const double inflow_phi = uf > 0.0 ? inlet.phase[q] : phi[q];
        rate[q] += area[ua] * uf * inflow_phi / vol;
        continue;
      }
      const Ijk lo = shifted(f, a, -1);
      const auto qlo = static_cast<std::size_t>(domain.fluid_index(m.cell(lo)));
      if (k == Kind::outlet) {
        rate[qlo] -= area[ua] * uf * phi[qlo] / vol;
        continue;
      }
      const auto qhi = static_cast<std::size_t>(domain.fluid_index(m.cell(f)));
      const double plo = phi[qlo], phi_hi = phi[qhi];

      double face_phi;
      if (uf >= 0.0) {
        const Ijk up = shifted(lo, a, -1);
        face_phi = m.fluid(up) ? plo + 0.5 * vanleer(plo - value(up), phi_hi - plo) : plo;
      } else {
        const Ijk up = shifted(f, a, 1);
        face_phi = m.fluid(up) ? phi_hi + 0.5 * vanleer(phi_hi - value(up), plo - phi_hi) : phi_hi;
      }
      double flux = uf * face_phi;

      const double dn = (phi_hi - plo) / h[ua];
      double norm2 = dn * dn;
      for (int d = 0; d < 3; ++d) {
        if (d == a) continue;
        const double t = 0.5 * (grad[qlo][static_cast<std::size_t>(d)] + grad[qhi][static_cast<std::size_t>(d)]);
        norm2 += t * t;
      }
      const double norm = std::sqrt(norm2);
      const double normal = norm > 1e-12 / h[ua] ? dn / norm : 0.0;
      const double pm = 0.5 * (plo + phi_hi);
      flux -= gamma * (eps * dn - pm * (1.0 - pm) * normal);

      rate[qlo] -= area[ua] * flux / vol;
      rate[qhi] += area[ua] * flux / vol;
    }
  }
  return rate;
}

}  // namespace

PhaseVolume levelset_step(const FlowDomain& domain, const PhaseVolume& phase, const VelocityField& velocity, double dt,
                          const InletState& inlet, const LevelSetParams& params, LevelSetStats* stats) {
  check_phase(domain, phase);
  check_velocity(domain, velocity);
  check_inlet(domain, inlet);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw PreconditionError("levelset_step: dt must be positive and finite");
  if (params.gamma < 0.0) throw PreconditionError("levelset_step: gamma must be non-negative");

  const double bound = levelset_stable_dt(domain, params);
  if (dt > bound * (1.0 + 1e-9)) {
    std::ostringstream msg;
    msg << "levelset_step: dt " << dt << " s exceeds the reinitialization stability bound " << bound << " s";
    throw StabilityError(msg.str(), bound);
  }
  const double umax = max_speed(velocity);
  if (umax > 0.0 && umax * dt / domain.min_spacing() > 0.5 * (1.0 + 1e-9)) {
    std::ostringstream msg;
    msg << "levelset_step: advective CFL " << umax * dt / domain.min_spacing() << " exceeds 0.5";
    throw StabilityError(msg.str(), 0.5 * domain.min_spacing() / umax);
  }

  const double eps = params.epsilon.value_or(0.5 * domain.max_spacing());
  const auto& phi0 = phase.values;
  const auto r0 = levelset_rate(domain, phi0, velocity, inlet, params.gamma, eps);
  std::vector<double> phi1(phi0.size());
  for (std::size_t q = 0; q < phi0.size(); ++q) phi1[q] = phi0[q] + dt * r0[q];
  const auto r1 = levelset_rate(domain, phi1, velocity, inlet, params.gamma, eps);

  PhaseVolume out;
  out.values.resize(phi0.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < phi0.size(); ++q) {
    const double v = 0.5 * phi0[q] + 0.5 * (phi1[q] + dt * r1[q]);
    if (!std::isfinite(v)) throw NumericalError("levelset_step: non-finite void fraction");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    out.values[q] = std::clamp(v, 0.0, 1.0);
  }
  if (stats) *stats = {lo, hi};
  return out;
}

// ---------------------------------------------------------------------------
// Simulation driver

InletState make_inlet(const FlowDomain& domain, const FlowConditions& cond) {
  const auto& faces = domain.inlet_faces();
  InletState inlet;
  inlet.velocity.resize(faces.size());
  inlet.phase.resize(faces.size());
  // Effective pipe radius from the lumen cross-section.
  const auto& h = domain.spacing();
  const double radius = std::sqrt(static_cast<double>(faces.size()) * h[0] * h[1] / std::numbers::pi);
  const double gas_radius = cond.gas_inlet_radius_fraction * radius;
  for (std::size_t q = 0; q < faces.size(); ++q) {
    const auto c = domain.cell_center(domain.fluid_cell(q));
    const bool gas = std::hypot(c[0], c[1]) < gas_radius;
    inlet.velocity[q] = domain.inlet_open() ? (gas ? cond.inlet_gas_velocity : cond.inlet_liquid_velocity) : 0.0;
    inlet.phase[q] = gas ? 1.0 : 0.0;
  }
  return inlet;
}

std::vector<PhaseSnapshot> simulate_flow(const VoxelGrid& grid, const FluidProperties& props,
                                         const FlowConditions& cond, std::uint64_t seed,
                                         const SimulationSettings& settings) {
  props.validate();
  cond.validate(settings.bounds);
  const FlowDomain domain(grid, true, true);
  const InletState base = make_inlet(domain, cond);

  PhaseVolume phase;
  phase.values.assign(domain.fluid_count(), cond.initial_fill == InitialFill::gas ? 1.0 : 0.0);
  const double hmin = domain.min_spacing();
  const double dt_reinit = 0.95 * levelset_stable_dt(domain, settings.levelset);

  double t = 0.0;
  VelocityField vel;
  try {
    vel = project(domain, make_velocity(domain, base), phase, props, dt_reinit, settings.ns);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("t = 0 s: ") + e.what());
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto outputs = static_cast<std::size_t>(std::llround(cond.duration / cond.output_interval));
  std::vector<PhaseSnapshot> snapshots;
  snapshots.reserve(outputs);
  for (std::size_t out = 1; out <= outputs; ++out) {
    const double t_next = static_cast<double>(out) * cond.output_interval;
    while (t < t_next - 1e-12 * cond.output_interval) {
      InletState inlet = base;
      if (cond.inlet_fluctuation > 0.0)
        for (double& w : inlet.velocity) w *= 1.0 + cond.inlet_fluctuation * normal(rng);

      double umax = max_speed(vel);
      for (double w : inlet.velocity) umax = std::max(umax, std::fabs(w));
      double dt = dt_reinit;
      if (umax > 0.0) dt = std::min(dt, settings.ns.cfl_limit * hmin / umax);
      if (props.surface_tension && *props.surface_tension > 0.0) {
        const double rho_mean = 0.5 * (props.rho_liquid + props.rho_gas);
        dt = std::min(dt, std::sqrt(rho_mean * hmin * hmin * hmin / (2.0 * std::numbers::pi * *props.surface_tension)));
      }
      if (t + dt > t_next) dt = t_next - t;

      try {
        PhaseVolume next = levelset_step(domain, phase, vel, dt, inlet, settings.levelset);
        vel = ns_step(domain, vel, next, props, dt, inlet, settings.ns);
        phase = std::move(next);
      } catch (const NumericalError& e) {
        std::ostringstream msg;
        msg << "t = " << t << " s: " << e.what();
        throw NumericalError(msg.str());
      }
      t += dt;
    }
    t = t_next;
    snapshots.push_back({t_next, phase});
    if (settings.on_snapshot) settings.on_snapshot(out - 1, t_next);
  }
  return snapshots;
}

PermittivityVolume phase_to_permittivity(const PhaseVolume& phase, const VoxelGrid& grid, const FluidProperties& props,
                                         double wall_eps) {
  if (phase.values.size() != grid.lumen_count())
    throw PreconditionError("phase volume does not match the grid's lumen voxel count");
  PermittivityVolume perm = uniform_permittivity(grid, props.eps_liquid, wall_eps, 1.0);
  const auto lumen = grid.lumen_cells();
  for (std::size_t q = 0; q < lumen.size(); ++q)
    perm.values[lumen[q]] = mixture_properties(phase.values[q], props).permittivity;
  return perm;
}

}  // namespace ectwin
