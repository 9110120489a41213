#include <doctest.h>

#include <cmath>
#include <random>

#include "ectwin/error.hpp"
#include "ectwin/flow.hpp"
#include "fixtures.hpp"

using namespace ectwin;
using ectwin::testing::box_grid;

namespace {

const VoxelGrid& pipe() {
  static const VoxelGrid g = build_grid(SensorGeometry{}, {16, 16, 32});
  return g;
}

InletState quiet_inlet(const FlowDomain& d) {
  return {std::vector<double>(d.inlet_faces().size(), 0.0), std::vector<double>(d.inlet_faces().size(), 0.0)};
}

double total(const PhaseVolume& p) {
  double s = 0.0;
  for (double v : p.values) s += v;
  return s;
}

PhaseVolume sphere(const FlowDomain& d, std::array<double, 3> centre, double radius) {
  PhaseVolume ph;
  ph.values.resize(d.fluid_count());
  const double eps = d.max_spacing() / 2;
  for (std::size_t q = 0; q < d.fluid_count(); ++q) {
    const auto c = d.cell_center(d.fluid_cell(q));
    const double r = std::hypot(c[0] - centre[0], c[1] - centre[1], c[2] - centre[2]);
    ph.values[q] = 0.5 * (1.0 - std::tanh((r - radius) / (2.0 * eps)));
  }
  return ph;
}

}  // namespace

TEST_CASE("mixture rule endpoints and midpoint") {
  const FluidProperties p;
  const auto liquid = mixture_properties(0.0, p);
  CHECK(liquid.permittivity == 2.18);
  CHECK(liquid.density == 879.0);
  CHECK(liquid.viscosity == 0.02);
  const auto gas = mixture_properties(1.0, p);
  CHECK(gas.permittivity == 1.0);
  CHECK(gas.density == 1.3);
  CHECK(gas.viscosity == 1.81e-5);
  CHECK(mixture_properties(0.5, p).permittivity == doctest::Approx(1.59).epsilon(1e-15));
  CHECK_THROWS_AS(mixture_properties(-0.01, p), PreconditionError);
  CHECK_THROWS_AS(mixture_properties(1.01, p), PreconditionError);
  CHECK_THROWS_AS(mixture_properties(std::nan(""), p), PreconditionError);
}

TEST_CASE("mixture permittivity stays between the pure phases") {
  const FluidProperties p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < 1000; ++n) {
    const double phi = u(rng);
    const auto m = mixture_properties(phi, p);
    CHECK(m.permittivity >= 1.0);
    CHECK(m.permittivity <= 2.18);
    CHECK(m.density >= 1.3);
    CHECK(m.density <= 879.0);
  }
}

TEST_CASE("phase_to_permittivity") {
  const auto& g = pipe();
  const FluidProperties props;
  auto check_regions = [&](const PermittivityVolume& e, double lumen) {
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
      switch (g.region(c)) {
        case Region::lumen:
          if (lumen > 0) CHECK(e.values[c] == lumen);
          break;
        case Region::pipe_wall: CHECK(e.values[c] == 2.6); break;
        default: CHECK(e.values[c] == 1.0); break;
      }
    }
  };
  check_regions(phase_to_permittivity(PhaseVolume{std::vector<double>(g.lumen_count(), 0.0)}, g, props), 2.18);
  check_regions(phase_to_permittivity(PhaseVolume{std::vector<double>(g.lumen_count(), 1.0)}, g, props), 1.0);

  PhaseVolume split;
  for (auto c : g.lumen_cells()) split.values.push_back(g.cell_center(c)[0] < 0.0 ? 1.0 : 0.0);
  const auto e = phase_to_permittivity(split, g, props);
  check_regions(e, -1.0);
  for (auto c : g.lumen_cells()) CHECK((e.values[c] == 1.0 || e.values[c] == 2.18));
  CHECK_THROWS_AS(phase_to_permittivity(PhaseVolume{{0.0}}, g, props), PreconditionError);
}

TEST_CASE("rest state is a fixed point") {
  FlowDomain d(pipe(), false, false);
  const PhaseVolume ph{std::vector<double>(d.fluid_count(), 0.0)};
  const auto in = quiet_inlet(d);
  FluidProperties p;
  p.gravity = {0, 0, 0};
  auto v = make_velocity(d, in);
  for (int s = 0; s < 5; ++s) v = ns_step(d, v, ph, p, 1e-3, in);
  CHECK(max_speed(v) == 0.0);
  for (double q : v.pressure) CHECK(q == doctest::Approx(v.pressure.front()).epsilon(1e-12));

  // Hydrostatic balance: gravity is absorbed by the pressure.
  auto w = make_velocity(d, in);
  for (int s = 0; s < 5; ++s) w = ns_step(d, w, ph, FluidProperties{}, 1e-3, in);
  CHECK(max_speed(w) < 1e-9);
}

TEST_CASE("projection removes the divergence of a random field") {
  for (bool open : {false, true}) {
    FlowDomain d(pipe(), open, open);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto in = quiet_inlet(d);
    if (open)
      for (auto& w : in.velocity) w = 0.3;
    auto v = make_velocity(d, in);
    for (int a = 0; a < 3; ++a)
      for (std::size_t f = 0; f < d.face_count(a); ++f)
        if (d.face_kind(a, f) == FlowDomain::FaceKind::interior) v.components[a][f] = u(rng);
    const auto ph = sphere(d, {0.0, 0.0, 0.04}, 0.01);
    const auto out = project(d, v, ph, FluidProperties{}, 1e-3);
    CHECK(max_divergence(d, out) < 1e-6 * max_speed(out) / d.min_spacing());
  }
}

TEST_CASE("uniform phase fields are fixed points of the level-set step") {
  FlowDomain d(pipe(), false, false);
  const auto in = quiet_inlet(d);
  const auto v = make_velocity(d, in);
  const double dt = 0.9 * levelset_stable_dt(d, {});
  for (double fill : {0.0, 1.0}) {
    PhaseVolume ph{std::vector<double>(d.fluid_count(), fill)};
    for (int s = 0; s < 10; ++s) ph = levelset_step(d, ph, v, dt, in);
    for (double x : ph.values) CHECK(x == fill);
  }
}

TEST_CASE("level-set step refuses unstable time steps") {
  FlowDomain d(pipe(), false, false);
  const auto in = quiet_inlet(d);
  const auto v = make_velocity(d, in);
  const PhaseVolume ph{std::vector<double>(d.fluid_count(), 0.0)};
  const double bound = levelset_stable_dt(d, {});
  CHECK_THROWS_AS(levelset_step(d, ph, v, 1.01 * bound, in), StabilityError);
  try {
    levelset_step(d, ph, v, 2.0 * bound, in);
  } catch (const StabilityError& e) {
    CHECK(e.bound() == doctest::Approx(bound));
  }
  // The diffusive part of the reinitialization flux scales with gamma * epsilon.
  LevelSetParams thin;
  thin.epsilon = d.max_spacing() / 4;
  CHECK(levelset_stable_dt(d, thin) == doctest::Approx(2.0 * bound));
  LevelSetParams fast;
  fast.gamma = 2.0;
  CHECK(levelset_stable_dt(d, fast) == doctest::Approx(0.5 * bound));
}

TEST_CASE("ns_step refuses CFL violations") {
  FlowDomain d(pipe(), true, true);
  auto in = quiet_inlet(d);
  for (auto& w : in.velocity) w = 1.0;
  const PhaseVolume ph{std::vector<double>(d.fluid_count(), 0.0)};
  const auto v = project(d, make_velocity(d, in), ph, FluidProperties{}, 1e-3);
  const double limit = 0.4 * d.min_spacing() / max_speed(v);
  CHECK_NOTHROW(ns_step(d, v, ph, FluidProperties{}, 0.9 * limit, in));
  CHECK_THROWS_AS(ns_step(d, v, ph, FluidProperties{}, 1.5 * limit, in), StabilityError);
}

TEST_CASE("translated bubble keeps its mass and moves with the flow") {
  const auto g = box_grid(48, 24, 24, 1e-3);
  FlowDomain d(g, false, false);
  auto ph = sphere(d, {12e-3, 12e-3, 12e-3}, 5e-3);
  VelocityField v;
  for (int a = 0; a < 3; ++a) v.components[a].assign(d.face_count(a), 0.0);
  for (std::size_t f = 0; f < d.face_count(0); ++f)
    if (d.face_kind(0, f) == FlowDomain::FaceKind::interior) v.components[0][f] = 1.0;
  const auto in = quiet_inlet(d);

  auto centroid = [&](const PhaseVolume& p) {
    double m = 0, x = 0;
    for (std::size_t q = 0; q < p.values.size(); ++q) {
      m += p.values[q];
      x += p.values[q] * d.cell_center(d.fluid_cell(q))[0];
    }
    return x / m;
  };
  const double m0 = total(ph), x0 = centroid(ph);
  const double dt = 0.3e-3;
  double overshoot = 0.0;
  for (int s = 0; s < 50; ++s) {
    LevelSetStats st;
    ph = levelset_step(d, ph, v, dt, in, {}, &st);
    overshoot = std::max(overshoot, st.overshoot());
  }
  const double expected = 50 * dt * 1.0;
  CHECK(std::abs(centroid(ph) - x0 - expected) / expected < 0.05);
  CHECK(std::abs(total(ph) - m0) / m0 < 0.01);
  CHECK(overshoot <= 0.05);
}

TEST_CASE("closed-domain rising bubble conserves gas and stays divergence-free") {
  FlowDomain d(pipe(), false, false);
  auto ph = sphere(d, {0.0, 0.0, 0.03}, 8e-3);
  const auto in = quiet_inlet(d);
  auto v = make_velocity(d, in);
  const double m0 = total(ph);
  const double dt_reinit = 0.95 * levelset_stable_dt(d, {});
  double overshoot = 0.0;
  for (int s = 0; s < 100; ++s) {
    double dt = dt_reinit;
    if (max_speed(v) > 0) dt = std::min(dt, 0.4 * d.min_spacing() / max_speed(v));
    LevelSetStats st;
    ph = levelset_step(d, ph, v, dt, in, {}, &st);
    overshoot = std::max(overshoot, st.overshoot());
    v = ns_step(d, v, ph, FluidProperties{}, dt, in);
    if (max_speed(v) > 0) CHECK(max_divergence(d, v) < 1e-6 * max_speed(v) / d.min_spacing());
  }
  CHECK(max_speed(v) > 0.0);
  CHECK(std::abs(total(ph) - m0) / m0 < 0.01);
  CHECK(overshoot <= 0.05);
}

TEST_CASE("pipe flow develops a parabolic profile") {
  FluidProperties p;
  p.mu_liquid = 1.0;
  p.gravity = {0, 0, 0};
  FlowDomain d(pipe(), true, true);
  const PhaseVolume ph{std::vector<double>(d.fluid_count(), 0.0)};
  const double w_in = 0.05;
  InletState in{std::vector<double>(d.inlet_faces().size(), w_in), std::vector<double>(d.inlet_faces().size(), 0.0)};
  auto v = project(d, make_velocity(d, in), ph, p, 1e-3);
  for (int s = 0; s < 400; ++s) v = ns_step(d, v, ph, p, 0.4 * d.min_spacing() / std::max(max_speed(v), 2 * w_in), in);

  // Analytic profile 2W(1 - r^2/R^2) with R the radius of a disc of the discrete cross-section area.
  const auto& h = d.spacing();
  const double radius = std::sqrt(d.inlet_faces().size() * h[0] * h[1] / M_PI);
  const int k = d.dims().nz / 2;
  double num = 0, den = 0;
  for (int j = 0; j < d.dims().ny; ++j)
    for (int i = 0; i < d.dims().nx; ++i) {
      if (!d.fluid(i, j, k)) continue;
      const auto c = d.cell_center(d.cell_index(i, j, k));
      const double exact = 2 * w_in * (1 - (c[0] * c[0] + c[1] * c[1]) / (radius * radius));
      const double w = v.components[2][d.face_index(2, i, j, k)];
      num += (w - exact) * (w - exact);
      den += exact * exact;
    }
  CHECK(std::sqrt(num / den) < 0.10);
}

TEST_CASE("flow condition validation") {
  FlowConditions c;
  CHECK_NOTHROW(c.validate());
  c.inlet_gas_velocity = 6.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.inlet_gas_velocity = 1.0;
  c.duration = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.duration = 1.0;
  c.gas_inlet_radius_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.gas_inlet_radius_fraction = 0.5;
  c.output_interval = 2.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  FluidProperties p;
  p.rho_gas = 0.0;
  CHECK_THROWS_AS(p.validate(), PreconditionError);
}

TEST_CASE("inlet split puts gas in the central disc") {
  FlowDomain d(pipe(), true, true);
  FlowConditions c;
  c.inlet_gas_velocity = 0.425;
  c.inlet_liquid_velocity = 0.709;
  const auto in = make_inlet(d, c);
  const auto& h = d.spacing();
  const double radius = std::sqrt(d.inlet_faces().size() * h[0] * h[1] / M_PI);
  std::size_t gas = 0;
  for (std::size_t q = 0; q < in.velocity.size(); ++q) {
    const auto p = d.cell_center(d.fluid_cell(q));
    const bool inner = std::hypot(p[0], p[1]) < 0.5 * radius;
    CHECK(in.phase[q] == (inner ? 1.0 : 0.0));
    CHECK(in.velocity[q] == (inner ? 0.425 : 0.709));
    gas += inner;
  }
  CHECK(gas > 0);
  CHECK(gas < in.velocity.size());
}

TEST_CASE("quiescent liquid stays liquid") {
  FluidProperties p;
  p.gravity = {0, 0, 0};
  FlowConditions c;
  c.duration = 0.02;
  c.output_interval = 0.005;
  const auto snaps = simulate_flow(pipe(), p, c, 1);
  REQUIRE(snaps.size() == 4);
  for (const auto& s : snaps)
    for (double x : s.phase.values) CHECK(x == 0.0);
  CHECK(snaps.back().time == doctest::Approx(0.02));
}

TEST_CASE("representative condition fills the pipe with gas and is deterministic") {
  FlowConditions c;
  c.inlet_gas_velocity = 0.425;
  c.inlet_liquid_velocity = 0.709;
  c.duration = 0.04;
  c.output_interval = 0.01;
  c.inlet_fluctuation = 0.1;
  std::vector<std::size_t> seen;
  SimulationSettings settings;
  settings.on_snapshot = [&](std::size_t i, double) { seen.push_back(i); };
  const auto a = simulate_flow(pipe(), FluidProperties{}, c, 9, settings);
  const auto b = simulate_flow(pipe(), FluidProperties{}, c, 9);
  const auto other = simulate_flow(pipe(), FluidProperties{}, c, 10);
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3});
  REQUIRE(a.size() == 4);
  double previous = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    CHECK(a[s].phase.values == b[s].phase.values);
    const double mean = total(a[s].phase) / a[s].phase.values.size();
    CHECK(mean > previous);
    previous = mean;
    for (double x : a[s].phase.values) CHECK((x >= 0.0 && x <= 1.0));
  }
  CHECK(a.back().phase.values != other.back().phase.values);
}

TEST_CASE("step failures carry the simulation time") {
  FlowConditions c;
  c.inlet_gas_velocity = 0.4;
  c.inlet_liquid_velocity = 0.4;
  c.duration = 0.01;
  c.output_interval = 0.01;
  SimulationSettings settings;
  settings.ns.divergence_tolerance = 0.0;
  try {
    simulate_flow(pipe(), FluidProperties{}, c, 1, settings);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).rfind("t = ", 0) == 0);
  }
}
