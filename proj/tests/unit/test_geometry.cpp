#include <doctest.h>

#include <cmath>
#include <numbers>
#include <queue>
#include <set>

#include "ectwin/error.hpp"
#include "ectwin/geometry.hpp"

using namespace ectwin;

namespace {

// Faces of one electrode, grouped into 6-connected components through shared edges
// (two faces are neighbours when they touch along a face of the same axis or a corner edge).
int face_components(const VoxelGrid& g, int electrode) {
  struct F {
    int axis, i, j, k;
    auto operator<=>(const F&) const = default;
  };
  std::set<F> faces;
  for (int a = 0; a < 3; ++a) {
    const auto ext = g.face_extent(a);
    for (int k = 0; k < ext[2]; ++k)
      for (int j = 0; j < ext[1]; ++j)
        for (int i = 0; i < ext[0]; ++i)
          if (g.face_label(a, g.face_index(a, i, j, k)) == electrode) faces.insert({a, i, j, k});
  }
  // Each face occupies a unit box in doubled coordinates; neighbours lie within
  // one unit in every doubled coordinate.
  auto centre = [](const F& f) {
    std::array<int, 3> c{2 * f.i + 1, 2 * f.j + 1, 2 * f.k + 1};
    c[f.axis] -= 1;
    return c;
  };
  std::set<F> seen;
  int components = 0;
  for (const auto& start : faces) {
    if (seen.count(start)) continue;
    ++components;
    std::queue<F> todo;
    todo.push(start);
    seen.insert(start);
    while (!todo.empty()) {
      const auto cur = todo.front();
      todo.pop();
      const auto cc = centre(cur);
      for (const auto& other : faces) {
        if (seen.count(other)) continue;
        const auto oc = centre(other);
        if (std::abs(oc[0] - cc[0]) <= 2 && std::abs(oc[1] - cc[1]) <= 2 && std::abs(oc[2] - cc[2]) <= 2) {
          seen.insert(other);
          todo.push(other);
        }
      }
    }
  }
  return components;
}

}  // namespace

TEST_CASE("default sensor at 32x32x64 carries twelve electrode labels") {
  const auto g = build_grid(SensorGeometry{}, {32, 32, 64});
  std::set<int> labels;
  for (int a = 0; a < 3; ++a)
    for (auto l : g.face_labels(a))
      if (l >= 0) labels.insert(l);
  CHECK(labels.size() == 12);
  CHECK(*labels.begin() == 0);
  CHECK(*labels.rbegin() == 11);
  CHECK(g.electrode_count() == 12);
  CHECK(g.lumen_count() > 100 * 66);
}

TEST_CASE("8x8x8 cannot resolve the pipe wall") {
  CHECK_THROWS_AS(build_grid(SensorGeometry{}, {8, 8, 8}), WallUnresolvedError);
  CHECK_THROWS_AS(build_grid(SensorGeometry{}, {7, 32, 32}), PreconditionError);
}

TEST_CASE("grids are deterministic") {
  const auto a = build_grid(SensorGeometry{}, {20, 20, 24});
  const auto b = build_grid(SensorGeometry{}, {20, 20, 24});
  CHECK(a == b);
  CHECK(a.hash() == b.hash());
  const auto c = build_grid(SensorGeometry{}, {20, 20, 26});
  CHECK(a.hash() != c.hash());
}

TEST_CASE("electrode pairs") {
  const auto p12 = electrode_pairs(12);
  REQUIRE(p12.size() == 66);
  CHECK(p12.front() == ElectrodePair{0, 1});
  CHECK(p12.back() == ElectrodePair{10, 11});
  CHECK(electrode_pairs(2) == std::vector<ElectrodePair>{{0, 1}});
  CHECK(electrode_pairs(4).size() == 6);
  CHECK(electrode_pairs(SensorGeometry{}) == p12);
  for (std::size_t m = 1; m < p12.size(); ++m) CHECK(p12[m - 1] < p12[m]);
}

TEST_CASE("geometry invariants are enforced") {
  SensorGeometry g;
  CHECK_NOTHROW(g.validate());
  CHECK(g.measurement_count() == 66);

  auto overlap = g;
  overlap.electrode_coverage_angle = 90.0;
  CHECK_THROWS_AS(overlap.validate(), PreconditionError);

  auto tall = g;
  tall.domain_height = 0.05;
  CHECK_THROWS_AS(tall.validate(), PreconditionError);

  auto shield = g;
  shield.shield_radius = 0.0275;
  CHECK_THROWS_AS(shield.validate(), PreconditionError);
}

TEST_CASE("lumen volume approaches the cylinder volume") {
  const SensorGeometry geo;
  const double r = geo.pipe_inner_diameter / 2;
  const double exact = std::numbers::pi * r * r * geo.domain_height;
  auto error_at = [&](int n) {
    const auto g = build_grid(geo, {n, n, 16});
    return std::abs(g.lumen_count() * g.cell_volume() - exact) / exact;
  };
  // Staircase errors oscillate with resolution, so compare a coarse and a fine grid.
  const double coarse = error_at(32);
  const double fine = error_at(128);
  CHECK(coarse < 0.05);
  CHECK(fine < coarse);
  CHECK(fine < 0.01);
}

TEST_CASE("lumen voxels lie inside the pipe and regions are consistent") {
  const SensorGeometry geo;
  const auto g = build_grid(geo, {24, 24, 32});
  const double r = geo.pipe_inner_diameter / 2;
  std::size_t ordinal = 0;
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    const auto p = g.cell_center(c);
    if (g.region(c) == Region::lumen) {
      CHECK(std::hypot(p[0], p[1]) <= r);
      CHECK(g.lumen_index(c) == static_cast<std::int64_t>(ordinal));
      CHECK(g.lumen_cells()[ordinal] == c);
      ++ordinal;
    } else {
      CHECK(g.lumen_index(c) == -1);
    }
  }
  CHECK(ordinal == g.lumen_count());
}

TEST_CASE("electrode face sets are nonempty, connected and disjoint") {
  const auto g = build_grid(SensorGeometry{}, {32, 32, 40});
  for (int e = 0; e < 12; ++e) {
    INFO("electrode " << e);
    CHECK(face_components(g, e) == 1);
  }
  // A face holds a single label, so disjointness reduces to every label being within range.
  for (int a = 0; a < 3; ++a)
    for (auto l : g.face_labels(a)) CHECK((l >= kShieldFace && l < 12));
}

TEST_CASE("electrode faces sit on the pipe outer surface between wall and exterior") {
  const SensorGeometry geo;
  const auto g = build_grid(geo, {32, 32, 40});
  for (int a = 0; a < 3; ++a) {
    const auto ext = g.face_extent(a);
    for (int k = 0; k < ext[2]; ++k)
      for (int j = 0; j < ext[1]; ++j)
        for (int i = 0; i < ext[0]; ++i) {
          const auto l = g.face_label(a, g.face_index(a, i, j, k));
          if (l < 0) continue;
          std::array<int, 3> lo{i, j, k};
          lo[a] -= 1;
          const auto hi = std::array<int, 3>{i, j, k};
          REQUIRE(lo[a] >= 0);
          REQUIRE(hi[a] < (a == 0 ? g.nx() : a == 1 ? g.ny() : g.nz()));
          const auto r1 = g.region(g.cell_index(lo[0], lo[1], lo[2]));
          const auto r2 = g.region(g.cell_index(hi[0], hi[1], hi[2]));
          const bool wall_exterior = (r1 == Region::pipe_wall && r2 == Region::exterior) ||
                                     (r2 == Region::pipe_wall && r1 == Region::exterior);
          CHECK(wall_exterior);
        }
  }
}
