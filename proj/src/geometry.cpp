#include "ectwin/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "ectwin/error.hpp"
#include "ectwin/hash.hpp"

namespace ectwin {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw PreconditionError("sensor geometry: " + message);
}

// Unsigned angular distance in degrees, in [0, 180].
double angular_distance(double a, double b) {
  return std::fabs(std::remainder(a - b, 360.0));
}

}  // namespace

void SensorGeometry::validate() const {
  require(pipe_inner_diameter > 0.0, "pipe_inner_diameter must be positive");
  require(pipe_outer_diameter > pipe_inner_diameter, "pipe_outer_diameter must exceed pipe_inner_diameter");
  require(electrode_layers >= 1, "electrode_layers must be at least 1");
  require(electrodes_per_layer >= 1, "electrodes_per_layer must be at least 1");
  require(electrode_axial_length > 0.0, "electrode_axial_length must be positive");
  require(electrode_coverage_angle > 0.0, "electrode_coverage_angle must be positive");
  require(electrodes_per_layer * electrode_coverage_angle < 360.0,
          "electrodes on one layer overlap (electrodes_per_layer * coverage >= 360 deg)");
  require(layer_axial_gap >= 0.0, "layer_axial_gap must be non-negative");
  require(domain_height > 0.0, "domain_height must be positive");
  require(stack_height() <= domain_height, "electrode stack is taller than domain_height");
  require(shield_radius > 0.5 * pipe_outer_diameter, "shield_radius must exceed the pipe outer radius");
  require(wall_permittivity > 0.0, "wall_permittivity must be positive");
}

std::vector<ElectrodePair> electrode_pairs(int electrode_count) {
  std::vector<ElectrodePair> pairs;
  if (electrode_count < 2) return pairs;
  pairs.reserve(static_cast<std::size_t>(electrode_count) * (electrode_count - 1) / 2);
  for (int i = 0; i < electrode_count; ++i)
    for (int j = i + 1; j < electrode_count; ++j) pairs.emplace_back(i, j);
  return pairs;
}

std::vector<ElectrodePair> electrode_pairs(const SensorGeometry& geometry) {
  return electrode_pairs(geometry.electrode_count());
}

VoxelGrid::VoxelGrid(GridDims dims, std::array<double, 3> spacing, std::array<double, 3> origin,
                     std::vector<Region> regions, std::array<std::vector<std::int16_t>, 3> face_labels,
                     int electrode_count)
    : dims_(dims),
      spacing_(spacing),
      origin_(origin),
      regions_(std::move(regions)),
      face_labels_(std::move(face_labels)),
      electrode_count_(electrode_count) {
  if (dims_.nx < 1 || dims_.ny < 1 || dims_.nz < 1)
    throw PreconditionError("voxel grid: every dimension must be at least 1");
  for (double h : spacing_)
    if (!(h > 0.0)) throw PreconditionError("voxel grid: spacing must be positive");
  if (regions_.size() != dims_.cells())
    throw PreconditionError("voxel grid: region array does not match dimensions");
  for (int axis = 0; axis < 3; ++axis) {
    const auto ext = face_extent(axis);
    const auto expected = static_cast<std::size_t>(ext[0]) * ext[1] * ext[2];
    if (face_labels_[axis].size() != expected)
      throw PreconditionError("voxel grid: face label array does not match dimensions");
    for (auto label : face_labels_[axis])
      if (label >= electrode_count_ || label < kShieldFace)
        throw PreconditionError("voxel grid: face label out of range");
  }

  lumen_index_.assign(regions_.size(), -1);
  for (std::size_t c = 0; c < regions_.size(); ++c) {
    if (regions_[c] == Region::lumen) {
      lumen_index_[c] = static_cast<std::int64_t>(lumen_cells_.size());
      lumen_cells_.push_back(c);
    }
  }

  Fnv1a64 h;
  h.update_value(dims_.nx);
  h.update_value(dims_.ny);
  h.update_value(dims_.nz);
  h.update_range(std::span<const double>(spacing_));
  h.update_range(std::span<const double>(origin_));
  h.update_value(electrode_count_);
  h.update_range(std::span<const Region>(regions_));
  for (const auto& labels : face_labels_) h.update_range(std::span<const std::int16_t>(labels));
  hash_ = h.digest();
}

double VoxelGrid::min_spacing() const noexcept { return std::min({spacing_[0], spacing_[1], spacing_[2]}); }
double VoxelGrid::max_spacing() const noexcept { return std::max({spacing_[0], spacing_[1], spacing_[2]}); }

std::array<int, 3> VoxelGrid::cell_coords(std::size_t cell) const noexcept {
  const auto nx = static_cast<std::size_t>(dims_.nx);
  const auto ny = static_cast<std::size_t>(dims_.ny);
  return {static_cast<int>(cell % nx), static_cast<int>((cell / nx) % ny), static_cast<int>(cell / (nx * ny))};
}

std::array<double, 3> VoxelGrid::cell_center(std::size_t cell) const noexcept {
  const auto ijk = cell_coords(cell);
  return {origin_[0] + (ijk[0] + 0.5) * spacing_[0], origin_[1] + (ijk[1] + 0.5) * spacing_[1],
          origin_[2] + (ijk[2] + 0.5) * spacing_[2]};
}

std::array<int, 3> VoxelGrid::face_extent(int axis) const noexcept {
  std::array<int, 3> ext{dims_.nx, dims_.ny, dims_.nz};
  ext[static_cast<std::size_t>(axis)] += 1;
  return ext;
}

std::size_t VoxelGrid::face_index(int axis, int i, int j, int k) const noexcept {
  const auto ext = face_extent(axis);
  return static_cast<std::size_t>(i) +
         static_cast<std::size_t>(ext[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(ext[1]) * k);
}

double VoxelGrid::face_area(int axis) const noexcept {
  switch (axis) {
    case 0: return spacing_[1] * spacing_[2];
    case 1: return spacing_[0] * spacing_[2];
    default: return spacing_[0] * spacing_[1];
  }
}

bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
  return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ &&
         a.electrode_count_ == b.electrode_count_ && a.regions_ == b.regions_ && a.face_labels_ == b.face_labels_;
}

VoxelGrid build_grid(const SensorGeometry& geometry, GridDims resolution) {
  geometry.validate();
  if (resolution.nx < 8 || resolution.ny < 8 || resolution.nz < 8)
    throw PreconditionError("build_grid: resolution must be at least 8 per axis");

  const double rs = geometry.shield_radius;
  const std::array<double, 3> spacing{2.0 * rs / resolution.nx, 2.0 * rs / resolution.ny,
                                      geometry.domain_height / resolution.nz};
  const std::array<double, 3> origin{-rs, -rs, 0.0};

  const double wall = 0.5 * (geometry.pipe_outer_diameter - geometry.pipe_inner_diameter);
  const double h_plane = std::max(spacing[0], spacing[1]);
  if (wall < 0.5 * h_plane * (1.0 - 1e-9)) {
    std::ostringstream msg;
    msg << "wall unresolved: pipe wall " << wall * 1e3 << " mm is thinner than half a voxel ("
        << 0.5 * h_plane * 1e3 << " mm) at " << resolution.nx << "x" << resolution.ny << "x" << resolution.nz;
    throw WallUnresolvedError(msg.str());
  }

  const int nx = resolution.nx, ny = resolution.ny, nz = resolution.nz;
  const double r_in = 0.5 * geometry.pipe_inner_diameter;
  const double r_out = 0.5 * geometry.pipe_outer_diameter;
  auto cell = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * k);
  };

  // The cross-section is z-invariant: label one slice, then replicate.
  std::vector<Region> slice(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double x = origin[0] + (i + 0.5) * spacing[0];
      const double y = origin[1] + (j + 0.5) * spacing[1];
      const double r = std::hypot(x, y);
      Region reg = Region::exterior;
      if (r < r_in) reg = Region::lumen;
      else if (r < r_out) reg = Region::pipe_wall;
      else if (r >= rs) reg = Region::shield;
      slice[static_cast<std::size_t>(i + nx * j)] = reg;
    }
  }
  // Close staircase gaps so that no lumen voxel touches the exterior through a face.
  std::vector<Region> closed = slice;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const auto s = static_cast<std::size_t>(i + nx * j);
      if (slice[s] != Region::exterior) continue;
      const int di[4] = {-1, 1, 0, 0};
      const int dj[4] = {0, 0, -1, 1};
      for (int n = 0; n < 4; ++n) {
        const int ii = i + di[n], jj = j + dj[n];
        if (ii < 0 || jj < 0 || ii >= nx || jj >= ny) continue;
        if (slice[static_cast<std::size_t>(ii + nx * jj)] == Region::lumen) closed[s] = Region::pipe_wall;
      }
    }
  }

  std::vector<Region> regions(static_cast<std::size_t>(nx) * ny * nz);
  for (int k = 0; k < nz; ++k)
    std::copy(closed.begin(), closed.end(), regions.begin() + static_cast<std::ptrdiff_t>(k) * nx * ny);

  std::array<std::vector<std::int16_t>, 3> labels;
  labels[0].assign(static_cast<std::size_t>(nx + 1) * ny * nz, kNoConductor);
  labels[1].assign(static_cast<std::size_t>(nx) * (ny + 1) * nz, kNoConductor);
  labels[2].assign(static_cast<std::size_t>(nx) * ny * (nz + 1), kNoConductor);

  const double half_cov = 0.5 * geometry.electrode_coverage_angle;
  const double pitch = 360.0 / geometry.electrodes_per_layer;
  auto electrode_at = [&](double x, double y, double z) -> int {
    int layer = -1;
    for (int l = 0; l < geometry.electrode_layers; ++l) {
      const double z0 = geometry.layer_bottom(l);
      if (z >= z0 && z <= z0 + geometry.electrode_axial_length) {
        layer = l;
        break;
      }
    }
    if (layer < 0) return -1;
    const double theta = std::atan2(y, x) * 180.0 / std::numbers::pi;
    for (int e = 0; e < geometry.electrodes_per_layer; ++e) {
      if (angular_distance(theta, geometry.electrode_angle_offset + e * pitch) <= half_cov)
        return layer * geometry.electrodes_per_layer + e;
    }
    return -1;
  };

  auto face_idx = [&](int axis, int i, int j, int k) -> std::size_t {
    std::array<int, 3> ext{nx, ny, nz};
    ext[static_cast<std::size_t>(axis)] += 1;
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(ext[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(ext[1]) * k);
  };

  std::vector<std::size_t> faces_per_electrode(static_cast<std::size_t>(geometry.electrode_count()), 0);
  for (int axis = 0; axis < 3; ++axis) {
    for (int k = 0; k < nz + (axis == 2); ++k) {
      for (int j = 0; j < ny + (axis == 1); ++j) {
        for (int i = 0; i < nx + (axis == 0); ++i) {
          std::array<int, 3> lo{i, j, k};
          lo[static_cast<std::size_t>(axis)] -= 1;
          const std::array<int, 3> hi{i, j, k};
          const bool lo_in = lo[static_cast<std::size_t>(axis)] >= 0;
          const bool hi_in = hi[static_cast<std::size_t>(axis)] < (axis == 0 ? nx : axis == 1 ? ny : nz);
          if (!lo_in || !hi_in) continue;
          const Region a = regions[cell(lo[0], lo[1], lo[2])];
          const Region b = regions[cell(hi[0], hi[1], hi[2])];
          const std::size_t f = face_idx(axis, i, j, k);
          if ((a == Region::shield) != (b == Region::shield)) {
            labels[static_cast<std::size_t>(axis)][f] = kShieldFace;
            continue;
          }
          if (axis == 2) continue;
          const bool wall_ext = (a == Region::pipe_wall && b == Region::exterior) ||
                                (a == Region::exterior && b == Region::pipe_wall);
          if (!wall_ext) continue;
          std::array<double, 3> c{origin[0] + (i + 0.5) * spacing[0], origin[1] + (j + 0.5) * spacing[1],
                                  origin[2] + (k + 0.5) * spacing[2]};
          c[static_cast<std::size_t>(axis)] = origin[static_cast<std::size_t>(axis)] + hi[static_cast<std::size_t>(axis)] * spacing[static_cast<std::size_t>(axis)];
          const int e = electrode_at(c[0], c[1], c[2]);
          if (e >= 0) {
            labels[static_cast<std::size_t>(axis)][f] = static_cast<std::int16_t>(e);
            ++faces_per_electrode[static_cast<std::size_t>(e)];
          }
        }
      }
    }
  }
  for (std::size_t e = 0; e < faces_per_electrode.size(); ++e) {
    if (faces_per_electrode[e] == 0)
      throw PreconditionError("build_grid: electrode " + std::to_string(e) +
                              " covers no voxel face at this resolution");
  }

  return VoxelGrid(resolution, spacing, origin, std::move(regions), std::move(labels), geometry.electrode_count());
}

}  // namespace ectwin
