#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace ectwin {

/// Cylindrical multi-layer ECT sensor. Lengths in metres, angles in degrees.
struct SensorGeometry {
  double pipe_inner_diameter = 0.050;
  double pipe_outer_diameter = 0.055;
  int electrode_layers = 3;
  int electrodes_per_layer = 4;
  double electrode_axial_length = 0.015;
  double electrode_coverage_angle = 85.0;
  double layer_axial_gap = 0.010;
  /// Angular position of electrode 0 on every layer.
  double electrode_angle_offset = 0.0;
  /// Grounded outer screen.
  double shield_radius = 0.040;
  double domain_height = 0.085;
  double wall_permittivity = 2.6;

  int electrode_count() const noexcept { return electrode_layers * electrodes_per_layer; }
  int measurement_count() const noexcept {
    const int n = electrode_count();
    return n * (n - 1) / 2;
  }
  double stack_height() const noexcept {
    return electrode_layers * electrode_axial_length + (electrode_layers - 1) * layer_axial_gap;
  }
  /// Axial position of the lower edge of layer `layer`; the stack is centred in the domain.
  double layer_bottom(int layer) const noexcept {
    return 0.5 * (domain_height - stack_height()) + layer * (electrode_axial_length + layer_axial_gap);
  }

  /// Throws PreconditionError on the first violated invariant.
  void validate() const;
};

using ElectrodePair = std::pair<int, int>;

/// All unordered pairs (i, j), i < j, in lexicographic order.
std::vector<ElectrodePair> electrode_pairs(int electrode_count);
std::vector<ElectrodePair> electrode_pairs(const SensorGeometry& geometry);

enum class Region : std::uint8_t { lumen = 0, pipe_wall = 1, exterior = 2, shield = 3 };

/// Face labels. Non-negative values are electrode indices.
inline constexpr std::int16_t kNoConductor = -1;
inline constexpr std::int16_t kShieldFace = -2;

struct GridDims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t cells() const noexcept {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Cartesian voxelization of the sensor.
///
/// Cells are indexed x-fastest: c = i + nx*(j + ny*k). Faces normal to axis d are
/// stored per axis; face `i` along axis 0 separates cells i-1 and i, so there are
/// nx+1 x-faces per row. Shield cells are grounded conductors and carry no unknowns.
/// Lumen voxels are numbered in cell order; that numbering is the column order of the
/// sensitivity matrix and the storage order of every lumen-valued volume.
class VoxelGrid {
 public:
  VoxelGrid(GridDims dims, std::array<double, 3> spacing, std::array<double, 3> origin,
            std::vector<Region> regions, std::array<std::vector<std::int16_t>, 3> face_labels,
            int electrode_count);

  const GridDims& dims() const noexcept { return dims_; }
  int nx() const noexcept { return dims_.nx; }
  int ny() const noexcept { return dims_.ny; }
  int nz() const noexcept { return dims_.nz; }
  const std::array<double, 3>& spacing() const noexcept { return spacing_; }
  const std::array<double, 3>& origin() const noexcept { return origin_; }
  double cell_volume() const noexcept { return spacing_[0] * spacing_[1] * spacing_[2]; }
  double min_spacing() const noexcept;
  double max_spacing() const noexcept;

  std::size_t cell_count() const noexcept { return regions_.size(); }
  std::size_t cell_index(int i, int j, int k) const noexcept {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_.nx) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.ny) * k);
  }
  std::array<int, 3> cell_coords(std::size_t cell) const noexcept;
  std::array<double, 3> cell_center(std::size_t cell) const noexcept;
  Region region(std::size_t cell) const noexcept { return regions_[cell]; }
  std::span<const Region> regions() const noexcept { return regions_; }

  /// Number of faces normal to `axis` in each direction (one more than cells along it).
  std::array<int, 3> face_extent(int axis) const noexcept;
  std::size_t face_index(int axis, int i, int j, int k) const noexcept;
  std::int16_t face_label(int axis, std::size_t face) const noexcept { return face_labels_[axis][face]; }
  std::span<const std::int16_t> face_labels(int axis) const noexcept { return face_labels_[axis]; }
  double face_area(int axis) const noexcept;

  int electrode_count() const noexcept { return electrode_count_; }

  std::size_t lumen_count() const noexcept { return lumen_cells_.size(); }
  std::span<const std::size_t> lumen_cells() const noexcept { return lumen_cells_; }
  /// Lumen ordinal of a cell, or -1 when the cell is not lumen.
  std::int64_t lumen_index(std::size_t cell) const noexcept { return lumen_index_[cell]; }

  /// FNV-1a digest of dimensions, spacing, labels; identifies the grid in file headers.
  std::uint64_t hash() const noexcept { return hash_; }

  friend bool operator==(const VoxelGrid& a, const VoxelGrid& b);

 private:
  GridDims dims_;
  std::array<double, 3> spacing_;
  std::array<double, 3> origin_;
  std::vector<Region> regions_;
  std::array<std::vector<std::int16_t>, 3> face_labels_;
  int electrode_count_;
  std::vector<std::size_t> lumen_cells_;
  std::vector<std::int64_t> lumen_index_;
  std::uint64_t hash_ = 0;
};

/// Staircase voxelization of the sensor. The x/y extent spans the shield diameter and the
/// z extent the domain height. Throws WallUnresolvedError when the pipe wall is thinner
/// than half an in-plane voxel, PreconditionError for resolution below 8 or an electrode
/// that receives no faces.
VoxelGrid build_grid(const SensorGeometry& geometry, GridDims resolution);

}  // namespace ectwin
