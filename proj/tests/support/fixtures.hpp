#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "ectwin/geometry.hpp"

namespace ectwin::testing {

// Plain box of lumen cells with no conductors, used by the flow and solver toys.
inline VoxelGrid box_grid(int nx, int ny, int nz, double h, int electrodes = 0) {
  std::vector<Region> regions(static_cast<std::size_t>(nx) * ny * nz, Region::lumen);
  std::array<std::vector<std::int16_t>, 3> faces;
  for (int a = 0; a < 3; ++a) {
    const std::size_t n = static_cast<std::size_t>(nx + (a == 0)) * (ny + (a == 1)) * (nz + (a == 2));
    faces[a].assign(n, kNoConductor);
  }
  return VoxelGrid({nx, ny, nz}, {h, h, h}, {0.0, 0.0, 0.0}, std::move(regions), std::move(faces), electrodes);
}

// Two plates: every bottom z-face is electrode 0, every top z-face electrode 1.
inline VoxelGrid plate_grid(int nx, int ny, int nz, double h) {
  std::vector<Region> regions(static_cast<std::size_t>(nx) * ny * nz, Region::lumen);
  std::array<std::vector<std::int16_t>, 3> faces;
  for (int a = 0; a < 3; ++a) {
    const std::size_t n = static_cast<std::size_t>(nx + (a == 0)) * (ny + (a == 1)) * (nz + (a == 2));
    faces[a].assign(n, kNoConductor);
  }
  const std::size_t layer = static_cast<std::size_t>(nx) * ny;
  for (std::size_t f = 0; f < layer; ++f) {
    faces[2][f] = 0;
    faces[2][layer * nz + f] = 1;
  }
  return VoxelGrid({nx, ny, nz}, {h, h, h}, {0.0, 0.0, 0.0}, std::move(regions), std::move(faces), 2);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  std::filesystem::path root = std::filesystem::temp_directory_path() / "ectwin-tests";
  if (const char* env = std::getenv("ECTWIN_TEST_TMP")) root = env;
  auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ectwin::testing
