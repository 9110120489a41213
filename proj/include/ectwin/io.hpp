#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ectwin/electrostatics.hpp"
#include "ectwin/geometry.hpp"

namespace ectwin {

using Json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kFileFormatVersion = 1;

/// Writes to a sibling temporary file and renames it over `path`, so readers never see
/// a partial file.
void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const fs::path& path, const std::string& text);
std::vector<std::byte> read_file(const fs::path& path);
std::string read_text(const fs::path& path);

/// Little-endian float32 encoding of doubles (values are rounded to nearest).
std::vector<std::byte> encode_f32(std::span<const double> values);
std::vector<std::byte> encode_f64(std::span<const double> values);
std::vector<float> decode_f32(std::span<const std::byte> bytes);
std::vector<double> decode_f64(std::span<const std::byte> bytes);

/// Self-describing binary file: one line of JSON ending in '\n', then the payload.
/// The header always carries "format", "version" and "payload_bytes".
struct Document {
  Json header;
  std::vector<std::byte> payload;
};

std::vector<std::byte> encode_document(Json header, std::span<const std::byte> payload);
/// Throws FormatError when the header is malformed, the payload length disagrees with
/// "payload_bytes", or `expected_format` is given and differs.
Document decode_document(std::span<const std::byte> bytes, const std::string& expected_format = {});
Document read_document(const fs::path& path, const std::string& expected_format = {});

/// `.vol`: float32 values per lumen voxel. `extra` is merged into the header.
void write_volume(const fs::path& path, std::span<const double> values, const Json& extra = Json::object());
struct VolumeFile {
  Json header;
  std::vector<double> values;  ///< widened from float32
};
VolumeFile read_volume(const fs::path& path);

/// `.cap`: float32 frame with pair list and frame kind.
void write_frame(const fs::path& path, const CapacitanceFrame& frame, std::span<const ElectrodePair> pairs,
                 const Json& extra = Json::object());
CapacitanceFrame read_frame(const fs::path& path, Json* header = nullptr);
/// Human-readable frame: pair, value with 17 significant digits.
void write_frame_csv(const fs::path& path, const CapacitanceFrame& frame, std::span<const ElectrodePair> pairs);

/// `.smat`: row-major float32 entries; row sums kept as JSON doubles in the header.
void write_sensitivity(const fs::path& path, const SensitivityMatrix& s);
SensitivityMatrix read_sensitivity(const fs::path& path);

/// Grid export: header (dims, spacing, origin, hash), then uint8 regions followed by
/// uint8 face labels for x, y and z faces (electrode index, 254 shield, 255 none).
void write_grid(const fs::path& path, const VoxelGrid& grid);

}  // namespace ectwin
