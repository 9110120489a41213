#include "ectwin/io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <unistd.h>

#include "ectwin/error.hpp"
#include "ectwin/hash.hpp"

namespace ectwin {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");
static_assert(sizeof(float) == 4 && sizeof(double) == 8);

namespace {

std::atomic<unsigned> g_tmp_counter{0};

[[noreturn]] void io_failure(const std::string& what, const fs::path& path) {
  throw ValidationError(what + ": " + path.string());
}

Json pairs_json(std::span<const ElectrodePair> pairs) {
  Json out = Json::array();
  for (const auto& [a, b] : pairs) out.push_back({a, b});
  return out;
}

std::vector<ElectrodePair> pairs_from_json(const Json& j) {
  std::vector<ElectrodePair> out;
  for (const auto& p : j) out.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  return out;
}

template <typename T>
T header_get(const Json& header, const char* key) {
  try {
    return header.at(key).get<T>();
  } catch (const Json::exception&) {
    throw FormatError(std::string("file header lacks a valid '") + key + "' field");
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(g_tmp_counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_failure("cannot open for writing", tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      io_failure("write failed", tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    io_failure("cannot rename into place", path);
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::vector<std::byte> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_failure("cannot open", path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) io_failure("read failed", path);
  return bytes;
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

std::vector<std::byte> encode_f32(std::span<const double> values) {
  std::vector<std::byte> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto f = static_cast<float>(values[i]);
    std::memcpy(out.data() + 4 * i, &f, 4);
  }
  return out;
}

std::vector<std::byte> encode_f64(std::span<const double> values) {
  std::vector<std::byte> out(values.size() * 8);
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

std::vector<float> decode_f32(std::span<const std::byte> bytes) {
  if (bytes.size() % 4 != 0) throw FormatError("float32 payload length is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<double> decode_f64(std::span<const std::byte> bytes) {
  if (bytes.size() % 8 != 0) throw FormatError("float64 payload length is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<std::byte> encode_document(Json header, std::span<const std::byte> payload) {
  header["version"] = kFileFormatVersion;
  header["payload_bytes"] = payload.size();
  const std::string line = header.dump() + "\n";
  std::vector<std::byte> out(line.size() + payload.size());
  std::memcpy(out.data(), line.data(), line.size());
  if (!payload.empty()) std::memcpy(out.data() + line.size(), payload.data(), payload.size());
  return out;
}

Document decode_document(std::span<const std::byte> bytes, const std::string& expected_format) {
  const auto* begin = reinterpret_cast<const char*>(bytes.data());
  const auto* newline = static_cast<const char*>(std::memchr(begin, '\n', bytes.size()));
  if (newline == nullptr) throw FormatError("missing header line");
  Document doc;
  try {
    doc.header = Json::parse(begin, newline);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!doc.header.is_object()) throw FormatError("header is not a JSON object");
  const auto format = header_get<std::string>(doc.header, "format");
  if (!expected_format.empty() && format != expected_format)
    throw FormatError("expected a '" + expected_format + "' file, found '" + format + "'");
  if (header_get<int>(doc.header, "version") != kFileFormatVersion)
    throw FormatError("unsupported file version " + doc.header.at("version").dump());
  const auto declared = header_get<std::size_t>(doc.header, "payload_bytes");
  const auto offset = static_cast<std::size_t>(newline - begin) + 1;
  const std::size_t actual = bytes.size() - offset;
  if (declared != actual)
    throw FormatError("payload is " + std::to_string(actual) + " bytes, header declares " + std::to_string(declared));
  doc.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return doc;
}

Document read_document(const fs::path& path, const std::string& expected_format) {
  const auto bytes = read_file(path);
  try {
    return decode_document(bytes, expected_format);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_volume(const fs::path& path, std::span<const double> values, const Json& extra) {
  Json header = extra;
  header["format"] = "ectwin-vol";
  header["dtype"] = "float32";
  header["count"] = values.size();
  write_file_atomic(path, encode_document(header, encode_f32(values)));
}

VolumeFile read_volume(const fs::path& path) {
  auto doc = read_document(path, "ectwin-vol");
  const auto count = header_get<std::size_t>(doc.header, "count");
  if (header_get<std::string>(doc.header, "dtype") != "float32") throw FormatError(path.string() + ": dtype must be float32");
  if (doc.payload.size() != count * 4) throw FormatError(path.string() + ": payload does not hold 'count' floats");
  const auto f = decode_f32(doc.payload);
  VolumeFile out{std::move(doc.header), std::vector<double>(f.begin(), f.end())};
  for (double v : out.values)
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite voxel value");
  return out;
}

void write_frame(const fs::path& path, const CapacitanceFrame& frame, std::span<const ElectrodePair> pairs,
                 const Json& extra) {
  if (frame.values.size() != pairs.size()) throw PreconditionError("frame length does not match the pair list");
  Json header = extra;
  header["format"] = "ectwin-cap";
  header["dtype"] = "float32";
  header["kind"] = frame.kind == FrameKind::raw ? "raw" : "normalized";
  header["unit"] = frame.kind == FrameKind::raw ? "F" : "1";
  header["count"] = frame.values.size();
  header["pairs"] = pairs_json(pairs);
  write_file_atomic(path, encode_document(header, encode_f32(frame.values)));
}

CapacitanceFrame read_frame(const fs::path& path, Json* header) {
  auto doc = read_document(path, "ectwin-cap");
  const auto count = header_get<std::size_t>(doc.header, "count");
  if (doc.payload.size() != count * 4) throw FormatError(path.string() + ": payload does not hold 'count' floats");
  const auto kind = header_get<std::string>(doc.header, "kind");
  if (kind != "raw" && kind != "normalized") throw FormatError(path.string() + ": unknown frame kind '" + kind + "'");
  const auto f = decode_f32(doc.payload);
  CapacitanceFrame frame{std::vector<double>(f.begin(), f.end()), kind == "raw" ? FrameKind::raw : FrameKind::normalized};
  if (header) *header = std::move(doc.header);
  return frame;
}

void write_frame_csv(const fs::path& path, const CapacitanceFrame& frame, std::span<const ElectrodePair> pairs) {
  if (frame.values.size() != pairs.size()) throw PreconditionError("frame length does not match the pair list");
  std::ostringstream out;
  out << "pair,i,j," << (frame.kind == FrameKind::raw ? "capacitance_F" : "normalized") << '\n';
  out << std::setprecision(17);
  for (std::size_t m = 0; m < pairs.size(); ++m)
    out << m << ',' << pairs[m].first << ',' << pairs[m].second << ',' << frame.values[m] << '\n';
  write_text_atomic(path, out.str());
}

void write_sensitivity(const fs::path& path, const SensitivityMatrix& s) {
  Json header;
  header["format"] = "ectwin-smat";
  header["dtype"] = "float32";
  header["layout"] = "row-major";
  header["rows"] = s.rows();
  header["cols"] = s.cols();
  header["pairs"] = pairs_json(s.pairs);
  header["grid_hash"] = hex_digest(s.grid_hash);
  header["row_sums"] = s.row_sums;
  const std::span<const double> flat(s.entries.data(), static_cast<std::size_t>(s.entries.size()));
  write_file_atomic(path, encode_document(header, encode_f32(flat)));
}

SensitivityMatrix read_sensitivity(const fs::path& path) {
  auto doc = read_document(path, "ectwin-smat");
  const auto rows = header_get<Eigen::Index>(doc.header, "rows");
  const auto cols = header_get<Eigen::Index>(doc.header, "cols");
  if (header_get<std::string>(doc.header, "layout") != "row-major") throw FormatError(path.string() + ": layout must be row-major");
  if (doc.payload.size() != static_cast<std::size_t>(rows * cols) * 4)
    throw FormatError(path.string() + ": payload does not hold rows x cols floats");
  SensitivityMatrix s;
  const auto f = decode_f32(doc.payload);
  s.entries.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows * cols; ++i) s.entries.data()[i] = f[static_cast<std::size_t>(i)];
  s.row_sums = header_get<std::vector<double>>(doc.header, "row_sums");
  s.pairs = pairs_from_json(doc.header.at("pairs"));
  s.grid_hash = std::stoull(header_get<std::string>(doc.header, "grid_hash"), nullptr, 16);
  if (static_cast<Eigen::Index>(s.pairs.size()) != rows || static_cast<Eigen::Index>(s.row_sums.size()) != rows)
    throw FormatError(path.string() + ": pair list or row sums do not match the row count");
  return s;
}

void write_grid(const fs::path& path, const VoxelGrid& grid) {
  Json header;
  header["format"] = "ectwin-grid";
  header["dims"] = {grid.nx(), grid.ny(), grid.nz()};
  header["spacing"] = grid.spacing();
  header["origin"] = grid.origin();
  header["electrode_count"] = grid.electrode_count();
  header["lumen_count"] = grid.lumen_count();
  header["hash"] = hex_digest(grid.hash());
  header["regions"] = {{"dtype", "uint8"}, {"codes", {{"lumen", 0}, {"pipe_wall", 1}, {"exterior", 2}, {"shield", 3}}}};
  header["face_labels"] = {{"dtype", "uint8"}, {"shield", 254}, {"none", 255}, {"order", {"x", "y", "z"}}};

  std::vector<std::byte> payload;
  payload.reserve(grid.cell_count() * 4);
  for (Region r : grid.regions()) payload.push_back(static_cast<std::byte>(r));
  for (int axis = 0; axis < 3; ++axis) {
    for (std::int16_t label : grid.face_labels(axis)) {
      const auto code = label >= 0 ? label : (label == kShieldFace ? 254 : 255);
      payload.push_back(static_cast<std::byte>(code));
    }
  }
  write_file_atomic(path, encode_document(header, payload));
}

}  // namespace ectwin
