#include "ectwin/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>

#include "ectwin/config.hpp"
#include "ectwin/error.hpp"
#include "ectwin/hash.hpp"
#include "ectwin/parallel.hpp"

namespace ectwin {

namespace {

constexpr int kDatasetFormatVersion = 1;
constexpr const char* kManifestName = "manifest.json";
constexpr const char* kSensitivityName = "sensitivity.smat";
constexpr const char* kMaskName = "lumen_mask.u8";

std::string numbered(const char* prefix, std::int64_t id, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06lld.%s", prefix, static_cast<long long>(id), ext);
  return buf;
}

Json file_record(const std::string& name, std::span<const std::byte> bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return {{"name", name}, {"bytes", bytes.size()}, {"fnv1a64", hex_digest(h.digest())}};
}

Json write_recorded(const fs::path& dir, const std::string& name, std::span<const std::byte> bytes) {
  write_file_atomic(dir / name, bytes);
  return file_record(name, bytes);
}

// Problem description when the file does not match its record, empty otherwise.
std::string check_file(const fs::path& dir, const Json& record) {
  const auto name = record.at("name").get<std::string>();
  const fs::path path = dir / name;
  if (!fs::exists(path)) return name + ": missing";
  const auto bytes = read_file(path);
  if (bytes.size() != record.at("bytes").get<std::size_t>())
    return name + ": " + std::to_string(bytes.size()) + " bytes, manifest records " +
           std::to_string(record.at("bytes").get<std::size_t>());
  Fnv1a64 h;
  h.update(bytes);
  if (hex_digest(h.digest()) != record.at("fnv1a64").get<std::string>()) return name + ": content hash mismatch";
  return {};
}

std::string error_category(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  return "error";
}

struct ConditionResult {
  Json condition;
  Json samples = Json::array();
};

}  // namespace

void NoiseSpec::validate() const {
  if (!(snr_db > 0.0)) throw ValidationError("noise: snr_db must be positive");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

CapacitanceFrame add_noise(const CapacitanceFrame& frame, const NoiseSpec& spec) {
  spec.validate();
  if (frame.kind != FrameKind::normalized) throw PreconditionError("add_noise: frame must be normalized");
  if (frame.values.empty()) throw PreconditionError("add_noise: empty frame");
  double power = 0.0;
  for (double v : frame.values) power += v * v;
  const double sigma =
      std::sqrt(power / (static_cast<double>(frame.values.size()) * std::pow(10.0, spec.snr_db / 10.0)));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  CapacitanceFrame out = frame;
  for (double& v : out.values) v += sigma * normal(rng);
  return out;
}

std::vector<FlowConditions> sample_conditions(const SamplingSpec& spec, const FlowConditions& base,
                                              const VelocityBounds& bounds) {
  auto check = [](const VelocityRange& r, double lo, double hi, const char* name) {
    if (!(r.min <= r.max)) throw ValidationError(std::string("sampling: inverted ") + name + " velocity range");
    if (r.min < lo || r.max > hi)
      throw ValidationError(std::string("sampling: ") + name + " velocity range outside the admissible bounds");
  };
  check(spec.gas, bounds.gas_min, bounds.gas_max, "gas");
  check(spec.liquid, bounds.liquid_min, bounds.liquid_max, "liquid");
  if (spec.count < 1) throw ValidationError("sampling: count must be at least 1");

  const auto n = static_cast<std::size_t>(spec.count);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  // Fisher-Yates with raw engine output keeps the permutation identical across
  // standard libraries (std::shuffle is not specified bit-for-bit).
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);

  std::vector<FlowConditions> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    FlowConditions c = base;
    char id[32];
    std::snprintf(id, sizeof id, "s%03zu", i);
    c.id = id;
    const double ug = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double ul = (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(n);
    c.inlet_gas_velocity = spec.gas.min + ug * (spec.gas.max - spec.gas.min);
    c.inlet_liquid_velocity = spec.liquid.min + ul * (spec.liquid.max - spec.liquid.min);
    c.initial_fill = i % 2 == 0 ? InitialFill::liquid : InitialFill::gas;
    c.validate(bounds);
    out.push_back(std::move(c));
  }
  return out;
}

std::string dataset_config_hash(const VoxelGrid& grid, const DatasetInputs& inputs) {
  Json j;
  j["grid_hash"] = hex_digest(grid.hash());
  j["geometry"] = to_json(inputs.geometry);
  j["fluid"] = to_json(inputs.fluid);
  j["conditions"] = Json::array();
  for (const auto& c : inputs.conditions) j["conditions"].push_back(to_json(c));
  j["noise"] = Json::array();
  for (const auto& n : inputs.noise) j["noise"].push_back(to_json(n));
  j["excitation_voltage"] = inputs.excitation_voltage;
  j["flow_seed"] = inputs.flow_seed;
  j["simulation"] = to_json(inputs.simulation);
  const std::string text = j.dump();
  Fnv1a64 h;
  h.update(std::as_bytes(std::span<const char>(text.data(), text.size())));
  return hex_digest(h.digest());
}

DatasetManifest generate_dataset(const VoxelGrid& grid, const DatasetInputs& inputs, const fs::path& out_dir,
                                 const DatasetOptions& options) {
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  inputs.fluid.validate();
  if (inputs.conditions.empty()) throw ValidationError("dataset: no flow conditions");
  if (inputs.noise.empty()) throw ValidationError("dataset: no noise levels");
  for (const auto& c : inputs.conditions) c.validate(inputs.simulation.bounds);
  for (const auto& n : inputs.noise) n.validate();
  if (!(inputs.excitation_voltage > 0.0)) throw ValidationError("dataset: excitation voltage must be positive");

  const std::string config_hash = dataset_config_hash(grid, inputs);
  if (options.resume && fs::exists(out_dir / kManifestName)) {
    const Json existing = Json::parse(read_text(out_dir / kManifestName));
    if (existing.value("config_hash", std::string{}) != config_hash)
      throw ValidationError("dataset: existing manifest in " + out_dir.string() + " was built from a different configuration");
    if (validate_dataset(out_dir).empty()) {
      log("dataset already complete");
      return DatasetManifest::load(out_dir);
    }
  }
  fs::create_directories(out_dir);
  const fs::path parts_dir = out_dir / "parts";
  fs::create_directories(parts_dir);

  const double v = inputs.excitation_voltage;
  const int jobs = resolve_jobs(options.jobs);
  log("calibrating and computing the sensitivity matrix");
  const auto cal = calibration_frames(grid, inputs.fluid.eps_gas, inputs.fluid.eps_liquid,
                                      inputs.geometry.wall_permittivity, v, jobs);
  const auto sens = compute_sensitivity(
      grid, uniform_permittivity(grid, inputs.fluid.eps_gas, inputs.geometry.wall_permittivity), v, jobs);

  Json shared;
  {
    const auto smat_bytes = [&] {
      write_sensitivity(out_dir / kSensitivityName, sens);
      return read_file(out_dir / kSensitivityName);
    }();
    shared["sensitivity"] = file_record(kSensitivityName, smat_bytes);
    std::vector<std::byte> mask(grid.cell_count(), std::byte{0});
    for (std::size_t c : grid.lumen_cells()) mask[c] = std::byte{1};
    shared["lumen_mask"] = write_recorded(out_dir, kMaskName, mask);
  }

  const std::size_t per_condition_frames = [&] {
    std::size_t m = 0;
    for (const auto& c : inputs.conditions)
      m = std::max<std::size_t>(m, static_cast<std::size_t>(std::llround(c.duration / c.output_interval)));
    return m;
  }();
  const std::size_t per_condition = per_condition_frames * inputs.noise.size();
  const std::size_t count = inputs.conditions.size();
  const int inner_jobs = count < static_cast<std::size_t>(jobs) ? std::max(1, jobs / static_cast<int>(count)) : 1;
  const auto pairs = electrode_pairs(grid.electrode_count());

  std::vector<ConditionResult> results(count);
  std::mutex log_mutex;
  parallel_for(count, jobs, [&](std::size_t ci) {
    const FlowConditions& cond = inputs.conditions[ci];
    const fs::path part = parts_dir / (cond.id + ".json");
    Json cj = to_json(cond);

    if (options.resume && fs::exists(part)) {
      const Json saved = Json::parse(read_text(part));
      bool intact = saved.at("condition").at("status") == "ok";
      for (const auto& s : saved.at("samples"))
        for (const char* key : {"cap", "vol", "raw"})
          intact = intact && check_file(out_dir, s.at("files").at(key)).empty();
      if (intact) {
        results[ci] = {saved.at("condition"), saved.at("samples")};
        std::scoped_lock lock(log_mutex);
        log("condition " + cond.id + ": kept from previous run");
        return;
      }
    }

    std::vector<std::string> written;
    Json samples = Json::array();
    try {
      SimulationSettings sim = inputs.simulation;
      sim.on_snapshot = nullptr;
      const auto snapshots = simulate_flow(grid, inputs.fluid, cond, inputs.flow_seed, sim);
      for (std::size_t s = 0; s < snapshots.size(); ++s) {
        const auto perm = phase_to_permittivity(snapshots[s].phase, grid, inputs.fluid, inputs.geometry.wall_permittivity);
        const auto raw = measure_frame(grid, perm, v, inner_jobs);
        const auto clean = normalize_frame(raw, cal.low, cal.high);
        std::vector<double> g(snapshots[s].phase.values.size());
        for (std::size_t q = 0; q < g.size(); ++q) g[q] = 1.0 - snapshots[s].phase.values[q];

        for (std::size_t n = 0; n < inputs.noise.size(); ++n) {
          const auto id = static_cast<std::int64_t>(ci * per_condition + s * inputs.noise.size() + n);
          const std::uint64_t seed = mix_seed(inputs.noise[n].seed, static_cast<std::uint64_t>(id));
          const auto noisy = add_noise(clean, {inputs.noise[n].snr_db, seed});
          std::vector<double> both(clean.values);
          both.insert(both.end(), noisy.values.begin(), noisy.values.end());

          Json rec;
          rec["sample_id"] = id;
          rec["condition_id"] = cond.id;
          rec["frame_index"] = s;
          rec["frame_time"] = snapshots[s].time;
          rec["snr_db"] = inputs.noise[n].snr_db;
          rec["noise_seed"] = seed;
          const auto cap = numbered("cap", id, "f32"), vol = numbered("vol", id, "f32"), rawf = numbered("raw", id, "f64");
          written.insert(written.end(), {cap, vol, rawf});
          rec["files"]["cap"] = write_recorded(out_dir, cap, encode_f32(both));
          rec["files"]["vol"] = write_recorded(out_dir, vol, encode_f32(g));
          rec["files"]["raw"] = write_recorded(out_dir, rawf, encode_f64(raw.values));
          samples.push_back(std::move(rec));
        }
      }
      cj["status"] = "ok";
      cj["frames"] = snapshots.size();
    } catch (const Error& e) {
      std::error_code ec;
      for (const auto& name : written) fs::remove(out_dir / name, ec);
      samples = Json::array();
      cj["status"] = "failed";
      cj["error"] = {{"category", error_category(e)}, {"message", e.what()}};
    }
    cj["sample_count"] = samples.size();
    write_text_atomic(part, Json{{"condition", cj}, {"samples", samples}}.dump());
    results[ci] = {cj, samples};
    std::scoped_lock lock(log_mutex);
    log("condition " + cond.id + ": " + cj["status"].get<std::string>() + ", " + std::to_string(samples.size()) +
        " samples");
  });

  Json manifest;
  manifest["format"] = "ectwin-dataset";
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["config_hash"] = config_hash;
  manifest["grid"] = {{"dims", {grid.nx(), grid.ny(), grid.nz()}},
                      {"spacing", grid.spacing()},
                      {"origin", grid.origin()},
                      {"lumen_count", grid.lumen_count()},
                      {"hash", hex_digest(grid.hash())}};
  manifest["geometry"] = to_json(inputs.geometry);
  manifest["fluid"] = to_json(inputs.fluid);
  manifest["simulation"] = to_json(inputs.simulation);
  manifest["flow_seed"] = inputs.flow_seed;
  manifest["excitation_voltage"] = v;
  manifest["convention"] = "g = 1 - gas void fraction (liquid 1, gas 0)";
  manifest["pairs"] = Json::array();
  for (const auto& [a, b] : pairs) manifest["pairs"].push_back({a, b});
  manifest["measurement_count"] = pairs.size();
  manifest["calibration"] = {{"low", cal.low.values}, {"high", cal.high.values}};
  manifest["noise"] = Json::array();
  for (const auto& n : inputs.noise) manifest["noise"].push_back(to_json(n));
  manifest["files"] = shared;
  manifest["conditions"] = Json::array();
  manifest["samples"] = Json::array();
  for (auto& r : results) {
    manifest["conditions"].push_back(r.condition);
    for (auto& s : r.samples) manifest["samples"].push_back(std::move(s));
  }
  write_text_atomic(out_dir / kManifestName, manifest.dump(1));
  std::error_code ec;
  fs::remove_all(parts_dir, ec);
  return DatasetManifest::load(out_dir);
}

DatasetManifest DatasetManifest::load(const fs::path& dir) {
  DatasetManifest m;
  try {
    m.document = Json::parse(read_text(dir / kManifestName));
    const auto& d = m.document;
    if (d.at("format").get<std::string>() != "ectwin-dataset") throw FormatError("not a dataset manifest");
    if (d.at("format_version").get<int>() != kDatasetFormatVersion)
      throw FormatError("unsupported dataset format_version " + d.at("format_version").dump());
    m.lumen_count = d.at("grid").at("lumen_count").get<std::size_t>();
    m.measurement_count = d.at("measurement_count").get<std::size_t>();
    m.calibration_low = d.at("calibration").at("low").get<std::vector<double>>();
    m.calibration_high = d.at("calibration").at("high").get<std::vector<double>>();
    for (const auto& s : d.at("samples")) {
      SampleRecord r;
      r.sample_id = s.at("sample_id").get<std::int64_t>();
      r.condition_id = s.at("condition_id").get<std::string>();
      r.frame_index = s.at("frame_index").get<int>();
      r.frame_time = s.at("frame_time").get<double>();
      r.snr_db = s.at("snr_db").get<double>();
      r.noise_seed = s.at("noise_seed").get<std::uint64_t>();
      r.cap_file = s.at("files").at("cap").at("name").get<std::string>();
      r.vol_file = s.at("files").at("vol").at("name").get<std::string>();
      r.raw_file = s.at("files").at("raw").at("name").get<std::string>();
      m.samples.push_back(std::move(r));
    }
  } catch (const Json::exception& e) {
    throw FormatError((dir / kManifestName).string() + ": " + e.what());
  }
  return m;
}

DatasetSample read_sample(const fs::path& dir, const DatasetManifest& manifest, std::size_t index) {
  if (index >= manifest.samples.size()) throw PreconditionError("read_sample: index out of range");
  DatasetSample s;
  s.record = manifest.samples[index];
  const std::size_t m = manifest.measurement_count;
  const auto cap = decode_f32(read_file(dir / s.record.cap_file));
  if (cap.size() != 2 * m) throw FormatError(s.record.cap_file + ": expected " + std::to_string(2 * m) + " floats");
  s.clean = {std::vector<double>(cap.begin(), cap.begin() + static_cast<std::ptrdiff_t>(m)), FrameKind::normalized};
  s.noisy = {std::vector<double>(cap.begin() + static_cast<std::ptrdiff_t>(m), cap.end()), FrameKind::normalized};
  s.raw_clean = {decode_f64(read_file(dir / s.record.raw_file)), FrameKind::raw};
  if (s.raw_clean.values.size() != m) throw FormatError(s.record.raw_file + ": wrong length");
  const auto g = decode_f32(read_file(dir / s.record.vol_file));
  if (g.size() != manifest.lumen_count) throw FormatError(s.record.vol_file + ": wrong voxel count");
  s.g_true.values.assign(g.begin(), g.end());
  return s;
}

std::vector<std::string> validate_dataset(const fs::path& dir) {
  std::vector<std::string> problems;
  DatasetManifest manifest;
  try {
    manifest = DatasetManifest::load(dir);
  } catch (const Error& e) {
    return {e.what()};
  }
  const auto& doc = manifest.document;
  const std::size_t m = manifest.measurement_count;
  const std::size_t n = manifest.lumen_count;
  if (manifest.calibration_low.size() != m || manifest.calibration_high.size() != m)
    problems.push_back("manifest: calibration frames do not have measurement_count entries");

  try {
    for (const char* key : {"sensitivity", "lumen_mask"}) {
      const auto p = check_file(dir, doc.at("files").at(key));
      if (!p.empty()) problems.push_back(p);
    }
    if (problems.empty()) {
      const auto s = read_sensitivity(dir / kSensitivityName);
      if (static_cast<std::size_t>(s.rows()) != m || static_cast<std::size_t>(s.cols()) != n)
        problems.push_back(std::string(kSensitivityName) + ": shape does not match the manifest");
      const auto mask = read_file(dir / kMaskName);
      const auto ones = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::byte{1}));
      if (ones != n) problems.push_back(std::string(kMaskName) + ": lumen count does not match the manifest");
    }
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }

  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& files = doc.at("samples").at(i).at("files");
    bool intact = true;
    for (const char* key : {"cap", "vol", "raw"}) {
      const auto p = check_file(dir, files.at(key));
      if (!p.empty()) {
        problems.push_back(p);
        intact = false;
      }
    }
    if (!intact) continue;
    try {
      const auto s = read_sample(dir, manifest, i);
      for (double g : s.g_true.values)
        if (!(g >= 0.0 && g <= 1.0)) {
          problems.push_back(s.record.vol_file + ": g outside [0, 1]");
          break;
        }
      // The stored clean frame must be the float32 rounding of the raw frame renormalized.
      for (std::size_t k = 0; k < m; ++k) {
        const double renorm = (s.raw_clean.values[k] - manifest.calibration_low[k]) /
                              (manifest.calibration_high[k] - manifest.calibration_low[k]);
        if (static_cast<float>(renorm) != static_cast<float>(s.clean.values[k])) {
          problems.push_back(s.record.cap_file + ": clean frame is inconsistent with the raw frame at measurement " +
                             std::to_string(k));
          break;
        }
      }
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  return problems;
}

}  // namespace ectwin
