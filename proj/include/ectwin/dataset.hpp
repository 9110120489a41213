#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ectwin/electrostatics.hpp"
#include "ectwin/flow.hpp"
#include "ectwin/io.hpp"
#include "ectwin/recon.hpp"

namespace ectwin {

struct NoiseSpec {
  double snr_db = 50.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Stateless 64-bit seed mixing (splitmix64 finalizer); used to derive per-sample
/// streams from one configured seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Zero-mean Gaussian noise with per-frame variance ||s||^2 / (M 10^(snr/10)), so the
/// expected noise power is the signal power reduced by snr_db. Frame must be normalized.
CapacitanceFrame add_noise(const CapacitanceFrame& frame, const NoiseSpec& spec);

struct VelocityRange {
  double min = 0.0;
  double max = 0.0;
};

struct SamplingSpec {
  VelocityRange gas{0.236, 2.362};
  VelocityRange liquid{0.071, 0.708};
  int count = 60;
  std::uint64_t seed = 0;
};

/// Latin-hypercube sampling of the velocity rectangle: stratum midpoints in both axes,
/// the liquid strata paired by a seeded permutation. Fills alternate liquid, gas.
/// Durations and inlet geometry come from `base`. Ids are "s000", "s001", ...
std::vector<FlowConditions> sample_conditions(const SamplingSpec& spec, const FlowConditions& base = {},
                                              const VelocityBounds& bounds = {});

struct DatasetInputs {
  SensorGeometry geometry;
  FluidProperties fluid;
  std::vector<FlowConditions> conditions;
  std::vector<NoiseSpec> noise;
  double excitation_voltage = 1.0;
  std::uint64_t flow_seed = 0;
  SimulationSettings simulation;
};

struct DatasetOptions {
  int jobs = 1;
  /// Keep finished conditions from an interrupted run; a complete dataset is left as is.
  bool resume = false;
  std::function<void(const std::string&)> log;
};

struct SampleRecord {
  std::int64_t sample_id = 0;
  std::string condition_id;
  int frame_index = 0;
  double frame_time = 0.0;
  double snr_db = 0.0;
  std::uint64_t noise_seed = 0;
  std::string cap_file;
  std::string vol_file;
  std::string raw_file;
};

struct DatasetManifest {
  Json document;
  std::size_t lumen_count = 0;
  std::size_t measurement_count = 0;
  std::vector<double> calibration_low;
  std::vector<double> calibration_high;
  std::vector<SampleRecord> samples;

  static DatasetManifest load(const std::filesystem::path& dir);
};

struct DatasetSample {
  SampleRecord record;
  CapacitanceFrame clean;
  CapacitanceFrame noisy;
  CapacitanceFrame raw_clean;
  ReconVolume g_true;
};

/// Runs every condition, measures every snapshot and writes the dataset directory:
/// manifest.json, cap_XXXXXX.f32 (clean then noisy normalized frame), vol_XXXXXX.f32
/// (g = 1 - void fraction, lumen order), raw_XXXXXX.f64 (raw clean frame),
/// sensitivity.smat and lumen_mask.u8. A failing condition is recorded in the manifest
/// and the others continue.
DatasetManifest generate_dataset(const VoxelGrid& grid, const DatasetInputs& inputs,
                                 const std::filesystem::path& out_dir, const DatasetOptions& options = {});

DatasetSample read_sample(const std::filesystem::path& dir, const DatasetManifest& manifest, std::size_t index);

/// Every problem found in a dataset directory (missing, truncated or altered files,
/// inconsistent frames); empty when the dataset is intact.
std::vector<std::string> validate_dataset(const std::filesystem::path& dir);

/// Fingerprint of everything that determines the dataset contents.
std::string dataset_config_hash(const VoxelGrid& grid, const DatasetInputs& inputs);

}  // namespace ectwin
