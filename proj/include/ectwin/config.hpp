#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ectwin/dataset.hpp"
#include "ectwin/flow.hpp"
#include "ectwin/geometry.hpp"
#include "ectwin/io.hpp"
#include "ectwin/recon.hpp"

namespace ectwin {

struct ReconSettings {
  std::string method = "lbp";  ///< "lbp" or "landweber"
  LbpSettings lbp;
  int landweber_iterations = 200;
  std::optional<double> landweber_step;
  bool landweber_clamp = true;
};

/// Everything a command needs, read from one JSON file. Unknown keys are rejected.
struct RunConfig {
  SensorGeometry geometry;
  GridDims resolution{32, 32, 64};
  FluidProperties fluid;
  double excitation_voltage = 1.0;

  /// Values used by sampled conditions and by explicit conditions that omit them.
  FlowConditions condition_defaults;
  std::vector<FlowConditions> conditions;
  std::optional<SamplingSpec> sampling;
  std::uint64_t flow_seed = 0;
  SimulationSettings simulation;

  std::vector<NoiseSpec> noise{{40.0, 1}, {50.0, 2}, {60.0, 3}};
  ReconSettings reconstruction;
  std::filesystem::path output_directory = "ectwin_out";
  int jobs = 0;

  /// Explicit conditions followed by the sampled ones.
  std::vector<FlowConditions> resolved_conditions() const;
  /// Throws ValidationError naming the first offending field.
  void validate() const;
};

RunConfig parse_config(const Json& j);
RunConfig load_config(const std::filesystem::path& path);

Json to_json(const SensorGeometry& g);
Json to_json(const FluidProperties& p);
Json to_json(const FlowConditions& c);
Json to_json(const NoiseSpec& n);
Json to_json(const SimulationSettings& s);

}  // namespace ectwin
