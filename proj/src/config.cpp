#include "ectwin/config.hpp"

#include <set>

#include "ectwin/error.hpp"

namespace ectwin {

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ValidationError(where(key) + ": wrong type " + j_.at(key).dump());
    }
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    T v{};
    get(key, v);
    out = v;
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), where(key));
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ValidationError(path_ + ": unknown key '" + key + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

InitialFill parse_fill(const std::string& s, const std::string& where) {
  if (s == "liquid") return InitialFill::liquid;
  if (s == "gas") return InitialFill::gas;
  throw ValidationError(where + ": initial_fill must be \"liquid\" or \"gas\"");
}

void read_condition_fields(Section& s, FlowConditions& c) {
  s.get("duration", c.duration);
  s.get("output_interval", c.output_interval);
  s.get("gas_inlet_radius_fraction", c.gas_inlet_radius_fraction);
  s.get("inlet_fluctuation", c.inlet_fluctuation);
}

VelocityRange parse_range(Section& s, const std::string& key, VelocityRange fallback) {
  if (!s.has(key)) return fallback;
  std::array<double, 2> r{};
  s.get(key, r);
  return {r[0], r[1]};
}

}  // namespace

Json to_json(const SensorGeometry& g) {
  return {{"pipe_inner_diameter", g.pipe_inner_diameter},
          {"pipe_outer_diameter", g.pipe_outer_diameter},
          {"electrode_layers", g.electrode_layers},
          {"electrodes_per_layer", g.electrodes_per_layer},
          {"electrode_axial_length", g.electrode_axial_length},
          {"electrode_coverage_angle", g.electrode_coverage_angle},
          {"layer_axial_gap", g.layer_axial_gap},
          {"electrode_angle_offset", g.electrode_angle_offset},
          {"shield_radius", g.shield_radius},
          {"domain_height", g.domain_height},
          {"wall_permittivity", g.wall_permittivity}};
}

Json to_json(const FluidProperties& p) {
  Json j = {{"rho_liquid", p.rho_liquid}, {"rho_gas", p.rho_gas},       {"mu_liquid", p.mu_liquid},
            {"mu_gas", p.mu_gas},         {"eps_liquid", p.eps_liquid}, {"eps_gas", p.eps_gas},
            {"gravity", p.gravity},       {"body_force", p.body_force}};
  j["surface_tension"] = p.surface_tension ? Json(*p.surface_tension) : Json(nullptr);
  return j;
}

Json to_json(const FlowConditions& c) {
  return {{"id", c.id},
          {"inlet_gas_velocity", c.inlet_gas_velocity},
          {"inlet_liquid_velocity", c.inlet_liquid_velocity},
          {"initial_fill", c.initial_fill == InitialFill::liquid ? "liquid" : "gas"},
          {"gas_inlet_radius_fraction", c.gas_inlet_radius_fraction},
          {"duration", c.duration},
          {"output_interval", c.output_interval},
          {"inlet_fluctuation", c.inlet_fluctuation}};
}

Json to_json(const NoiseSpec& n) { return {{"snr_db", n.snr_db}, {"seed", n.seed}}; }

Json to_json(const SimulationSettings& s) {
  Json j = {{"cfl", s.ns.cfl_limit},
            {"pressure_tolerance", s.ns.pressure_tolerance},
            {"viscous_tolerance", s.ns.viscous_tolerance},
            {"divergence_tolerance", s.ns.divergence_tolerance},
            {"levelset_gamma", s.levelset.gamma},
            {"velocity_bounds",
             {{"gas", {s.bounds.gas_min, s.bounds.gas_max}}, {"liquid", {s.bounds.liquid_min, s.bounds.liquid_max}}}}};
  j["levelset_epsilon"] = s.levelset.epsilon ? Json(*s.levelset.epsilon) : Json(nullptr);
  return j;
}

std::vector<FlowConditions> RunConfig::resolved_conditions() const {
  std::vector<FlowConditions> out = conditions;
  if (sampling) {
    const auto sampled = sample_conditions(*sampling, condition_defaults, simulation.bounds);
    out.insert(out.end(), sampled.begin(), sampled.end());
  }
  return out;
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const PreconditionError& e) {
      throw ValidationError(std::string(section) + ": " + e.what());
    }
  };
  wrap("geometry", [&] { geometry.validate(); });
  if (resolution.nx < 8 || resolution.ny < 8 || resolution.nz < 8)
    throw ValidationError("grid.resolution: every axis needs at least 8 voxels");
  wrap("fluid", [&] { fluid.validate(); });
  if (!(excitation_voltage > 0.0)) throw ValidationError("excitation_voltage must be positive");
  if (!(simulation.ns.cfl_limit > 0.0 && simulation.ns.cfl_limit <= 1.0))
    throw ValidationError("flow.cfl must lie in (0, 1]");
  if (!(simulation.levelset.gamma >= 0.0)) throw ValidationError("flow.levelset.gamma must be non-negative");
  if (simulation.levelset.epsilon && !(*simulation.levelset.epsilon > 0.0))
    throw ValidationError("flow.levelset.epsilon must be positive");
  const auto& b = simulation.bounds;
  if (!(b.gas_min <= b.gas_max && b.liquid_min <= b.liquid_max && b.gas_min >= 0.0 && b.liquid_min >= 0.0))
    throw ValidationError("flow.velocity_bounds: ranges must be non-negative and ordered");

  std::set<std::string> ids;
  for (const auto& c : resolved_conditions()) {
    c.validate(simulation.bounds);
    if (!ids.insert(c.id).second) throw ValidationError("flow: duplicate condition id '" + c.id + "'");
  }
  for (const auto& n : noise) n.validate();
  if (reconstruction.method != "lbp" && reconstruction.method != "landweber")
    throw ValidationError("reconstruction.method must be \"lbp\" or \"landweber\"");
  if (reconstruction.landweber_iterations < 1) throw ValidationError("reconstruction.landweber.iterations must be >= 1");
  if (reconstruction.landweber_step && !(*reconstruction.landweber_step > 0.0))
    throw ValidationError("reconstruction.landweber.step must be positive");
  if (!(reconstruction.lbp.regularization >= 0.0))
    throw ValidationError("reconstruction.lbp.regularization must be non-negative");
  if (jobs < 0) throw ValidationError("jobs must be >= 0");
}

RunConfig parse_config(const Json& j) {
  RunConfig cfg;
  Section root(j, "config");

  if (root.has("geometry")) {
    auto s = root.child("geometry");
    auto& g = cfg.geometry;
    s.get("pipe_inner_diameter", g.pipe_inner_diameter);
    s.get("pipe_outer_diameter", g.pipe_outer_diameter);
    s.get("electrode_layers", g.electrode_layers);
    s.get("electrodes_per_layer", g.electrodes_per_layer);
    s.get("electrode_axial_length", g.electrode_axial_length);
    s.get("electrode_coverage_angle", g.electrode_coverage_angle);
    s.get("layer_axial_gap", g.layer_axial_gap);
    s.get("electrode_angle_offset", g.electrode_angle_offset);
    s.get("shield_radius", g.shield_radius);
    s.get("domain_height", g.domain_height);
    s.get("wall_permittivity", g.wall_permittivity);
    s.finish();
  }
  if (root.has("grid")) {
    auto s = root.child("grid");
    if (s.has("resolution")) {
      std::array<int, 3> r{};
      s.get("resolution", r);
      cfg.resolution = {r[0], r[1], r[2]};
    }
    s.finish();
  }
  if (root.has("fluid")) {
    auto s = root.child("fluid");
    auto& f = cfg.fluid;
    s.get("rho_liquid", f.rho_liquid);
    s.get("rho_gas", f.rho_gas);
    s.get("mu_liquid", f.mu_liquid);
    s.get("mu_gas", f.mu_gas);
    s.get("eps_liquid", f.eps_liquid);
    s.get("eps_gas", f.eps_gas);
    s.get("surface_tension", f.surface_tension);
    s.get("gravity", f.gravity);
    s.get("body_force", f.body_force);
    s.finish();
  }
  root.get("excitation_voltage", cfg.excitation_voltage);

  if (root.has("flow")) {
    auto s = root.child("flow");
    s.get("seed", cfg.flow_seed);
    s.get("cfl", cfg.simulation.ns.cfl_limit);
    if (s.has("levelset")) {
      auto ls = s.child("levelset");
      ls.get("gamma", cfg.simulation.levelset.gamma);
      ls.get("epsilon", cfg.simulation.levelset.epsilon);
      ls.finish();
    }
    if (s.has("velocity_bounds")) {
      auto vb = s.child("velocity_bounds");
      const auto gas = parse_range(vb, "gas", {cfg.simulation.bounds.gas_min, cfg.simulation.bounds.gas_max});
      const auto liq = parse_range(vb, "liquid", {cfg.simulation.bounds.liquid_min, cfg.simulation.bounds.liquid_max});
      cfg.simulation.bounds = {gas.min, gas.max, liq.min, liq.max};
      vb.finish();
    }
    if (s.has("defaults")) {
      auto d = s.child("defaults");
      read_condition_fields(d, cfg.condition_defaults);
      d.finish();
    }
    if (s.has("conditions")) {
      const Json& list = s.raw("conditions");
      if (!list.is_array()) throw ValidationError("flow.conditions: expected an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        Section c(list[i], "flow.conditions[" + std::to_string(i) + "]");
        FlowConditions fc = cfg.condition_defaults;
        char id[32];
        std::snprintf(id, sizeof id, "c%03zu", i);
        fc.id = id;
        c.get("id", fc.id);
        c.get("inlet_gas_velocity", fc.inlet_gas_velocity);
        c.get("inlet_liquid_velocity", fc.inlet_liquid_velocity);
        if (c.has("initial_fill")) {
          std::string fill;
          c.get("initial_fill", fill);
          fc.initial_fill = parse_fill(fill, c.where("initial_fill"));
        }
        read_condition_fields(c, fc);
        c.finish();
        cfg.conditions.push_back(std::move(fc));
      }
    }
    if (s.has("sampling")) {
      auto sp = s.child("sampling");
      SamplingSpec spec;
      spec.gas = parse_range(sp, "gas_range", spec.gas);
      spec.liquid = parse_range(sp, "liquid_range", spec.liquid);
      sp.get("count", spec.count);
      sp.get("seed", spec.seed);
      sp.finish();
      cfg.sampling = spec;
    }
    s.finish();
  }

  if (root.has("noise")) {
    const Json& list = root.raw("noise");
    if (!list.is_array()) throw ValidationError("noise: expected an array");
    cfg.noise.clear();
    for (std::size_t i = 0; i < list.size(); ++i) {
      Section n(list[i], "noise[" + std::to_string(i) + "]");
      NoiseSpec spec;
      n.get("snr_db", spec.snr_db);
      n.get("seed", spec.seed);
      n.finish();
      cfg.noise.push_back(spec);
    }
  }

  if (root.has("reconstruction")) {
    auto s = root.child("reconstruction");
    auto& r = cfg.reconstruction;
    s.get("method", r.method);
    if (s.has("lbp")) {
      auto l = s.child("lbp");
      l.get("regularization", r.lbp.regularization);
      l.get("clamp", r.lbp.clamp);
      l.finish();
    }
    if (s.has("landweber")) {
      auto l = s.child("landweber");
      l.get("iterations", r.landweber_iterations);
      l.get("step", r.landweber_step);
      l.get("clamp", r.landweber_clamp);
      l.finish();
    }
    s.finish();
  }
  if (root.has("output")) {
    auto s = root.child("output");
    std::string dir;
    s.get("directory", dir);
    if (!dir.empty()) cfg.output_directory = dir;
    s.finish();
  }
  root.get("jobs", cfg.jobs);
  root.finish();

  try {
    cfg.validate();
  } catch (const PreconditionError& e) {
    throw ValidationError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

}  // namespace ectwin
