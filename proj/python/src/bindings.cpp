#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ectwin/commands.hpp"
#include "ectwin/config.hpp"
#include "ectwin/dataset.hpp"
#include "ectwin/error.hpp"
#include "ectwin/flow.hpp"
#include "ectwin/io.hpp"
#include "ectwin/recon.hpp"

namespace py = pybind11;
using namespace ectwin;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  const auto buf = a.request();
  const auto* p = static_cast<const double*>(buf.ptr);
  return {p, p + buf.size};
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

CapacitanceFrame frame(const Array& a, FrameKind kind) { return {to_vector(a), kind}; }

PermittivityVolume permittivity(const VoxelGrid& grid, const Array& a) {
  auto v = to_vector(a);
  if (v.size() != grid.cell_count())
    throw PreconditionError("permittivity array must have one value per grid cell (" +
                            std::to_string(grid.cell_count()) + ")");
  return {std::move(v)};
}

py::dict report_dict(const QualityReport& r) {
  py::dict d;
  d["ssim"] = r.ssim;
  d["rmse"] = r.rmse;
  d["psnr"] = r.psnr;
  d["lvc"] = r.lvc;
  return d;
}

py::object json_to_py(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_ectwin, m) {
  m.doc() = "ectwin core bindings";

  auto base = py::register_exception<Error>(m, "Error");
  auto pre = py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  (void)pre;

  py::class_<SensorGeometry>(m, "SensorGeometry")
      .def(py::init<>())
      .def_readwrite("pipe_inner_diameter", &SensorGeometry::pipe_inner_diameter)
      .def_readwrite("pipe_outer_diameter", &SensorGeometry::pipe_outer_diameter)
      .def_readwrite("electrode_layers", &SensorGeometry::electrode_layers)
      .def_readwrite("electrodes_per_layer", &SensorGeometry::electrodes_per_layer)
      .def_readwrite("electrode_axial_length", &SensorGeometry::electrode_axial_length)
      .def_readwrite("electrode_coverage_angle", &SensorGeometry::electrode_coverage_angle)
      .def_readwrite("layer_axial_gap", &SensorGeometry::layer_axial_gap)
      .def_readwrite("electrode_angle_offset", &SensorGeometry::electrode_angle_offset)
      .def_readwrite("shield_radius", &SensorGeometry::shield_radius)
      .def_readwrite("domain_height", &SensorGeometry::domain_height)
      .def_readwrite("wall_permittivity", &SensorGeometry::wall_permittivity)
      .def_property_readonly("electrode_count", &SensorGeometry::electrode_count)
      .def_property_readonly("measurement_count", &SensorGeometry::measurement_count)
      .def("validate", &SensorGeometry::validate);

  py::class_<VoxelGrid>(m, "VoxelGrid")
      .def_property_readonly("dims", [](const VoxelGrid& g) { return std::array<int, 3>{g.nx(), g.ny(), g.nz()}; })
      .def_property_readonly("spacing", &VoxelGrid::spacing)
      .def_property_readonly("origin", &VoxelGrid::origin)
      .def_property_readonly("cell_count", &VoxelGrid::cell_count)
      .def_property_readonly("lumen_count", &VoxelGrid::lumen_count)
      .def_property_readonly("electrode_count", &VoxelGrid::electrode_count)
      .def_property_readonly("hash", &VoxelGrid::hash)
      .def_property_readonly("regions",
                             [](const VoxelGrid& g) {
                               py::array_t<std::uint8_t> out(static_cast<py::ssize_t>(g.cell_count()));
                               auto* p = out.mutable_data();
                               for (std::size_t c = 0; c < g.cell_count(); ++c) p[c] = static_cast<std::uint8_t>(g.region(c));
                               return out;
                             })
      .def_property_readonly("lumen_cells", [](const VoxelGrid& g) {
        auto cells = g.lumen_cells();
        return std::vector<std::size_t>(cells.begin(), cells.end());
      });

  m.def("build_grid",
        [](const SensorGeometry& geo, std::array<int, 3> res) { return build_grid(geo, {res[0], res[1], res[2]}); },
        py::arg("geometry"), py::arg("resolution"));
  m.def("electrode_pairs", py::overload_cast<int>(&electrode_pairs), py::arg("electrode_count"));

  py::class_<FluidProperties>(m, "FluidProperties")
      .def(py::init<>())
      .def_readwrite("rho_liquid", &FluidProperties::rho_liquid)
      .def_readwrite("rho_gas", &FluidProperties::rho_gas)
      .def_readwrite("mu_liquid", &FluidProperties::mu_liquid)
      .def_readwrite("mu_gas", &FluidProperties::mu_gas)
      .def_readwrite("eps_liquid", &FluidProperties::eps_liquid)
      .def_readwrite("eps_gas", &FluidProperties::eps_gas)
      .def_readwrite("surface_tension", &FluidProperties::surface_tension)
      .def_readwrite("gravity", &FluidProperties::gravity)
      .def_readwrite("body_force", &FluidProperties::body_force);

  m.def("mixture_properties",
        [](double phi, const FluidProperties& p) {
          const auto r = mixture_properties(phi, p);
          return py::make_tuple(r.density, r.viscosity, r.permittivity);
        },
        py::arg("void_fraction"), py::arg("props") = FluidProperties{});

  m.def("uniform_permittivity",
        [](const VoxelGrid& g, double lumen, double wall, double exterior) {
          return to_array(uniform_permittivity(g, lumen, wall, exterior).values);
        },
        py::arg("grid"), py::arg("lumen"), py::arg("wall") = 2.6, py::arg("exterior") = 1.0);

  m.def("phase_to_permittivity",
        [](const VoxelGrid& g, const Array& phase, const FluidProperties& p, double wall) {
          return to_array(phase_to_permittivity(PhaseVolume{to_vector(phase)}, g, p, wall).values);
        },
        py::arg("grid"), py::arg("phase"), py::arg("props") = FluidProperties{}, py::arg("wall_eps") = 2.6);

  m.def("measure_frame",
        [](const VoxelGrid& g, const Array& perm, double v, int jobs) {
          const auto eps = permittivity(g, perm);
          CapacitanceFrame f;
          {
            py::gil_scoped_release release;
            f = measure_frame(g, eps, v, jobs);
          }
          return to_array(f.values);
        },
        py::arg("grid"), py::arg("permittivity"), py::arg("v_exc") = 1.0, py::arg("jobs") = 1);

  m.def("calibration_frames",
        [](const VoxelGrid& g, double low, double high, double wall, double v, int jobs) {
          const auto c = calibration_frames(g, low, high, wall, v, jobs);
          return py::make_tuple(to_array(c.low.values), to_array(c.high.values));
        },
        py::arg("grid"), py::arg("eps_low") = 1.0, py::arg("eps_high") = 2.18, py::arg("eps_wall") = 2.6,
        py::arg("v_exc") = 1.0, py::arg("jobs") = 1);

  m.def("normalize_frame",
        [](const Array& raw, const Array& low, const Array& high) {
          return to_array(
              normalize_frame(frame(raw, FrameKind::raw), frame(low, FrameKind::raw), frame(high, FrameKind::raw)).values);
        },
        py::arg("raw"), py::arg("low"), py::arg("high"));

  py::class_<SensitivityMatrix>(m, "SensitivityMatrix")
      .def_property_readonly("entries",
                             [](const SensitivityMatrix& s) {
                               py::array_t<double> out({s.rows(), s.cols()});
                               std::copy(s.entries.data(), s.entries.data() + s.entries.size(), out.mutable_data());
                               return out;
                             })
      .def_readonly("row_sums", &SensitivityMatrix::row_sums)
      .def_readonly("pairs", &SensitivityMatrix::pairs)
      .def_readonly("grid_hash", &SensitivityMatrix::grid_hash)
      .def_property_readonly("shape", [](const SensitivityMatrix& s) { return py::make_tuple(s.rows(), s.cols()); });

  m.def("compute_sensitivity",
        [](const VoxelGrid& g, std::optional<Array> background, double v, int jobs) {
          const auto bg = background ? permittivity(g, *background) : uniform_permittivity(g, 1.0, 2.6);
          py::gil_scoped_release release;
          return compute_sensitivity(g, bg, v, jobs);
        },
        py::arg("grid"), py::arg("background") = py::none(), py::arg("v_exc") = 1.0, py::arg("jobs") = 1);
  m.def("read_sensitivity", [](const fs::path& p) { return read_sensitivity(p); }, py::arg("path"));

  m.def("lbp_raw", [](const SensitivityMatrix& s, const Array& c) {
    return to_array(lbp_raw(s, frame(c, FrameKind::normalized)).values);
  });
  m.def("lbp",
        [](const SensitivityMatrix& s, const Array& c, double regularization, bool clamp) {
          return to_array(lbp(s, frame(c, FrameKind::normalized), {regularization, clamp}).values);
        },
        py::arg("s"), py::arg("c"), py::arg("regularization") = 1e-2, py::arg("clamp") = true);
  m.def("landweber",
        [](const SensitivityMatrix& s, const Array& c, int iterations, std::optional<double> step, bool clamp,
           std::optional<Array> initial) {
          LandweberSettings set;
          set.iterations = iterations;
          set.step = step;
          set.clamp = clamp;
          if (initial) set.initial = ReconVolume{to_vector(*initial)};
          return to_array(landweber(s, frame(c, FrameKind::normalized), set).values);
        },
        py::arg("s"), py::arg("c"), py::arg("iterations") = 200, py::arg("step") = py::none(),
        py::arg("clamp") = true, py::arg("initial") = py::none());

  m.def("metrics",
        [](const Array& truth, const Array& est) {
          return report_dict(metrics(ReconVolume{to_vector(truth)}, ReconVolume{to_vector(est)}));
        },
        py::arg("truth"), py::arg("estimate"));
  m.def("lvc_series", [](const std::vector<Array>& frames) {
    std::vector<ReconVolume> v;
    for (const auto& f : frames) v.push_back({to_vector(f)});
    return lvc_series(v);
  });

  m.def("add_noise",
        [](const Array& c, double snr_db, std::uint64_t seed) {
          return to_array(add_noise(frame(c, FrameKind::normalized), {snr_db, seed}).values);
        },
        py::arg("frame"), py::arg("snr_db"), py::arg("seed"));

  py::class_<FlowConditions>(m, "FlowConditions")
      .def(py::init<>())
      .def_readwrite("id", &FlowConditions::id)
      .def_readwrite("inlet_gas_velocity", &FlowConditions::inlet_gas_velocity)
      .def_readwrite("inlet_liquid_velocity", &FlowConditions::inlet_liquid_velocity)
      .def_property(
          "initial_fill",
          [](const FlowConditions& c) { return c.initial_fill == InitialFill::liquid ? "liquid" : "gas"; },
          [](FlowConditions& c, const std::string& s) {
            if (s != "liquid" && s != "gas") throw PreconditionError("initial_fill must be 'liquid' or 'gas'");
            c.initial_fill = s == "liquid" ? InitialFill::liquid : InitialFill::gas;
          })
      .def_readwrite("gas_inlet_radius_fraction", &FlowConditions::gas_inlet_radius_fraction)
      .def_readwrite("duration", &FlowConditions::duration)
      .def_readwrite("output_interval", &FlowConditions::output_interval)
      .def_readwrite("inlet_fluctuation", &FlowConditions::inlet_fluctuation)
      .def("__repr__", [](const FlowConditions& c) { return "FlowConditions(" + to_json(c).dump() + ")"; });

  m.def("sample_conditions",
        [](std::array<double, 2> gas, std::array<double, 2> liquid, int count, std::uint64_t seed) {
          return sample_conditions({{gas[0], gas[1]}, {liquid[0], liquid[1]}, count, seed});
        },
        py::arg("gas_range") = std::array<double, 2>{0.236, 2.362},
        py::arg("liquid_range") = std::array<double, 2>{0.071, 0.708}, py::arg("count") = 60, py::arg("seed") = 0);

  m.def("simulate_flow",
        [](const VoxelGrid& g, const FluidProperties& p, const FlowConditions& c, std::uint64_t seed) {
          std::vector<PhaseSnapshot> snaps;
          {
            py::gil_scoped_release release;
            snaps = simulate_flow(g, p, c, seed);
          }
          py::list out;
          for (const auto& s : snaps) out.append(py::make_tuple(s.time, to_array(s.phase.values)));
          return out;
        },
        py::arg("grid"), py::arg("props"), py::arg("conditions"), py::arg("seed") = 0);

  m.def("write_volume",
        [](const fs::path& p, const Array& values, const py::dict& header) {
          const auto text = py::module_::import("json").attr("dumps")(header).cast<std::string>();
          write_volume(p, to_vector(values), Json::parse(text));
        },
        py::arg("path"), py::arg("values"), py::arg("header") = py::dict());
  m.def("read_volume",
        [](const fs::path& p) {
          auto v = read_volume(p);
          return py::make_tuple(json_to_py(v.header), to_array(v.values));
        },
        py::arg("path"));

  m.def("read_sample",
        [](const fs::path& dir, std::size_t index) {
          const auto manifest = DatasetManifest::load(dir);
          const auto s = read_sample(dir, manifest, index);
          py::dict d;
          d["sample_id"] = s.record.sample_id;
          d["condition_id"] = s.record.condition_id;
          d["frame_time"] = s.record.frame_time;
          d["snr_db"] = s.record.snr_db;
          d["clean"] = to_array(s.clean.values);
          d["noisy"] = to_array(s.noisy.values);
          d["raw_clean"] = to_array(s.raw_clean.values);
          d["g_true"] = to_array(s.g_true.values);
          return d;
        },
        py::arg("dataset"), py::arg("index"));
  m.def("validate_dataset", [](const fs::path& p) { return validate_dataset(p); }, py::arg("path"));

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::vector<const char*> argv{"ectwin"};
          for (const auto& a : args) argv.push_back(a.c_str());
          std::ostringstream out, err;
          const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
