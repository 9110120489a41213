#include "ectwin/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "ectwin/config.hpp"
#include "ectwin/dataset.hpp"
#include "ectwin/error.hpp"
#include "ectwin/hash.hpp"
#include "ectwin/io.hpp"
#include "ectwin/parallel.hpp"
#include "ectwin/recon.hpp"

namespace ectwin {

namespace {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

std::string numbered(const char* prefix, std::int64_t id, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06lld.%s", prefix, static_cast<long long>(id), ext);
  return buf;
}

Json psnr_json(double psnr) { return std::isinf(psnr) ? Json("inf") : Json(psnr); }

Json report_json(const QualityReport& r) {
  return {{"ssim", r.ssim}, {"rmse", r.rmse}, {"psnr", psnr_json(r.psnr)}, {"lvc", r.lvc}};
}

// ---------------------------------------------------------------------------
// forward

struct ForwardArgs {
  std::string config;
  std::string phase;
  std::string fill;
  std::string out;
  std::string grid_out;
  bool print = false;
  bool csv = false;
};

int cmd_forward(const ForwardArgs& a, int jobs_flag, Streams io) {
  const RunConfig cfg = load_config(a.config);
  const int jobs = jobs_flag >= 0 ? jobs_flag : cfg.jobs;
  if (a.phase.empty() == a.fill.empty()) throw ValidationError("forward: give exactly one of --phase or --fill");
  if (!a.fill.empty() && a.fill != "liquid" && a.fill != "gas")
    throw ValidationError("forward: --fill must be liquid or gas");

  const VoxelGrid grid = build_grid(cfg.geometry, cfg.resolution);
  PhaseVolume phase;
  if (!a.phase.empty()) {
    if (!fs::exists(a.phase)) throw ValidationError("forward: phase file not found: " + a.phase);
    auto vol = read_volume(a.phase);
    if (vol.header.value("quantity", std::string{}) != "void_fraction")
      throw ValidationError("forward: " + a.phase + " does not hold a void fraction volume");
    if (vol.values.size() != grid.lumen_count())
      throw ValidationError("forward: " + a.phase + " has " + std::to_string(vol.values.size()) +
                            " voxels, the grid has " + std::to_string(grid.lumen_count()) + " lumen voxels");
    for (double v : vol.values)
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("forward: void fraction outside [0, 1] in " + a.phase);
    phase.values = std::move(vol.values);
  } else {
    phase.values.assign(grid.lumen_count(), a.fill == "gas" ? 1.0 : 0.0);
  }

  const double v = cfg.excitation_voltage;
  const auto perm = phase_to_permittivity(phase, grid, cfg.fluid, cfg.geometry.wall_permittivity);
  const auto raw = measure_frame(grid, perm, v, jobs);
  const auto cal = calibration_frames(grid, cfg.fluid.eps_gas, cfg.fluid.eps_liquid, cfg.geometry.wall_permittivity, v, jobs);
  const auto norm = normalize_frame(raw, cal.low, cal.high);

  const fs::path out = a.out.empty() ? cfg.output_directory / "forward" : fs::path(a.out);
  const auto pairs = electrode_pairs(grid.electrode_count());
  const Json extra = {{"grid_hash", hex_digest(grid.hash())}, {"excitation_voltage", v}};
  write_frame(out / "raw.cap", raw, pairs, extra);
  write_frame(out / "cal_low.cap", cal.low, pairs, extra);
  write_frame(out / "cal_high.cap", cal.high, pairs, extra);
  write_frame(out / "normalized.cap", norm, pairs, extra);
  if (a.csv) {
    write_frame_csv(out / "raw.csv", raw, pairs);
    write_frame_csv(out / "normalized.csv", norm, pairs);
  }
  if (!a.grid_out.empty()) write_grid(a.grid_out, grid);
  if (a.print) {
    io.out << std::setprecision(17);
    for (std::size_t m = 0; m < pairs.size(); ++m)
      io.out << pairs[m].first << ' ' << pairs[m].second << ' ' << raw.values[m] << ' ' << norm.values[m] << '\n';
  }
  io.err << "forward: " << pairs.size() << " measurements written to " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config;
  std::string condition;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, int jobs_flag, Streams io) {
  const RunConfig cfg = load_config(a.config);
  const int jobs = jobs_flag >= 0 ? jobs_flag : cfg.jobs;
  auto conditions = cfg.resolved_conditions();
  if (!a.condition.empty()) {
    std::erase_if(conditions, [&](const FlowConditions& c) { return c.id != a.condition; });
    if (conditions.empty()) throw ValidationError("simulate: no condition with id '" + a.condition + "'");
  }
  if (conditions.empty()) throw ValidationError("simulate: the configuration defines no flow conditions");
  const VoxelGrid grid = build_grid(cfg.geometry, cfg.resolution);
  const fs::path out = a.out.empty() ? cfg.output_directory / "simulate" : fs::path(a.out);

  std::mutex mu;
  std::vector<Json> entries(conditions.size());
  parallel_for(conditions.size(), jobs, [&](std::size_t ci) {
    const auto& cond = conditions[ci];
    SimulationSettings sim = cfg.simulation;
    const auto total = static_cast<std::size_t>(std::llround(cond.duration / cond.output_interval));
    sim.on_snapshot = [&](std::size_t index, double t) {
      std::scoped_lock lock(mu);
      io.err << "[" << cond.id << "] snapshot " << index + 1 << "/" << total << " t=" << std::fixed
             << std::setprecision(3) << t << " s\n"
             << std::defaultfloat;
    };
    const auto snaps = simulate_flow(grid, cfg.fluid, cond, cfg.flow_seed, sim);
    Json files = Json::array();
    for (std::size_t s = 0; s < snaps.size(); ++s) {
      char name[256];
      std::snprintf(name, sizeof name, "phase_%s_%04zu.vol", cond.id.c_str(), s);
      write_volume(out / name, snaps[s].phase.values,
                   {{"quantity", "void_fraction"},
                    {"condition_id", cond.id},
                    {"frame_index", s},
                    {"time", snaps[s].time},
                    {"grid_hash", hex_digest(grid.hash())}});
      files.push_back({{"file", name}, {"frame_index", s}, {"time", snaps[s].time}});
    }
    entries[ci] = {{"condition", to_json(cond)}, {"snapshots", files}};
  });

  Json index = {{"format", "ectwin-simulation-index"},
                {"version", kFileFormatVersion},
                {"seed", cfg.flow_seed},
                {"grid_hash", hex_digest(grid.hash())},
                {"conditions", entries}};
  write_text_atomic(out / "index.json", index.dump(1));
  io.err << "simulate: " << conditions.size() << " condition(s) written to " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dataset

struct DatasetArgs {
  std::string config;
  std::string out;
  bool resume = false;
};

int cmd_dataset(const DatasetArgs& a, int jobs_flag, Streams io) {
  const RunConfig cfg = load_config(a.config);
  DatasetInputs in;
  in.geometry = cfg.geometry;
  in.fluid = cfg.fluid;
  in.conditions = cfg.resolved_conditions();
  in.noise = cfg.noise;
  in.excitation_voltage = cfg.excitation_voltage;
  in.flow_seed = cfg.flow_seed;
  in.simulation = cfg.simulation;
  if (in.conditions.empty()) throw ValidationError("dataset: the configuration defines no flow conditions");
  if (in.noise.empty()) throw ValidationError("dataset: the configuration defines no noise levels");
  const VoxelGrid grid = build_grid(cfg.geometry, cfg.resolution);

  DatasetOptions opt;
  opt.jobs = jobs_flag >= 0 ? jobs_flag : cfg.jobs;
  opt.resume = a.resume;
  opt.log = [&](const std::string& msg) { io.err << "dataset: " << msg << '\n'; };
  const fs::path out = a.out.empty() ? cfg.output_directory / "dataset" : fs::path(a.out);
  const auto manifest = generate_dataset(grid, in, out, opt);

  int failed = 0;
  for (const auto& c : manifest.document.at("conditions"))
    if (c.at("status") != "ok") ++failed;
  io.err << "dataset: " << manifest.samples.size() << " samples in " << out.string();
  if (failed > 0) io.err << ", " << failed << " condition(s) failed (see manifest)";
  io.err << '\n';
  return failed > 0 ? kExitNumerical : kExitOk;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructArgs {
  std::string dataset;
  std::string config;
  std::string method;
  std::string input = "noisy";
  std::string out;
  int iterations = -1;
  double step = 0.0;
  bool no_clamp = false;
};

int cmd_reconstruct(const ReconstructArgs& a, int jobs_flag, Streams io) {
  ReconSettings rs;
  int jobs = 0;
  if (!a.config.empty()) {
    const RunConfig cfg = load_config(a.config);
    rs = cfg.reconstruction;
    jobs = cfg.jobs;
  }
  if (jobs_flag >= 0) jobs = jobs_flag;
  if (!a.method.empty()) rs.method = a.method;
  if (rs.method != "lbp" && rs.method != "landweber") throw ValidationError("reconstruct: unknown method " + rs.method);
  if (a.iterations >= 0) rs.landweber_iterations = a.iterations;
  if (a.step != 0.0) rs.landweber_step = a.step;
  if (a.no_clamp) rs.landweber_clamp = rs.lbp.clamp = false;
  if (rs.landweber_iterations < 1) throw ValidationError("reconstruct: --iterations must be at least 1");
  if (a.input != "noisy" && a.input != "clean") throw ValidationError("reconstruct: --input must be noisy or clean");

  const fs::path dir = a.dataset;
  const auto manifest = DatasetManifest::load(dir);
  const auto s = read_sensitivity(dir / "sensitivity.smat");
  if (static_cast<std::size_t>(s.cols()) != manifest.lumen_count)
    throw ValidationError("reconstruct: sensitivity matrix does not match the dataset");

  LandweberSettings lw;
  lw.iterations = rs.landweber_iterations;
  lw.clamp = rs.landweber_clamp;
  if (rs.method == "landweber") {
    const double sigma = estimate_sigma_max(s);
    lw.step = rs.landweber_step.value_or(1.0 / (sigma * sigma));
    const double bound = 2.0 / (sigma * sigma);
    if (!(*lw.step > 0.0) || *lw.step >= bound) {
      std::ostringstream msg;
      msg << "reconstruct: Landweber step " << *lw.step << " outside the stable range (0, " << bound << ")";
      throw StepSizeError(msg.str(), bound);
    }
  }

  const fs::path out = a.out.empty() ? fs::path(dir.string() + "_" + rs.method) : fs::path(a.out);
  std::vector<Json> entries(manifest.samples.size());
  parallel_for(manifest.samples.size(), jobs, [&](std::size_t i) {
    const auto sample = read_sample(dir, manifest, i);
    const auto& frame = a.input == "noisy" ? sample.noisy : sample.clean;
    const ReconVolume est = rs.method == "lbp" ? lbp(s, frame, rs.lbp) : landweber(s, frame, lw);
    const auto report = metrics(sample.g_true, est);
    const auto id = sample.record.sample_id;
    const Json meta = {{"sample_id", id},
                       {"condition_id", sample.record.condition_id},
                       {"frame_index", sample.record.frame_index},
                       {"snr_db", sample.record.snr_db},
                       {"method", rs.method},
                       {"quantity", "normalized_permittivity"}};
    write_volume(out / numbered("recon", id, "vol"), est.values, meta);
    Json rep = meta;
    rep.erase("quantity");
    rep["metrics"] = report_json(report);
    write_text_atomic(out / numbered("report", id, "json"), rep.dump(1));
    entries[i] = rep;
  });
  write_text_atomic(out / "index.json", Json{{"format", "ectwin-recon-index"},
                                              {"version", kFileFormatVersion},
                                              {"dataset", fs::absolute(dir).string()},
                                              {"method", rs.method},
                                              {"input", a.input},
                                              {"samples", entries}}
                                            .dump(1));
  io.err << "reconstruct: " << entries.size() << " volumes written to " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct VolumeEntry {
  std::vector<double> values;
  std::optional<double> snr_db;
};

std::map<std::int64_t, VolumeEntry> load_volume_set(const fs::path& dir) {
  std::map<std::int64_t, VolumeEntry> out;
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  if (fs::exists(dir / "manifest.json")) {
    const auto manifest = DatasetManifest::load(dir);
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
      const auto& r = manifest.samples[i];
      const auto g = decode_f32(read_file(dir / r.vol_file));
      if (g.size() != manifest.lumen_count) throw FormatError(r.vol_file + ": wrong voxel count");
      out[r.sample_id] = {std::vector<double>(g.begin(), g.end()), r.snr_db};
    }
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".vol") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto vol = read_volume(f);
    if (!vol.header.contains("sample_id")) throw FormatError(f.string() + ": header has no sample_id");
    const auto id = vol.header.at("sample_id").get<std::int64_t>();
    VolumeEntry e{std::move(vol.values), std::nullopt};
    if (vol.header.contains("snr_db") && vol.header.at("snr_db").is_number()) e.snr_db = vol.header.at("snr_db").get<double>();
    if (!out.emplace(id, std::move(e)).second) throw FormatError(dir.string() + ": duplicate sample_id " + std::to_string(id));
  }
  if (out.empty()) throw ValidationError(dir.string() + ": no volumes found");
  return out;
}

Json summarize(const std::vector<QualityReport>& reports) {
  auto stat = [&](auto field) {
    double sum = 0.0, sq = 0.0;
    bool inf = false;
    for (const auto& r : reports) {
      const double v = field(r);
      if (std::isinf(v)) inf = true;
      sum += v;
    }
    const double n = static_cast<double>(reports.size());
    const double mean = sum / n;
    if (inf) return Json{{"mean", "inf"}, {"std", nullptr}};
    for (const auto& r : reports) sq += (field(r) - mean) * (field(r) - mean);
    return Json{{"mean", mean}, {"std", std::sqrt(sq / n)}};
  };
  return {{"count", reports.size()},
          {"ssim", stat([](const QualityReport& r) { return r.ssim; })},
          {"rmse", stat([](const QualityReport& r) { return r.rmse; })},
          {"psnr", stat([](const QualityReport& r) { return r.psnr; })},
          {"lvc", stat([](const QualityReport& r) { return r.lvc; })}};
}

struct EvaluateArgs {
  std::string truth;
  std::string estimate;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, Streams io) {
  const auto truth = load_volume_set(a.truth);
  const auto est = load_volume_set(a.estimate);
  std::vector<std::int64_t> missing, extra;
  for (const auto& [id, _] : truth)
    if (!est.count(id)) missing.push_back(id);
  for (const auto& [id, _] : est)
    if (!truth.count(id)) extra.push_back(id);
  if (!missing.empty() || !extra.empty()) {
    std::ostringstream msg;
    msg << "evaluate: sample sets differ";
    auto list = [&](const char* what, const std::vector<std::int64_t>& ids) {
      if (ids.empty()) return;
      msg << "; " << what << ":";
      for (auto id : ids) msg << ' ' << id;
    };
    list("missing from the estimates", missing);
    list("missing from the truth", extra);
    throw ValidationError(msg.str());
  }

  std::vector<QualityReport> all;
  std::map<std::string, std::vector<QualityReport>> by_snr;
  Json per_sample = Json::array();
  for (const auto& [id, t] : truth) {
    const auto& e = est.at(id);
    const auto r = metrics(ReconVolume{t.values}, ReconVolume{e.values});
    all.push_back(r);
    const auto snr = t.snr_db ? t.snr_db : e.snr_db;
    std::ostringstream key;
    if (snr) key << *snr;
    else key << "unknown";
    by_snr[key.str()].push_back(r);
    Json rec = report_json(r);
    rec["sample_id"] = id;
    per_sample.push_back(rec);
  }
  Json report = summarize(all);
  report["by_snr"] = Json::object();
  for (const auto& [k, v] : by_snr) report["by_snr"][k] = summarize(v);
  report["samples"] = per_sample;
  if (!a.out.empty()) write_text_atomic(a.out, report.dump(1));
  Json brief = report;
  brief.erase("samples");
  io.out << brief.dump(1) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// validate

std::vector<std::string> validate_path(const fs::path& p) {
  std::vector<std::string> problems;
  auto check_one = [&](const fs::path& f) {
    try {
      const auto ext = f.extension().string();
      if (ext == ".vol") read_volume(f);
      else if (ext == ".cap") read_frame(f);
      else if (ext == ".smat") read_sensitivity(f);
      else read_document(f);
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  };
  if (!fs::exists(p)) return {"not found: " + p.string()};
  if (fs::is_directory(p)) {
    if (fs::exists(p / "manifest.json")) return validate_dataset(p);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".vol" || ext == ".cap" || ext == ".smat")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) problems.push_back(p.string() + ": nothing to validate");
    for (const auto& f : files) check_one(f);
  } else {
    check_one(p);
  }
  return problems;
}

int cmd_validate(const std::string& path, Streams io) {
  const auto problems = validate_path(path);
  for (const auto& p : problems) io.out << "problem: " << p << '\n';
  if (!problems.empty()) {
    io.err << "validate: " << problems.size() << " problem(s) in " << path << '\n';
    return kExitValidation;
  }
  io.out << "ok: " << path << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Streams io{out, err};
  CLI::App app{"Electrical capacitance tomography digital twin"};
  app.require_subcommand(1);
  int jobs = -1;
  app.add_option("--jobs", jobs, "Worker threads (0 = all cores; default from the config, else all cores)")
      ->check(CLI::NonNegativeNumber);

  ForwardArgs fa;
  auto* fwd = app.add_subcommand("forward", "Compute raw, calibration and normalized capacitance frames");
  fwd->add_option("--config", fa.config, "Run configuration (JSON)")->required();
  fwd->add_option("--phase", fa.phase, "Void fraction volume (.vol) to measure");
  fwd->add_option("--fill", fa.fill, "Uniform lumen fill instead of a volume: liquid or gas");
  fwd->add_option("--out", fa.out, "Output directory (default <output>/forward)");
  fwd->add_option("--export-grid", fa.grid_out, "Also write the voxel grid to this file");
  fwd->add_flag("--print", fa.print, "Print pair, raw and normalized values");
  fwd->add_flag("--csv", fa.csv, "Also write CSV copies of the raw and normalized frames");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run the two-phase flow simulation and write void fraction snapshots");
  sim->add_option("--config", sa.config, "Run configuration (JSON)")->required();
  sim->add_option("--condition", sa.condition, "Only simulate the condition with this id");
  sim->add_option("--out", sa.out, "Output directory (default <output>/simulate)");

  DatasetArgs da;
  auto* ds = app.add_subcommand("dataset", "Generate a labelled dataset of capacitance frames and volumes");
  ds->add_option("--config", da.config, "Run configuration (JSON)")->required();
  ds->add_option("--out", da.out, "Dataset directory (default <output>/dataset)");
  ds->add_flag("--resume", da.resume, "Keep finished conditions of an interrupted run");

  ReconstructArgs ra;
  auto* rc = app.add_subcommand("reconstruct", "Reconstruct every dataset sample and score it");
  rc->add_option("--dataset", ra.dataset, "Dataset directory")->required();
  rc->add_option("--config", ra.config, "Run configuration supplying reconstruction settings");
  rc->add_option("--method", ra.method, "lbp or landweber (default from config, else lbp)");
  rc->add_option("--input", ra.input, "Frame to invert: noisy or clean")->capture_default_str();
  rc->add_option("--iterations", ra.iterations, "Landweber iterations");
  rc->add_option("--step", ra.step, "Landweber step size (default 1/sigma_max^2)");
  rc->add_flag("--no-clamp", ra.no_clamp, "Do not clamp images to [0, 1]");
  rc->add_option("--out", ra.out, "Output directory (default <dataset>_<method>)");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score estimate volumes against ground truth");
  ev->add_option("--truth", ea.truth, "Dataset directory or directory of .vol files")->required();
  ev->add_option("--estimate", ea.estimate, "Directory of .vol files with sample ids")->required();
  ev->add_option("--out", ea.out, "Write the full report (with per-sample metrics) here");

  std::string vpath;
  auto* va = app.add_subcommand("validate", "Check a dataset directory, a directory of files, or one file");
  va->add_option("path", vpath, "Dataset directory, output directory or file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand --help surfaces here too; print the right page.
    if (e.get_exit_code() == 0) {
      for (auto* sub : app.get_subcommands()) {
        out << sub->help();
        return kExitOk;
      }
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*fwd) return cmd_forward(fa, jobs, io);
    if (*sim) return cmd_simulate(sa, jobs, io);
    if (*ds) return cmd_dataset(da, jobs, io);
    if (*rc) return cmd_reconstruct(ra, jobs, io);
    if (*ev) return cmd_evaluate(ea, io);
    if (*va) return cmd_validate(vpath, io);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace ectwin
