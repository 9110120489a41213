#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "ectwin/commands.hpp"
#include "ectwin/config.hpp"
#include "ectwin/dataset.hpp"
#include "ectwin/error.hpp"
#include "ectwin/io.hpp"
#include "fixtures.hpp"

using namespace ectwin;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ectwin");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Json tiny_config(const fs::path& outdir) {
  Json j = Json::parse(R"({
    "grid": {"resolution": [16, 16, 16]},
    "flow": {
      "seed": 5,
      "defaults": {"duration": 0.03, "output_interval": 0.01},
      "conditions": [
        {"id": "moving", "inlet_gas_velocity": 0.425, "inlet_liquid_velocity": 0.709},
        {"id": "still", "inlet_gas_velocity": 0.0, "inlet_liquid_velocity": 0.0}
      ]
    },
    "noise": [{"snr_db": 50, "seed": 2}],
    "jobs": 1
  })");
  j["output"] = {{"directory", outdir.string()}};
  return j;
}

fs::path write_config(const fs::path& dir, const Json& j, const std::string& name = "config.json") {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(1);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_ext(const fs::path& dir, const std::string& ext, const std::string& prefix = "") {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext && e.path().filename().string().rfind(prefix, 0) == 0) ++n;
  return n;
}

// One dataset shared by the reconstruct, evaluate and validate cases.
const fs::path& shared_dataset() {
  static const fs::path dir = [] {
    const auto root = testing::scratch_dir("cli_shared");
    const auto cfg = write_config(root, tiny_config(root / "out"));
    const auto r = cli({"dataset", "--config", cfg.string(), "--out", (root / "ds").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return root / "ds";
  }();
  return dir;
}

}  // namespace

TEST_CASE("config: defaults and explicit conditions") {
  const auto dir = testing::scratch_dir("cli_config");
  const auto cfg = load_config(write_config(dir, tiny_config(dir)));
  CHECK(cfg.resolution.nx == 16);
  CHECK(cfg.conditions.size() == 2);
  CHECK(cfg.conditions[0].duration == doctest::Approx(0.03));
  CHECK(cfg.noise.size() == 1);
  CHECK(cfg.flow_seed == 5);
}

TEST_CASE("config: unnamed conditions get sequential ids and sampling appends") {
  const auto dir = testing::scratch_dir("cli_config_ids");
  auto j = tiny_config(dir);
  j["flow"]["conditions"] = Json::parse(R"([{"inlet_gas_velocity": 0.1, "inlet_liquid_velocity": 0.2}])");
  j["flow"]["sampling"] = {{"gas_range", {0.1, 0.5}}, {"liquid_range", {0.2, 0.8}}, {"count", 4}, {"seed", 9}};
  const auto cfg = load_config(write_config(dir, j));
  const auto all = cfg.resolved_conditions();
  REQUIRE(all.size() == 5);
  CHECK(all[0].id == "c000");
  std::set<std::string> ids;
  for (const auto& c : all) ids.insert(c.id);
  CHECK(ids.size() == 5);
  for (std::size_t i = 1; i < all.size(); ++i) {
    CHECK(all[i].inlet_gas_velocity >= 0.1);
    CHECK(all[i].inlet_gas_velocity <= 0.5);
    CHECK(all[i].inlet_liquid_velocity >= 0.2);
    CHECK(all[i].inlet_liquid_velocity <= 0.8);
  }
}

TEST_CASE("config: bad input is rejected") {
  const auto dir = testing::scratch_dir("cli_config_bad");
  auto expect_bad = [&](Json j, const std::string& needle) {
    const auto p = write_config(dir, j, "bad.json");
    try {
      load_config(p);
      FAIL("accepted: " << j.dump());
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  auto j = tiny_config(dir);
  j["grid"]["colour"] = "red";
  expect_bad(j, "colour");

  j = tiny_config(dir);
  j["flow"]["conditions"][0]["inlet_gas_velocity"] = -1.0;
  expect_bad(j, "");

  j = tiny_config(dir);
  j["flow"]["conditions"][1]["id"] = "moving";
  expect_bad(j, "duplicate");

  j = tiny_config(dir);
  j["flow"]["sampling"] = {{"gas_range", {0.5, 0.1}}, {"count", 2}};
  expect_bad(j, "");

  j = tiny_config(dir);
  j["grid"]["resolution"] = {16, 16};
  expect_bad(j, "");

  j = tiny_config(dir);
  j["flow"]["cfl"] = 1.5;
  expect_bad(j, "cfl");

  j = tiny_config(dir);
  j["reconstruction"] = {{"method", "art"}};
  expect_bad(j, "method");

  CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
  std::ofstream(dir / "broken.json") << "{\"grid\": ";
  CHECK_THROWS_AS(load_config(dir / "broken.json"), Error);
}

TEST_CASE("help is available for the tool and every subcommand") {
  const auto top = cli({"--help"});
  CHECK(top.code == 0);
  for (const char* sub : {"forward", "simulate", "dataset", "reconstruct", "evaluate", "validate"}) {
    CHECK(top.out.find(sub) != std::string::npos);
    const auto r = cli({sub, "--help"});
    CHECK_MESSAGE(r.code == 0, sub);
    CHECK_MESSAGE(r.out.find("--") != std::string::npos, sub);
  }
  CHECK(cli({"forward", "--help"}).out.find("--fill") != std::string::npos);
  CHECK(cli({"reconstruct", "--help"}).out.find("--step") != std::string::npos);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"transmogrify"}).code == 1);
  CHECK(cli({"forward"}).code == 1);
  CHECK(cli({"--jobs", "-2", "validate", "."}).code == 1);
}

TEST_CASE("forward with uniform fills hits the calibration endpoints") {
  const auto dir = testing::scratch_dir("cli_forward");
  const auto cfg = write_config(dir, tiny_config(dir));

  auto r = cli({"forward", "--config", cfg.string(), "--fill", "liquid", "--out", (dir / "liq").string(), "--print",
                "--csv", "--export-grid", (dir / "grid.vol").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"raw.cap", "cal_low.cap", "cal_high.cap", "normalized.cap", "raw.csv", "normalized.csv"})
    CHECK_MESSAGE(fs::exists(dir / "liq" / f), f);
  CHECK(fs::exists(dir / "grid.vol"));
  const auto liq = read_frame(dir / "liq" / "normalized.cap");
  REQUIRE(liq.values.size() == 66);
  for (double v : liq.values) CHECK(v == 1.0);
  std::istringstream lines(r.out);
  int a, b, n = 0;
  double raw, norm;
  while (lines >> a >> b >> raw >> norm) {
    CHECK(a < b);
    CHECK(raw > 0.0);
    ++n;
  }
  CHECK(n == 66);

  r = cli({"forward", "--config", cfg.string(), "--fill", "gas", "--out", (dir / "gas").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (double v : read_frame(dir / "gas" / "normalized.cap").values) CHECK(v == 0.0);
}

TEST_CASE("forward rejects missing or malformed phase input without writing") {
  const auto dir = testing::scratch_dir("cli_forward_bad");
  const auto cfg = write_config(dir, tiny_config(dir));
  auto r = cli({"forward", "--config", cfg.string(), "--phase", (dir / "nope.vol").string(), "--out",
                (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("nope.vol") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o"));

  CHECK(cli({"forward", "--config", cfg.string(), "--out", (dir / "o").string()}).code == 1);
  CHECK(cli({"forward", "--config", cfg.string(), "--fill", "mud", "--out", (dir / "o").string()}).code == 1);

  // Wrong quantity and out-of-range fractions.
  const std::vector<double> ones(1280, 1.0);
  write_volume(dir / "perm.vol", ones, {{"quantity", "permittivity"}});
  CHECK(cli({"forward", "--config", cfg.string(), "--phase", (dir / "perm.vol").string(), "--out",
             (dir / "o").string()})
            .code == 1);
  std::vector<double> over(1280, 0.5);
  over[7] = 1.5;
  write_volume(dir / "over.vol", over, {{"quantity", "void_fraction"}});
  CHECK(cli({"forward", "--config", cfg.string(), "--phase", (dir / "over.vol").string(), "--out",
             (dir / "o").string()})
            .code == 1);
  CHECK_FALSE(fs::exists(dir / "o"));
}

TEST_CASE("simulate writes snapshots and is repeatable") {
  const auto dir = testing::scratch_dir("cli_simulate");
  const auto cfg = write_config(dir, tiny_config(dir));
  auto r = cli({"simulate", "--config", cfg.string(), "--out", (dir / "a").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(count_ext(dir / "a", ".vol", "phase_moving_") == 3);
  CHECK(count_ext(dir / "a", ".vol", "phase_still_") == 3);
  const auto index = Json::parse(slurp(dir / "a" / "index.json"));
  CHECK(index.at("conditions").size() == 2);

  for (int s = 0; s < 3; ++s) {
    char name[64];
    std::snprintf(name, sizeof name, "phase_still_%04d.vol", s);
    const auto vol = read_volume(dir / "a" / name);
    CHECK(vol.header.at("quantity") == "void_fraction");
    for (double v : vol.values) REQUIRE(v == 0.0);
  }

  r = cli({"simulate", "--config", cfg.string(), "--condition", "moving", "--out", (dir / "b").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(count_ext(dir / "b", ".vol") == 3);
  for (int s = 0; s < 3; ++s) {
    char name[64];
    std::snprintf(name, sizeof name, "phase_moving_%04d.vol", s);
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
  CHECK(cli({"simulate", "--config", cfg.string(), "--condition", "ghost", "--out", (dir / "c").string()}).code == 1);

  // A snapshot feeds straight back into forward.
  r = cli({"forward", "--config", cfg.string(), "--phase", (dir / "a" / "phase_moving_0002.vol").string(), "--out",
           (dir / "fwd").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  // Mutual capacitance is not monotone in permittivity, so a mixture may land a little
  // outside the calibration span; it must still be finite and close to it.
  for (double v : read_frame(dir / "fwd" / "normalized.cap").values) {
    CHECK(std::isfinite(v));
    CHECK(v > -0.1);
    CHECK(v < 1.1);
  }
}

TEST_CASE("dataset: sample count, validation before compute, resume") {
  const auto& ds = shared_dataset();
  const auto m = DatasetManifest::load(ds);
  CHECK(m.samples.size() == 6);  // 2 conditions x 3 snapshots x 1 noise level
  CHECK(fs::exists(ds / "sensitivity.smat"));
  CHECK(fs::exists(ds / "manifest.json"));

  const auto before = slurp(ds / "manifest.json");
  const auto cfg = ds.parent_path() / "config.json";
  auto r = cli({"dataset", "--config", cfg.string(), "--out", ds.string(), "--resume"});
  CHECK_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(ds / "manifest.json") == before);

  const auto dir = testing::scratch_dir("cli_dataset_bad");
  auto j = tiny_config(dir);
  j["flow"]["conditions"][0]["inlet_liquid_velocity"] = 50.0;
  const auto bad = write_config(dir, j);
  r = cli({"dataset", "--config", bad.string(), "--out", (dir / "ds").string()});
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(dir / "ds"));
}

TEST_CASE("reconstruct scores every sample") {
  const auto& ds = shared_dataset();
  const auto out = ds.parent_path() / "lbp";
  auto r = cli({"reconstruct", "--dataset", ds.string(), "--method", "lbp", "--out", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(count_ext(out, ".vol", "recon_") == 6);
  CHECK(count_ext(out, ".json", "report_") == 6);
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().filename().string().rfind("report_", 0) != 0) continue;
    const auto rep = Json::parse(slurp(e.path()));
    for (const char* k : {"ssim", "rmse", "psnr", "lvc"}) CHECK_MESSAGE(rep.at("metrics").contains(k), k);
    CHECK(rep.at("method") == "lbp");
  }
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() != ".vol") continue;
    for (double v : read_volume(e.path()).values) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }

  r = cli({"reconstruct", "--dataset", ds.string(), "--method", "landweber", "--iterations", "5", "--out",
           (ds.parent_path() / "lw").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(count_ext(ds.parent_path() / "lw", ".vol") == 6);
}

TEST_CASE("reconstruct rejects an unstable Landweber step before writing") {
  const auto& ds = shared_dataset();
  const auto out = ds.parent_path() / "lw_bad";
  auto r = cli({"reconstruct", "--dataset", ds.string(), "--method", "landweber", "--step", "1e9", "--out",
                out.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("stable range") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
  CHECK(cli({"reconstruct", "--dataset", ds.string(), "--method", "art"}).code == 1);
  CHECK(cli({"reconstruct", "--dataset", ds.string(), "--input", "dirty"}).code == 1);
}

TEST_CASE("evaluate: identical sets score perfectly, mismatches are listed") {
  const auto& ds = shared_dataset();
  const auto m = DatasetManifest::load(ds);
  const auto root = testing::scratch_dir("cli_evaluate");
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto s = read_sample(ds, m, i);
    char name[64];
    std::snprintf(name, sizeof name, "copy_%06lld.vol", static_cast<long long>(s.record.sample_id));
    write_volume(root / "same" / name, s.g_true.values, {{"sample_id", s.record.sample_id}});
    if (i > 0) write_volume(root / "partial" / name, s.g_true.values, {{"sample_id", s.record.sample_id}});
  }

  auto r = cli({"evaluate", "--truth", ds.string(), "--estimate", (root / "same").string(), "--out",
                (root / "report.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rep = Json::parse(slurp(root / "report.json"));
  CHECK(rep.at("count") == 6);
  CHECK(rep.at("ssim").at("mean").get<double>() == doctest::Approx(1.0));
  CHECK(rep.at("rmse").at("mean").get<double>() == 0.0);
  CHECK(rep.at("rmse").contains("std"));
  CHECK(rep.at("psnr").at("mean") == "inf");
  CHECK(rep.at("by_snr").size() == 1);
  CHECK(rep.at("samples").size() == 6);
  CHECK(Json::parse(r.out).at("count") == 6);

  r = cli({"evaluate", "--truth", ds.string(), "--estimate", (root / "partial").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing from the estimates: " + std::to_string(m.samples[0].sample_id)) != std::string::npos);

  // The reconstructions are scored the same way, through the recon directory.
  const auto lbp = ds.parent_path() / "lbp_eval";
  REQUIRE(cli({"reconstruct", "--dataset", ds.string(), "--out", lbp.string()}).code == 0);
  r = cli({"evaluate", "--truth", ds.string(), "--estimate", lbp.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto brief = Json::parse(r.out);
  CHECK(brief.at("rmse").at("mean").get<double>() > 0.0);
  CHECK(brief.at("by_snr").contains("50"));
}

TEST_CASE("validate accepts good output and flags corruption") {
  const auto& ds = shared_dataset();
  auto r = cli({"validate", ds.string()});
  CHECK_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.rfind("ok:", 0) == 0);

  const auto copy = testing::scratch_dir("cli_validate") / "ds";
  fs::copy(ds, copy, fs::copy_options::recursive);
  const auto m = DatasetManifest::load(copy);
  {
    std::fstream f(copy / m.samples[2].cap_file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(5);
    char c;
    f.get(c);
    f.seekp(5);
    f.put(static_cast<char>(c ^ 0x10));
  }
  r = cli({"validate", copy.string()});
  CHECK(r.code == 1);
  CHECK(r.out.find(m.samples[2].cap_file) != std::string::npos);

  CHECK(cli({"validate", (copy / "nothing_here").string()}).code == 1);

  const auto dir = testing::scratch_dir("cli_validate_files");
  write_volume(dir / "a.vol", std::vector<double>{0.0, 0.5, 1.0});
  CHECK(cli({"validate", (dir / "a.vol").string()}).code == 0);
  CHECK(cli({"validate", dir.string()}).code == 0);
  std::ofstream(dir / "b.vol", std::ios::binary) << "garbage";
  CHECK(cli({"validate", dir.string()}).code == 1);
}

TEST_CASE("the installed binary reports exit codes") {
  const char* bin = std::getenv("ECTWIN_CLI_PATH");
  if (!bin) return;
  const std::string b = std::string("\"") + bin + "\"";
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(status(b + " --help") == 0);
  CHECK(status(b + " validate /definitely/not/here") == 1);
  CHECK(status(b + " bogus") == 1);
}
