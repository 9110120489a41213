#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "ectwin/error.hpp"
#include "ectwin/recon.hpp"

using namespace ectwin;

namespace {

SensitivityMatrix toy(std::initializer_list<std::initializer_list<double>> rows) {
  SensitivityMatrix s;
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto n = static_cast<Eigen::Index>(rows.begin()->size());
  s.entries.resize(m, n);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) s.entries(i, j++) = v;
    s.row_sums.push_back(1.0);
    s.pairs.push_back({0, static_cast<int>(i) + 1});
    ++i;
  }
  return s;
}

const SensitivityMatrix& sensor_s() {
  static const SensitivityMatrix s = [] {
    const auto g = build_grid(SensorGeometry{}, {16, 16, 16});
    return compute_sensitivity(g, uniform_permittivity(g, 1.0, 2.6), 1.0);
  }();
  return s;
}

CapacitanceFrame frame_of(const Eigen::VectorXd& v) {
  return {std::vector<double>(v.data(), v.data() + v.size()), FrameKind::normalized};
}

CapacitanceFrame random_frame(std::uint64_t seed, std::size_t m) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CapacitanceFrame c;
  c.kind = FrameKind::normalized;
  for (std::size_t i = 0; i < m; ++i) c.values.push_back(u(rng));
  return c;
}

}  // namespace

TEST_CASE("back projection by hand") {
  const auto s = toy({{0.5, 0.5}});
  CHECK(lbp_raw(s, CapacitanceFrame{{1.0}}).values == std::vector<double>{0.5, 0.5});
  CHECK(lbp(s, CapacitanceFrame{{0.0}}).values == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(lbp(s, CapacitanceFrame{{1.0, 2.0}}), PreconditionError);
  CHECK_THROWS_AS(lbp_raw(s, CapacitanceFrame{{}}), PreconditionError);
}

TEST_CASE("lbp of the sensor maps uniform frames to uniform volumes") {
  const auto& s = sensor_s();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(s.cols());
  const auto g = lbp(s, frame_of(s.entries * ones));
  for (double v : g.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  const auto zero = lbp(s, frame_of(Eigen::VectorXd::Zero(s.rows())));
  for (double v : zero.values) CHECK(v == 0.0);
  const auto half = lbp(s, frame_of(Eigen::VectorXd::Constant(s.rows(), 0.5)));
  for (double v : half.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("lbp is linear before clamping") {
  const auto& s = sensor_s();
  const auto c1 = random_frame(1, 66), c2 = random_frame(2, 66);
  const double a = 0.7, b = -1.3;
  CapacitanceFrame mix = c1;
  for (std::size_t m = 0; m < 66; ++m) mix.values[m] = a * c1.values[m] + b * c2.values[m];
  LbpSettings raw;
  raw.clamp = false;
  const auto g1 = lbp(s, c1, raw), g2 = lbp(s, c2, raw), gm = lbp(s, mix, raw);
  const auto r1 = lbp_raw(s, c1), r2 = lbp_raw(s, c2), rm = lbp_raw(s, mix);
  for (std::size_t j = 0; j < gm.values.size(); ++j) {
    CHECK(gm.values[j] == doctest::Approx(a * g1.values[j] + b * g2.values[j]).epsilon(1e-9).scale(1.0));
    CHECK(rm.values[j] == doctest::Approx(a * r1.values[j] + b * r2.values[j]).epsilon(1e-9).scale(1.0));
  }
  const auto clamped = lbp(s, mix);
  for (double v : clamped.values) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("scalar Landweber recursion") {
  const auto s = toy({{2.0}});
  LandweberSettings one;
  one.iterations = 1;
  one.step = 0.1;
  one.clamp = false;
  one.initial = ReconVolume{{0.0}};
  CHECK(landweber(s, CapacitanceFrame{{4.0}}, one).values[0] == doctest::Approx(0.8));
  auto many = one;
  many.iterations = 200;
  CHECK(landweber(s, CapacitanceFrame{{4.0}}, many).values[0] == doctest::Approx(2.0).epsilon(1e-12));

  auto bad = one;
  bad.step = 0.6;
  try {
    landweber(s, CapacitanceFrame{{4.0}}, bad);
    FAIL("expected a step size error");
  } catch (const StepSizeError& e) {
    CHECK(e.bound() == doctest::Approx(0.5).epsilon(1e-6));
  }
  bad.step = 0.0;
  CHECK_THROWS_AS(landweber(s, CapacitanceFrame{{4.0}}, bad), StepSizeError);
  bad.step = 0.1;
  bad.iterations = 0;
  CHECK_THROWS_AS(landweber(s, CapacitanceFrame{{4.0}}, bad), PreconditionError);
}

TEST_CASE("2x2 Landweber converges at the predicted rate") {
  const auto s = toy({{2.0, 1.0}, {1.0, 3.0}});
  const Eigen::Vector2d truth(0.3, 0.7);
  const auto c = frame_of(s.entries * truth);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(s.entries));
  const double smax = svd.singularValues()[0], smin = svd.singularValues()[1];
  const double alpha = 1.0 / (smax * smax);
  const double rate = 1.0 - alpha * smin * smin;
  CHECK(estimate_sigma_max(s) == doctest::Approx(smax).epsilon(1e-12));
  double e0 = truth.norm();
  for (int k : {1, 5, 20, 60}) {
    LandweberSettings set;
    set.iterations = k;
    set.step = alpha;
    set.clamp = false;
    set.initial = ReconVolume{{0.0, 0.0}};
    const auto g = landweber(s, c, set);
    const double err = std::hypot(g.values[0] - truth[0], g.values[1] - truth[1]);
    CHECK(err <= std::pow(rate, k) * e0 * (1 + 1e-9) + 1e-14);
  }
}

TEST_CASE("sigma_max agrees with the SVD of the sensor matrix") {
  const auto& s = sensor_s();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(s.entries));
  CHECK(estimate_sigma_max(s) == doctest::Approx(svd.singularValues()[0]).epsilon(1e-10));
}

TEST_CASE("unclamped Landweber residual never grows") {
  const auto& s = sensor_s();
  const auto c = random_frame(7, 66);
  const auto cv = Eigen::Map<const Eigen::VectorXd>(c.values.data(), 66);
  double previous = std::numeric_limits<double>::infinity();
  ReconVolume g = lbp(s, c);
  for (int k = 0; k < 30; ++k) {
    LandweberSettings set;
    set.iterations = 1;
    set.clamp = false;
    set.initial = g;
    g = landweber(s, c, set);
    const double r = (cv - s.entries * Eigen::Map<const Eigen::VectorXd>(g.values.data(), s.cols())).norm();
    CHECK(r <= previous * (1 + 1e-12));
    previous = r;
  }
}

TEST_CASE("metric examples") {
  const ReconVolume truth{{0.0, 0.25, 0.5, 1.0}};
  const auto same = metrics(truth, truth);
  CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(same.rmse == 0.0);
  CHECK(same.psnr == std::numeric_limits<double>::infinity());
  CHECK(same.lvc == doctest::Approx(0.4375));

  const auto flat = metrics(ReconVolume{std::vector<double>(8, 0.0)}, ReconVolume{std::vector<double>(8, 0.1)});
  CHECK(flat.rmse == doctest::Approx(0.1));
  CHECK(flat.psnr == doctest::Approx(20.0));

  std::vector<double> t(8, 0.0);
  t[0] = 1.0;
  CHECK(rmse(t, std::vector<double>(8, 0.0)) == doctest::Approx(std::sqrt(1.0 / 8.0)));
  CHECK(rmse(t, std::vector<double>(8, 0.0)) == doctest::Approx(0.3536).epsilon(1e-4));

  // Reference values from an independent numpy evaluation of the global SSIM formula.
  CHECK(ssim(std::vector<double>{0, 0.5, 1, 1}, std::vector<double>{0, 0.5, 0.5, 1}) ==
        doctest::Approx(0.8220349018444079).epsilon(1e-12));
  CHECK(ssim(std::vector<double>{0, 1, 0, 1}, std::vector<double>{1, 0, 1, 0}) ==
        doctest::Approx(-0.9964064683569573).epsilon(1e-12));

  CHECK_THROWS_AS(metrics(truth, ReconVolume{{0.0}}), PreconditionError);
  CHECK_THROWS_AS(metrics(truth, ReconVolume{{0.0, 0.0, 0.0, std::nan("")}}), PreconditionError);
}

TEST_CASE("metric properties on random volumes") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(50), y(50);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(ssim(x, y) <= 1.0);
    CHECK(ssim(x, y) >= -1.0);
    CHECK(rmse(x, y) == rmse(y, x));
    CHECK(rmse(x, y) > 0.0);
    const double l = lvc(y);
    CHECK((l >= 0.0 && l <= 1.0));
  }
  double previous = std::numeric_limits<double>::infinity();
  for (double e : {1e-6, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0}) {
    CHECK(psnr_from_rmse(e) < previous);
    previous = psnr_from_rmse(e);
  }
}

TEST_CASE("lvc series") {
  const ReconVolume gas{std::vector<double>(10, 0.0)}, liquid{std::vector<double>(10, 1.0)};
  const std::vector<ReconVolume> full{liquid, liquid, liquid};
  CHECK(lvc_series(full) == std::vector<double>{1.0, 1.0, 1.0});
  const std::vector<ReconVolume> empty{gas, gas};
  CHECK(lvc_series(empty) == std::vector<double>{0.0, 0.0});
  const std::vector<ReconVolume> alternating{gas, liquid, gas, liquid};
  CHECK(lvc_series(alternating) == std::vector<double>{0.0, 1.0, 0.0, 1.0});
  CHECK_THROWS_AS(lvc_series(std::vector<ReconVolume>{}), PreconditionError);
  // Out-of-range estimates are clamped before averaging.
  CHECK(lvc(std::vector<double>{-1.0, 2.0}) == 0.5);
}
