#include "ectwin/recon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ectwin/error.hpp"

namespace ectwin {

namespace {

Eigen::Map<const Eigen::VectorXd> view(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

void check_frame(const SensitivityMatrix& s, const CapacitanceFrame& c) {
  if (static_cast<Eigen::Index>(c.values.size()) != s.rows()) {
    std::ostringstream msg;
    msg << "frame has " << c.values.size() << " values, sensitivity matrix has " << s.rows() << " rows";
    throw PreconditionError(msg.str());
  }
  if (s.cols() == 0) throw PreconditionError("sensitivity matrix has no columns");
}

void check_volumes(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw PreconditionError("volumes differ in size (" + std::to_string(x.size()) + " vs " +
                            std::to_string(y.size()) + ")");
  if (x.empty()) throw PreconditionError("empty volume");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw PreconditionError("volume holds non-finite values");
}

}  // namespace

ReconVolume lbp_raw(const SensitivityMatrix& s, const CapacitanceFrame& c) {
  check_frame(s, c);
  const Eigen::VectorXd g = s.entries.transpose() * view(c.values);
  return {std::vector<double>(g.data(), g.data() + g.size())};
}

ReconVolume lbp(const SensitivityMatrix& s, const CapacitanceFrame& c, const LbpSettings& settings) {
  check_frame(s, c);
  if (!(settings.regularization >= 0.0)) throw PreconditionError("lbp: regularization must be non-negative");
  const Eigen::VectorXd cs = s.entries.colwise().sum().transpose();
  const Eigen::VectorXd back = s.entries.transpose() * view(c.values);
  const double kappa = settings.regularization * cs.cwiseAbs().maxCoeff();
  const double mean = view(c.values).mean();

  ReconVolume out;
  out.values.resize(static_cast<std::size_t>(cs.size()));
  for (Eigen::Index j = 0; j < cs.size(); ++j) {
    const double sign = cs[j] < 0.0 ? -1.0 : 1.0;
    const double denom = std::fabs(cs[j]) + kappa;
    double g = denom > 0.0 ? (sign * back[j] + kappa * mean) / denom : mean;
    if (settings.clamp) g = std::clamp(g, 0.0, 1.0);
    out.values[static_cast<std::size_t>(j)] = g;
  }
  return out;
}

double estimate_sigma_max(const SensitivityMatrix& s) {
  if (s.rows() == 0 || s.cols() == 0) throw PreconditionError("estimate_sigma_max: empty matrix");
  // The 4-fold symmetric sensor has nearly degenerate leading singular values, which plain
  // power iteration cannot separate in a few dozen steps. The Gram matrix on the short side
  // is tiny (66 x 66 for the default sensor), so take its largest eigenvalue directly.
  const Eigen::MatrixXd gram = s.rows() <= s.cols() ? Eigen::MatrixXd(s.entries * s.entries.transpose())
                                                    : Eigen::MatrixXd(s.entries.transpose() * s.entries);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
}

ReconVolume landweber(const SensitivityMatrix& s, const CapacitanceFrame& c, const LandweberSettings& settings) {
  check_frame(s, c);
  if (settings.iterations < 1) throw PreconditionError("landweber: iterations must be at least 1");
  const double sigma = estimate_sigma_max(s);
  if (!(sigma > 0.0)) throw NumericalError("landweber: sensitivity matrix is zero");
  const double bound = 2.0 / (sigma * sigma);
  const double alpha = settings.step.value_or(1.0 / (sigma * sigma));
  if (!(alpha > 0.0) || alpha >= bound) {
    std::ostringstream msg;
    msg << "landweber: step " << alpha << " outside the stable range (0, " << bound << ")";
    throw StepSizeError(msg.str(), bound);
  }

  Eigen::VectorXd g;
  if (settings.initial) {
    if (static_cast<Eigen::Index>(settings.initial->values.size()) != s.cols())
      throw PreconditionError("landweber: initial image does not match the sensitivity matrix");
    g = view(settings.initial->values);
  } else {
    const auto start = lbp(s, c);
    g = view(start.values);
  }
  const auto cv = view(c.values);
  for (int k = 0; k < settings.iterations; ++k) {
    g += alpha * (s.entries.transpose() * (cv - s.entries * g));
    if (settings.clamp) g = g.cwiseMax(0.0).cwiseMin(1.0);
  }
  return {std::vector<double>(g.data(), g.data() + g.size())};
}

double ssim(std::span<const double> x, std::span<const double> y) {
  check_volumes(x, y);
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double rmse(std::span<const double> x, std::span<const double> y) {
  check_volumes(x, y);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(sum / static_cast<double>(x.size()));
}

double psnr_from_rmse(double e) {
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(1.0 / e);
}

double lvc(std::span<const double> volume) {
  if (volume.empty()) throw PreconditionError("lvc: empty volume");
  double sum = 0.0;
  for (double v : volume) {
    if (!std::isfinite(v)) throw PreconditionError("lvc: non-finite value");
    sum += std::clamp(v, 0.0, 1.0);
  }
  return sum / static_cast<double>(volume.size());
}

QualityReport metrics(const ReconVolume& truth, const ReconVolume& estimate) {
  QualityReport r;
  r.ssim = ssim(truth.values, estimate.values);
  r.rmse = rmse(truth.values, estimate.values);
  r.psnr = psnr_from_rmse(r.rmse);
  r.lvc = lvc(estimate.values);
  return r;
}

std::vector<double> lvc_series(std::span<const ReconVolume> frames) {
  if (frames.empty()) throw PreconditionError("lvc_series: no frames");
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(lvc(f.values));
  return out;
}

}  // namespace ectwin
