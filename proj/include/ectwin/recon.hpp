#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ectwin/electrostatics.hpp"

namespace ectwin {

/// Normalized permittivity per lumen voxel (sensitivity column order). 1 is liquid, 0 gas.
struct ReconVolume {
  std::vector<double> values;
};

/// Plain back projection S^T c, no scaling.
ReconVolume lbp_raw(const SensitivityMatrix& s, const CapacitanceFrame& c);

struct LbpSettings {
  /// Relative weight of the frame-mean prior in voxels the sensor barely sees, as a
  /// fraction of the largest column sum of S.
  double regularization = 1e-2;
  bool clamp = true;
};

/// Back projection divided by the per-voxel column sums of S. A voxel whose column sum is
/// small compared to `regularization * max|colsum|` is pulled toward the frame mean, so
/// uniform frames come back exactly uniform and the map stays linear in c (before
/// clamping).
ReconVolume lbp(const SensitivityMatrix& s, const CapacitanceFrame& c, const LbpSettings& settings = {});

/// Largest singular value of S, from the eigenvalues of the smaller of S S^T and S^T S.
double estimate_sigma_max(const SensitivityMatrix& s);

struct LandweberSettings {
  int iterations = 200;
  /// Step size; defaults to 1 / sigma_max^2.
  std::optional<double> step;
  bool clamp = true;
  /// Starting image; defaults to lbp(s, c).
  std::optional<ReconVolume> initial;
};

/// g <- g + alpha S^T (c - S g). Throws StepSizeError when alpha is not in
/// (0, 2 / sigma_max^2), carrying the bound.
ReconVolume landweber(const SensitivityMatrix& s, const CapacitanceFrame& c, const LandweberSettings& settings = {});

struct QualityReport {
  double ssim = 0.0;
  double rmse = 0.0;
  double psnr = 0.0;  ///< dB, +inf when rmse is 0
  double lvc = 0.0;
};

/// Global SSIM (K1 = 0.01, K2 = 0.03, data range 1), RMSE, PSNR with peak 1, and the
/// liquid volumetric concentration of the estimate (mean of the estimate clamped to [0, 1]).
QualityReport metrics(const ReconVolume& truth, const ReconVolume& estimate);

double ssim(std::span<const double> x, std::span<const double> y);
double rmse(std::span<const double> x, std::span<const double> y);
double psnr_from_rmse(double rmse);
double lvc(std::span<const double> volume);

std::vector<double> lvc_series(std::span<const ReconVolume> frames);

}  // namespace ectwin
