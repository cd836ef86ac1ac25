#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lamino/geometry.hpp"
#include "lamino/volume.hpp"

namespace lamino {

/// Image quality figures for one reconstruction against a reference.
/// missing_cone_energy_fraction is NaN when the report is for a 2D image.
struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double cc = 0.0;
  double bdm_percent = 0.0;
  double missing_cone_energy_fraction = 0.0;
};

double mse(std::span<const double> a, std::span<const double> b);

/// 10 log10(range^2 / mse). Range defaults to max - min of `ref`.
/// Returns +infinity when the images are identical.
double psnr(std::span<const double> a, std::span<const double> ref, std::optional<double> data_range = std::nullopt);

/// Mean SSIM over all valid positions of an 11x11 Gaussian window
/// (sigma 1.5, K1 0.01, K2 0.03). Without an explicit range the joint
/// max - min of both images is used, which keeps ssim(a, b) == ssim(b, a).
double ssim(const Image2D& a, const Image2D& b, std::optional<double> data_range = std::nullopt);

double pearson_cc(std::span<const double> a, std::span<const double> b);

struct OtsuThreshold {
  double tau = 0.0;  // upper edge of the last class-0 bin
  int bin = 0;       // class 0 holds bins [0, bin]
  double lo = 0.0;
  double hi = 0.0;
  bool constant = false;
};

/// Otsu threshold on a 256-bin histogram over the image's own [min, max].
/// Ties go to the lower bin. A constant image puts every pixel in class 0.
OtsuThreshold otsu_threshold(std::span<const double> img);

/// Histogram bin (0..255) of `v` for the range in `t`.
int otsu_bin(const OtsuThreshold& t, double v);

/// 1 where the pixel's bin is above the Otsu split, else 0.
std::vector<std::uint8_t> binarize(std::span<const double> img);

/// Percentage of pixels whose independent Otsu binarisations agree.
double bdm(std::span<const double> rec, std::span<const double> ref);

/// Fraction of non-DC spectral energy of `vol` that falls inside `mask`.
double missing_cone_energy(const VoxelVolume& vol, const SpectralMask& mask);

/// 2D report: cone fraction is NaN.
MetricReport evaluate_image(const Image2D& rec, const Image2D& ref);

/// Volume report: PSNR/MSE/CC/BDM over all voxels, SSIM averaged over z
/// slices, cone fraction of `rec` for the given half angle (0 for a CT orbit).
MetricReport evaluate_volume(const VoxelVolume& rec, const VoxelVolume& ref, double cone_half_angle_deg);

/// CSV header and row: method, psnr, ssim, mse, bdm, cc, cone_fraction.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& method, const MetricReport& r);

}  // namespace lamino
