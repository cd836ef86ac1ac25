#include "lamino/geometry.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "lamino/error.hpp"

namespace lamino {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void check_view(const ScanGeometry& g, int view) {
  if (view < 0 || view >= g.n_views) {
    std::ostringstream os;
    os << "view index " << view << " out of range [0, " << g.n_views << ")";
    fail(ErrorCategory::geometry, os.str());
  }
}

}  // namespace

double ScanGeometry::tilt_rad() const { return tilt_angle_deg * kDegToRad; }

double ScanGeometry::view_angle(int view) const {
  return 2.0 * std::numbers::pi * static_cast<double>(view) / static_cast<double>(n_views);
}

Vec3 ScanGeometry::source_direction(int view) const {
  const double b = view_angle(view);
  const double p = tilt_rad();
  return {std::cos(p) * std::cos(b), std::cos(p) * std::sin(b), std::sin(p)};
}

Vec3 ScanGeometry::source_position(int view) const {
  return source_direction(view) * source_to_center_mm;
}

Vec3 ScanGeometry::detector_u(int view) const {
  const double b = view_angle(view);
  return {-std::sin(b), std::cos(b), 0.0};
}

Vec3 ScanGeometry::detector_v(int view) const {
  const double b = view_angle(view);
  const double p = tilt_rad();
  return {-std::sin(p) * std::cos(b), -std::sin(p) * std::sin(b), std::cos(p)};
}

Vec3 ScanGeometry::detector_center(int view) const {
  return source_position(view) - source_direction(view) * source_to_detector_mm;
}

std::array<double, 2> ScanGeometry::pixel_offset(double row, double col) const {
  return {(col - col_center()) * detector_pitch_mm, (row - row_center()) * detector_pitch_mm};
}

void validate(const ScanGeometry& g) {
  auto bad = [](const std::string& m) { fail(ErrorCategory::geometry, m); };
  if (!(g.source_to_center_mm > 0.0)) bad("source_to_center_mm must be positive");
  if (!(g.source_to_detector_mm > g.source_to_center_mm))
    bad("source_to_detector_mm must exceed source_to_center_mm");
  if (!(g.tilt_angle_deg >= 0.0 && g.tilt_angle_deg < 90.0))
    bad("tilt_angle_deg must lie in [0, 90)");
  if (g.n_views < 1) bad("n_views must be at least 1");
  if (g.detector_rows < 1 || g.detector_cols < 1) bad("detector dimensions must be at least 1");
  if (!(g.detector_pitch_mm > 0.0)) bad("detector_pitch_mm must be positive");
  if (!(g.voxel_size_mm > 0.0)) bad("voxel_size_mm must be positive");
}

ScanGeometry make_geometry(const ScanGeometry& params) {
  validate(params);
  return params;
}

ScanGeometry ct_mode(const ScanGeometry& geom) {
  ScanGeometry g = geom;
  g.tilt_angle_deg = 0.0;
  return g;
}

Vec3 source_position(const ScanGeometry& geom, int view) {
  check_view(geom, view);
  return geom.source_position(view);
}

Vec3 detector_pixel_position(const ScanGeometry& geom, int view, int row, int col) {
  check_view(geom, view);
  if (row < 0 || row >= geom.detector_rows || col < 0 || col >= geom.detector_cols)
    fail(ErrorCategory::geometry, "detector pixel index out of range");
  const auto [u, v] = geom.pixel_offset(row, col);
  return geom.detector_center(view) + geom.detector_u(view) * u + geom.detector_v(view) * v;
}

Ray pixel_ray(const ScanGeometry& geom, int view, int row, int col) {
  const Vec3 p = detector_pixel_position(geom, view, row, col);
  const Vec3 s = geom.source_position(view);
  return {s, normalized(p - s)};
}

double SpectralMask::frequency(int k, int n) {
  const int signed_k = (k <= (n - 1) / 2) ? k : k - n;
  return static_cast<double>(signed_k) / static_cast<double>(n);
}

SpectralMask::SpectralMask(std::array<int, 3> dims, double half_angle_deg)
    : dims_(dims), half_angle_deg_(half_angle_deg) {
  for (int d : dims) require(d >= 2, ErrorCategory::shape, "spectral mask needs at least 2 samples per axis");
  require(half_angle_deg > 0.0 && half_angle_deg < 90.0, ErrorCategory::geometry,
          "missing-cone half angle must lie in (0, 90)");
  const double half = half_angle_deg * kDegToRad;
  bits_.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
  std::size_t idx = 0;
  for (int k = 0; k < dims[2]; ++k) {
    const double wz = std::abs(frequency(k, dims[2]));
    for (int j = 0; j < dims[1]; ++j) {
      const double wy = frequency(j, dims[1]);
      for (int i = 0; i < dims[0]; ++i, ++idx) {
        const double wx = frequency(i, dims[0]);
        const double wxy = std::hypot(wx, wy);
        if (wxy == 0.0 && wz == 0.0) continue;
        if (std::atan2(wxy, wz) < half) bits_[idx] = 1;
      }
    }
  }
}

std::size_t SpectralMask::masked_count() const {
  std::size_t n = 0;
  for (auto b : bits_) n += b;
  return n;
}

double SpectralMask::masked_fraction() const {
  return static_cast<double>(masked_count()) / static_cast<double>(size() - 1);
}

double SpectralMask::band_limited_masked_fraction() const {
  std::size_t in_band = 0, masked = 0, idx = 0;
  for (int k = 0; k < dims_[2]; ++k) {
    const double wz = frequency(k, dims_[2]);
    for (int j = 0; j < dims_[1]; ++j) {
      const double wy = frequency(j, dims_[1]);
      for (int i = 0; i < dims_[0]; ++i, ++idx) {
        const double wx = frequency(i, dims_[0]);
        const double r2 = wx * wx + wy * wy + wz * wz;
        if (r2 == 0.0 || r2 > 0.25) continue;
        ++in_band;
        masked += bits_[idx];
      }
    }
  }
  return in_band == 0 ? 0.0 : static_cast<double>(masked) / static_cast<double>(in_band);
}

SpectralMask missing_cone_mask(std::array<int, 3> dims, double half_angle_deg) {
  return SpectralMask(dims, half_angle_deg);
}

}  // namespace lamino
