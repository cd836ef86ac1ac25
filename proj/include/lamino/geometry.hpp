#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "lamino/vec3.hpp"

namespace lamino {

/// Acquisition description for a circular cone-beam orbit whose source sits
/// on a circle elevated by `tilt_angle_deg` above the specimen (xy) plane.
/// The object is fixed and the rotation axis is the object z-axis, so tilt 0
/// is ordinary circular CT.
///
/// Defaults are the laminography scanner parameters (19.32 / 201.63 mm,
/// 30 deg, 360 views, 0.0495 mm detector pitch, 0.005 mm voxels). Detector
/// dimensions are not part of that table and default to 256 x 256.
struct ScanGeometry {
  double source_to_center_mm = 19.32;
  double source_to_detector_mm = 201.63;
  double tilt_angle_deg = 30.0;
  int n_views = 360;
  int detector_rows = 256;
  int detector_cols = 256;
  double detector_pitch_mm = 0.0495;
  double voxel_size_mm = 0.005;
  // Carried verbatim; the projector does not use them.
  std::optional<double> focus_to_stage_mm = 16.35;
  std::optional<double> rotation_radius_mm = 10.32;

  double tilt_rad() const;
  double magnification() const { return source_to_detector_mm / source_to_center_mm; }
  /// Detector pitch demagnified to the rotation centre.
  double effective_pixel_mm() const { return detector_pitch_mm / magnification(); }

  double view_angle(int view) const;
  /// Unit vector from the rotation centre towards the source.
  Vec3 source_direction(int view) const;
  Vec3 source_position(int view) const;
  /// Tangential detector axis (column direction).
  Vec3 detector_u(int view) const;
  /// Detector axis carrying the tilt component (row direction).
  Vec3 detector_v(int view) const;
  /// Point where the central ray hits the detector.
  Vec3 detector_center(int view) const;

  double col_center() const { return 0.5 * (detector_cols - 1); }
  double row_center() const { return 0.5 * (detector_rows - 1); }
  /// Physical in-plane offset (u, v) in mm of a pixel from the central ray.
  std::array<double, 2> pixel_offset(double row, double col) const;

  std::size_t pixels_per_view() const {
    return static_cast<std::size_t>(detector_rows) * static_cast<std::size_t>(detector_cols);
  }
  std::size_t projection_size() const { return pixels_per_view() * static_cast<std::size_t>(n_views); }

  bool operator==(const ScanGeometry&) const = default;
};

/// Validates `params` and returns it as a usable geometry.
/// Throws Error(geometry) on violated invariants.
ScanGeometry make_geometry(const ScanGeometry& params);

void validate(const ScanGeometry& geom);

/// Same geometry with tilt forced to zero.
ScanGeometry ct_mode(const ScanGeometry& geom);

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

Vec3 source_position(const ScanGeometry& geom, int view);
Vec3 detector_pixel_position(const ScanGeometry& geom, int view, int row, int col);
Ray pixel_ray(const ScanGeometry& geom, int view, int row, int col);

/// Boolean mask over the discrete 3D frequency grid of an (nx, ny, nz) volume.
/// Storage is in FFT order (index 0 is DC, upper half are negative
/// frequencies), x fastest. A sample is inside when its angle to the
/// omega_z axis is below the half angle; DC is never inside.
class SpectralMask {
 public:
  SpectralMask(std::array<int, 3> dims, double half_angle_deg);

  const std::array<int, 3>& dims() const { return dims_; }
  double half_angle_deg() const { return half_angle_deg_; }
  bool at(int i, int j, int k) const {
    return bits_[(static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i] != 0;
  }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t masked_count() const;
  std::size_t size() const { return bits_.size(); }
  /// Masked share of all non-DC samples of the cube.
  double masked_fraction() const;
  /// Masked share of the non-DC samples inside the inscribed Nyquist ball
  /// |omega| <= 0.5, where every direction is sampled to the same radius.
  double band_limited_masked_fraction() const;

  /// Signed normalised frequency (cycles per voxel) of FFT index k on an axis of length n.
  static double frequency(int k, int n);

 private:
  std::array<int, 3> dims_;
  double half_angle_deg_;
  std::vector<std::uint8_t> bits_;
};

SpectralMask missing_cone_mask(std::array<int, 3> dims, double half_angle_deg);

}  // namespace lamino
