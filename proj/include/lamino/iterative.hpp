#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lamino/projector.hpp"
#include "lamino/volume.hpp"

namespace lamino {

struct SartConfig {
  int n_iterations = 10;
  int n_subsets = 10;
  double relaxation_lambda = 0.5;
  bool nonnegativity = true;
  double epsilon_norm = 1e-8;
};

void validate(const SartConfig& cfg);

/// Interleaved ordered subsets: subset s holds views s, s + n, s + 2n, ...
std::vector<std::vector<int>> ordered_subsets(int n_views, int n_subsets);

/// N = A_s^T 1 for the views of one subset, floored at epsilon_norm.
VoxelVolume compute_sart_normalizer(const ScanGeometry& geom, const GridSpec& grid, std::span<const int> subset,
                                    double epsilon_norm = 1e-8);

/// Ray lengths through `grid` for the views of one subset (A_s 1), floored at epsilon_norm.
std::vector<double> compute_ray_lengths(const ScanGeometry& geom, const GridSpec& grid, std::span<const int> subset,
                                        double epsilon_norm = 1e-8);

/// x + lambda N^-1 A_s^T R^-1 (y_s - A_s x), then clamped at zero when
/// nonnegativity is on. N holds column sums and R ray lengths; both are
/// computed when not supplied.
VoxelVolume os_sart_update(const VoxelVolume& x, const SubsetProjections& ys, const ScanGeometry& geom,
                           const SartConfig& cfg, const VoxelVolume* normalizer = nullptr,
                           const std::vector<double>* ray_lengths = nullptr);

/// OS-SART from x = 0, cycling subsets in order for n_iterations passes.
VoxelVolume sart_reconstruct(const ProjectionSet& y, const GridSpec& grid, const SartConfig& cfg);

/// Scales CL projections so their reconstruction matches CT: y_cl * (mean_ct / mean_cl).
ProjectionSet calibrate_intensity(const ProjectionSet& y_cl, double mean_ct, double mean_cl);

struct IndexBox {
  std::array<int, 3> lo{};  // inclusive
  std::array<int, 3> hi{};  // exclusive

  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
};

double region_mean(const VoxelVolume& vol, const IndexBox& box);

/// Index boxes (in the calibration grid) over which CT and CL
/// reconstructions are averaged before calibration.
struct CalibrationRegions {
  IndexBox ct_region;
  IndexBox cl_region;
};

/// Central half-width box spanning the full z range of `grid`, used for both
/// modalities. Full-height boxes average over omega_z = 0 content, which the
/// laminographic orbit measures.
CalibrationRegions default_calibration_regions(const GridSpec& grid);

enum class SubsetSchedule { interleave_cl_ct, ct_only, cl_only };

struct RoiBox {
  Vec3 lo_mm;
  Vec3 hi_mm;
};

struct FusionConfig {
  int n_iterations = 4;
  int n_subsets = 10;
  double relaxation_lambda = 0.5;
  int coarse_factor = 4;
  /// The calibration reconstructions use a grid stretched this many times in
  /// z, so that missing-cone streaks leaving a flat object stay inside the
  /// averaged columns.
  int calibration_z_extension = 4;
  /// Fine-resolution grid covering the whole object; the fine voxel size is
  /// taken from here.
  GridSpec object_grid{};
  /// Region reconstructed on the fine grid. Empty (hi <= lo) means the whole object.
  RoiBox roi{};
  SubsetSchedule subset_schedule = SubsetSchedule::interleave_cl_ct;
  bool nonnegativity = true;
  double epsilon_norm = 1e-8;
  bool calibrate = true;

  SartConfig sart() const { return {n_iterations, n_subsets, relaxation_lambda, nonnegativity, epsilon_norm}; }
};

void validate(const FusionConfig& cfg);

/// Grids used by the fusion: the fine roi grid (x_H) and the coarse grid
/// over the full object (x_G), plus which coarse voxels lie inside the roi.
struct FusionGrids {
  GridSpec fine;
  GridSpec coarse;
  std::vector<std::uint8_t> coarse_in_roi;
  /// Fine voxels over the central half of the object in x and y, extended in
  /// z by calibration_z_extension, same centre. Fine z sampling keeps the
  /// CT region mean from aliasing the copper layers.
  GridSpec calibration;
  /// Offset of the fine grid inside object_grid, in fine voxels.
  std::array<int, 3> fine_offset{};
};

FusionGrids make_fusion_grids(const FusionConfig& cfg);

struct FusionResult {
  VoxelVolume x_fus;     // fine roi grid; also the training target
  VoxelVolume x_coarse;  // coarse full-object grid
  double mean_ct = 1.0;
  double mean_cl = 1.0;
  double calibration_ratio = 1.0;
};

/// Dual-scale CT/CL fusion. Calibrates the CL projections from FDK region
/// means on grids.calibration, then alternates OS-SART-style updates of the fine roi grid and
/// the coarse object grid against CL and CT subsets. The residual of every
/// update is taken against the sum of both grids' projections; coarse voxels
/// inside the roi are held at zero.
FusionResult dual_scale_fuse(const ProjectionSet& y_ct, const ProjectionSet& y_cl_raw, const ScanGeometry& geom_ct,
                             const ScanGeometry& geom_cl, const CalibrationRegions& regions, const FusionConfig& cfg);

std::string to_string(SubsetSchedule s);
SubsetSchedule parse_subset_schedule(const std::string& s);

}  // namespace lamino
