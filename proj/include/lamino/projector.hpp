#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lamino/geometry.hpp"
#include "lamino/volume.hpp"

namespace lamino {

/// View-major stack of detector images in line-integral units (mm * 1/mm).
struct ProjectionSet {
  ScanGeometry geometry;
  std::vector<double> data;

  ProjectionSet() = default;
  explicit ProjectionSet(const ScanGeometry& g, double fill = 0.0) : geometry(g), data(g.projection_size(), fill) {}
  ProjectionSet(const ScanGeometry& g, std::vector<double> d);

  double& at(int view, int row, int col) { return data[offset(view) + static_cast<std::size_t>(row) * geometry.detector_cols + col]; }
  double at(int view, int row, int col) const {
    return data[offset(view) + static_cast<std::size_t>(row) * geometry.detector_cols + col];
  }
  std::size_t offset(int view) const { return static_cast<std::size_t>(view) * geometry.pixels_per_view(); }
  std::span<double> view(int v) { return {data.data() + offset(v), geometry.pixels_per_view()}; }
  std::span<const double> view(int v) const { return {data.data() + offset(v), geometry.pixels_per_view()}; }
};

/// Detector images for a subset of views, in the order of `views`.
struct SubsetProjections {
  std::vector<int> views;
  std::vector<double> data;
};

SubsetProjections gather_views(const ProjectionSet& projs, std::span<const int> views);

/// Line integrals of `vol` along every pixel ray: trilinear samples at fixed
/// steps of voxel_size/2 measured from the source, times the step length.
ProjectionSet forward_project(const VoxelVolume& vol, const ScanGeometry& geom);

/// Forward projection restricted to `views`; result is views.size() images.
std::vector<double> forward_project_views(const VoxelVolume& vol, const ScanGeometry& geom, std::span<const int> views);

/// Exact transpose of forward_project.
VoxelVolume back_project(const ProjectionSet& projs, const GridSpec& grid);

/// Transpose of forward_project_views; `data` holds views.size() images.
VoxelVolume back_project_views(std::span<const double> data, const ScanGeometry& geom, std::span<const int> views,
                               const GridSpec& grid);

/// Detector size (rows, cols) that covers the whole of `grid` in every view
/// plus `margin_px` pixels on each side. Returns a copy of geom with those dims.
ScanGeometry fit_detector(const ScanGeometry& geom, const GridSpec& grid, int margin_px = 2);

enum class NoiseKind { none, gaussian, poisson_transmission };

struct NoiseModel {
  NoiseKind kind = NoiseKind::none;
  double sigma = 0.0;      // gaussian, line-integral units
  double i0 = 1.0e5;       // poisson-transmission photon count
  std::uint64_t rng_seed = 0;
};

void validate(const NoiseModel& model);

/// Adds measurement noise. Poisson-transmission simulates counts
/// ~ Poisson(I0 exp(-p)), clamps them to >= 1 and returns -ln(counts / I0).
ProjectionSet apply_noise(const ProjectionSet& projs, const NoiseModel& model);

}  // namespace lamino
