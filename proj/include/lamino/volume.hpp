#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "lamino/vec3.hpp"

namespace lamino {

/// Shape and placement of a voxel grid. Voxel (i, j, k) has its centre at
/// center_mm + ((i - (nx-1)/2), (j - (ny-1)/2), (k - (nz-1)/2)) * voxel_size_mm.
struct GridSpec {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  double voxel_size_mm = 0.005;
  Vec3 center_mm{};

  std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  std::array<int, 3> dims() const { return {nx, ny, nz}; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  Vec3 voxel_center(int i, int j, int k) const;
  /// Physical half extent along each axis (to the outer voxel faces).
  Vec3 half_extent() const;
  /// Position of voxel (0,0,0)'s centre.
  Vec3 first_center() const;

  bool operator==(const GridSpec&) const = default;
};

void validate(const GridSpec& grid);

/// Scalar attenuation grid (1/mm), x-fastest storage.
class VoxelVolume {
 public:
  VoxelVolume() = default;
  explicit VoxelVolume(const GridSpec& grid, double fill = 0.0);
  VoxelVolume(const GridSpec& grid, std::vector<double> data);

  const GridSpec& grid() const { return grid_; }
  int nx() const { return grid_.nx; }
  int ny() const { return grid_.ny; }
  int nz() const { return grid_.nz; }
  double voxel_size_mm() const { return grid_.voxel_size_mm; }
  std::size_t size() const { return data_.size(); }

  double& at(int i, int j, int k) { return data_[grid_.index(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[grid_.index(i, j, k)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  bool operator==(const VoxelVolume&) const = default;

 private:
  GridSpec grid_{};
  std::vector<double> data_;
};

/// Row-major 2D image.
struct Image2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Image2D() = default;
  Image2D(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }

  bool operator==(const Image2D&) const = default;
};

enum class Axis { x, y, z };

/// Copy of one axis-aligned slice. Axis z: rows = y, cols = x.
/// Axis y: rows = z, cols = x. Axis x: rows = z, cols = y.
Image2D extract_slice(const VoxelVolume& vol, Axis axis, int index);
void insert_slice(VoxelVolume& vol, Axis axis, int index, const Image2D& slice);

/// Trilinear resampling of `src` onto `target` (zero outside src).
VoxelVolume resample(const VoxelVolume& src, const GridSpec& target);

/// Sub-grid copy: voxels [i0, i0+nx) x ... of `vol` as a new volume placed
/// at the matching physical position.
VoxelVolume crop(const VoxelVolume& vol, std::array<int, 3> offset, std::array<int, 3> size);

}  // namespace lamino
