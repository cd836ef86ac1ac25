#include "lamino/volume.hpp"

#include <cmath>

#include "lamino/error.hpp"

namespace lamino {

Vec3 GridSpec::first_center() const {
  return center_mm - Vec3{0.5 * (nx - 1), 0.5 * (ny - 1), 0.5 * (nz - 1)} * voxel_size_mm;
}

Vec3 GridSpec::voxel_center(int i, int j, int k) const {
  return first_center() + Vec3{double(i), double(j), double(k)} * voxel_size_mm;
}

Vec3 GridSpec::half_extent() const {
  return Vec3{double(nx), double(ny), double(nz)} * (0.5 * voxel_size_mm);
}

void validate(const GridSpec& g) {
  require(g.nx > 0 && g.ny > 0 && g.nz > 0, ErrorCategory::shape, "grid dimensions must be positive");
  require(g.voxel_size_mm > 0.0 && std::isfinite(g.voxel_size_mm), ErrorCategory::geometry,
          "voxel size must be positive");
}

VoxelVolume::VoxelVolume(const GridSpec& grid, double fill) : grid_(grid) {
  validate(grid);
  data_.assign(grid.size(), fill);
}

VoxelVolume::VoxelVolume(const GridSpec& grid, std::vector<double> data)
    : grid_(grid), data_(std::move(data)) {
  validate(grid);
  require(data_.size() == grid.size(), ErrorCategory::shape, "volume payload does not match grid size");
}

namespace {

int axis_len(const GridSpec& g, Axis a) { return a == Axis::x ? g.nx : a == Axis::y ? g.ny : g.nz; }

}  // namespace

Image2D extract_slice(const VoxelVolume& vol, Axis axis, int index) {
  const GridSpec& g = vol.grid();
  require(index >= 0 && index < axis_len(g, axis), ErrorCategory::shape, "slice index out of range");
  switch (axis) {
    case Axis::z: {
      Image2D img(g.ny, g.nx);
      for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) img.at(j, i) = vol.at(i, j, index);
      return img;
    }
    case Axis::y: {
      Image2D img(g.nz, g.nx);
      for (int k = 0; k < g.nz; ++k)
        for (int i = 0; i < g.nx; ++i) img.at(k, i) = vol.at(i, index, k);
      return img;
    }
    case Axis::x: {
      Image2D img(g.nz, g.ny);
      for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j) img.at(k, j) = vol.at(index, j, k);
      return img;
    }
  }
  return {};
}

void insert_slice(VoxelVolume& vol, Axis axis, int index, const Image2D& slice) {
  const GridSpec& g = vol.grid();
  require(index >= 0 && index < axis_len(g, axis), ErrorCategory::shape, "slice index out of range");
  switch (axis) {
    case Axis::z:
      require(slice.rows == g.ny && slice.cols == g.nx, ErrorCategory::shape, "slice shape mismatch");
      for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) vol.at(i, j, index) = slice.at(j, i);
      break;
    case Axis::y:
      require(slice.rows == g.nz && slice.cols == g.nx, ErrorCategory::shape, "slice shape mismatch");
      for (int k = 0; k < g.nz; ++k)
        for (int i = 0; i < g.nx; ++i) vol.at(i, index, k) = slice.at(k, i);
      break;
    case Axis::x:
      require(slice.rows == g.nz && slice.cols == g.ny, ErrorCategory::shape, "slice shape mismatch");
      for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j) vol.at(index, j, k) = slice.at(k, j);
      break;
  }
}

VoxelVolume resample(const VoxelVolume& src, const GridSpec& target) {
  VoxelVolume out(target);
  const GridSpec& s = src.grid();
  const Vec3 origin = s.first_center();
  const double inv = 1.0 / s.voxel_size_mm;
  auto sample = [&](int i, int j, int k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= s.nx || j >= s.ny || k >= s.nz) return 0.0;
    return src.at(i, j, k);
  };
  for (int k = 0; k < target.nz; ++k)
    for (int j = 0; j < target.ny; ++j)
      for (int i = 0; i < target.nx; ++i) {
        const Vec3 q = (target.voxel_center(i, j, k) - origin) * inv;
        const double fx = std::floor(q.x), fy = std::floor(q.y), fz = std::floor(q.z);
        const int x0 = int(fx), y0 = int(fy), z0 = int(fz);
        const double ax = q.x - fx, ay = q.y - fy, az = q.z - fz;
        double v = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) * (dz ? az : 1 - az);
              if (w != 0.0) v += w * sample(x0 + dx, y0 + dy, z0 + dz);
            }
        out.at(i, j, k) = v;
      }
  return out;
}

VoxelVolume crop(const VoxelVolume& vol, std::array<int, 3> offset, std::array<int, 3> size) {
  const GridSpec& g = vol.grid();
  for (int a = 0; a < 3; ++a)
    require(offset[a] >= 0 && size[a] > 0 && offset[a] + size[a] <= g.dims()[a], ErrorCategory::shape,
            "crop box outside volume");
  GridSpec sub = g;
  sub.nx = size[0];
  sub.ny = size[1];
  sub.nz = size[2];
  const Vec3 lo = g.voxel_center(offset[0], offset[1], offset[2]);
  const Vec3 hi = g.voxel_center(offset[0] + size[0] - 1, offset[1] + size[1] - 1, offset[2] + size[2] - 1);
  sub.center_mm = (lo + hi) * 0.5;
  VoxelVolume out(sub);
  for (int k = 0; k < size[2]; ++k)
    for (int j = 0; j < size[1]; ++j)
      for (int i = 0; i < size[0]; ++i) out.at(i, j, k) = vol.at(offset[0] + i, offset[1] + j, offset[2] + k);
  return out;
}

}  // namespace lamino
