#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "lamino/geometry.hpp"
#include "lamino/volume.hpp"

namespace lamino::testing {

inline ScanGeometry small_geometry(int rows, int cols, int views, double tilt_deg = 30.0) {
  ScanGeometry g;
  g.detector_rows = rows;
  g.detector_cols = cols;
  g.n_views = views;
  g.tilt_angle_deg = tilt_deg;
  return make_geometry(g);
}

inline VoxelVolume random_volume(const GridSpec& grid, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  VoxelVolume v(grid);
  for (double& x : v.data()) x = u(rng);
  return v;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

inline double inner(std::span<const double> a, std::span<const double> b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(std::span<const double> a) {
  double m = 0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace lamino::testing
