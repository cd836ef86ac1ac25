#include "lamino/projector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "lamino/error.hpp"

namespace lamino {

ProjectionSet::ProjectionSet(const ScanGeometry& g, std::vector<double> d) : geometry(g), data(std::move(d)) {
  require(data.size() == g.projection_size(), ErrorCategory::shape, "projection payload does not match geometry");
}

SubsetProjections gather_views(const ProjectionSet& projs, std::span<const int> views) {
  SubsetProjections out;
  out.views.assign(views.begin(), views.end());
  const std::size_t ppv = projs.geometry.pixels_per_view();
  out.data.resize(views.size() * ppv);
  for (std::size_t i = 0; i < views.size(); ++i) {
    require(views[i] >= 0 && views[i] < projs.geometry.n_views, ErrorCategory::shape, "subset view out of range");
    auto src = projs.view(views[i]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * ppv));
  }
  return out;
}

namespace {

// Ray expressed in continuous voxel-index coordinates of one grid. Samples are
// taken at t = m * step (mm from the source) for every integer m whose sample
// lies inside the trilinear support (-1, n) on all axes.
struct IndexRay {
  Vec3 q0;
  Vec3 dq;
  double step;
  long m_begin;
  long m_end;  // exclusive
};

IndexRay make_index_ray(const Ray& ray, const GridSpec& g) {
  const double inv = 1.0 / g.voxel_size_mm;
  IndexRay r;
  r.q0 = (ray.origin - g.first_center()) * inv;
  r.dq = ray.direction * inv;
  r.step = 0.5 * g.voxel_size_mm;
  double t_in = -std::numeric_limits<double>::infinity();
  double t_out = std::numeric_limits<double>::infinity();
  const double q0[3] = {r.q0.x, r.q0.y, r.q0.z};
  const double dq[3] = {r.dq.x, r.dq.y, r.dq.z};
  const int n[3] = {g.nx, g.ny, g.nz};
  for (int a = 0; a < 3; ++a) {
    const double lo = -1.0, hi = static_cast<double>(n[a]);
    if (dq[a] == 0.0) {
      if (q0[a] <= lo || q0[a] >= hi) {
        r.m_begin = r.m_end = 0;
        return r;
      }
      continue;
    }
    double t0 = (lo - q0[a]) / dq[a];
    double t1 = (hi - q0[a]) / dq[a];
    if (t0 > t1) std::swap(t0, t1);
    t_in = std::max(t_in, t0);
    t_out = std::min(t_out, t1);
  }
  if (!(t_out > t_in)) {
    r.m_begin = r.m_end = 0;
    return r;
  }
  r.m_begin = static_cast<long>(std::floor(t_in / r.step)) + 1;
  r.m_end = static_cast<long>(std::ceil(t_out / r.step));
  if (r.m_end < r.m_begin) r.m_end = r.m_begin;
  return r;
}

// Calls fn(voxel_index, weight) for every in-grid trilinear corner of every
// sample on the ray; weights exclude the step length.
template <typename Fn>
inline void walk_ray(const IndexRay& r, const GridSpec& g, Fn&& fn) {
  const long sx = 1, sy = g.nx, sz = static_cast<long>(g.nx) * g.ny;
  for (long m = r.m_begin; m < r.m_end; ++m) {
    const double t = static_cast<double>(m) * r.step;
    const double qx = r.q0.x + t * r.dq.x;
    const double qy = r.q0.y + t * r.dq.y;
    const double qz = r.q0.z + t * r.dq.z;
    const double fx = std::floor(qx), fy = std::floor(qy), fz = std::floor(qz);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
    const double ax = qx - fx, ay = qy - fy, az = qz - fz;
    const double wx[2] = {1.0 - ax, ax}, wy[2] = {1.0 - ay, ay}, wz[2] = {1.0 - az, az};
    const long base = x0 * sx + y0 * sy + z0 * sz;
    if (x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < g.nx && y0 + 1 < g.ny && z0 + 1 < g.nz) {
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy) {
          const double wyz = wy[dy] * wz[dz];
          const long row = base + dy * sy + dz * sz;
          fn(row, wx[0] * wyz);
          fn(row + 1, wx[1] * wyz);
        }
    } else {
      for (int dz = 0; dz < 2; ++dz) {
        const int z = z0 + dz;
        if (z < 0 || z >= g.nz) continue;
        for (int dy = 0; dy < 2; ++dy) {
          const int y = y0 + dy;
          if (y < 0 || y >= g.ny) continue;
          for (int dx = 0; dx < 2; ++dx) {
            const int x = x0 + dx;
            if (x < 0 || x >= g.nx) continue;
            fn(base + dx * sx + dy * sy + dz * sz, wx[dx] * wy[dy] * wz[dz]);
          }
        }
      }
    }
  }
}

void check_views(const ScanGeometry& geom, std::span<const int> views) {
  for (int v : views)
    require(v >= 0 && v < geom.n_views, ErrorCategory::shape, "view index out of range");
}

void check_volume(const VoxelVolume& vol) {
  for (double x : vol.data())
    if (!std::isfinite(x)) fail(ErrorCategory::numeric, "volume contains non-finite values");
}

// Per-view detector frame, so rays are built without re-validating indices.
struct ViewFrame {
  Vec3 source;
  Vec3 center;
  Vec3 u;
  Vec3 v;
};

ViewFrame view_frame(const ScanGeometry& g, int view) {
  return {g.source_position(view), g.detector_center(view), g.detector_u(view), g.detector_v(view)};
}

Ray frame_ray(const ScanGeometry& g, const ViewFrame& f, int row, int col) {
  const auto [du, dv] = g.pixel_offset(row, col);
  const Vec3 p = f.center + f.u * du + f.v * dv;
  return {f.source, normalized(p - f.source)};
}

void project_one_view(const VoxelVolume& vol, const ScanGeometry& geom, int view, double* out) {
  const GridSpec& g = vol.grid();
  const double* x = vol.data().data();
  const ViewFrame f = view_frame(geom, view);
  for (int r = 0; r < geom.detector_rows; ++r)
    for (int c = 0; c < geom.detector_cols; ++c) {
      const IndexRay ray = make_index_ray(frame_ray(geom, f, r, c), g);
      double acc = 0.0;
      walk_ray(ray, g, [&](long idx, double w) { acc += w * x[idx]; });
      out[static_cast<std::size_t>(r) * geom.detector_cols + c] = acc * ray.step;
    }
}

void backproject_one_view(const double* img, const ScanGeometry& geom, int view, const GridSpec& g, double* vol) {
  const ViewFrame f = view_frame(geom, view);
  for (int r = 0; r < geom.detector_rows; ++r)
    for (int c = 0; c < geom.detector_cols; ++c) {
      const double y = img[static_cast<std::size_t>(r) * geom.detector_cols + c];
      if (y == 0.0) continue;
      const IndexRay ray = make_index_ray(frame_ray(geom, f, r, c), g);
      const double s = y * ray.step;
      walk_ray(ray, g, [&](long idx, double w) { vol[idx] += w * s; });
    }
}

void check_unit_consistency(const ScanGeometry& geom, const GridSpec& grid) {
  validate(geom);
  validate(grid);
  // The volume must sit strictly inside the source orbit.
  const Vec3 he = grid.half_extent();
  const double reach = norm(grid.center_mm) + norm(he) + grid.voxel_size_mm;
  require(reach < geom.source_to_center_mm, ErrorCategory::geometry,
          "volume extent reaches the source orbit; check voxel size units (mm)");
}

// Fixed number of accumulation chunks so the summation order never depends on
// the thread count.
constexpr int kBackprojectChunks = 8;

}  // namespace

std::vector<double> forward_project_views(const VoxelVolume& vol, const ScanGeometry& geom, std::span<const int> views) {
  check_unit_consistency(geom, vol.grid());
  check_views(geom, views);
  check_volume(vol);
  const std::size_t ppv = geom.pixels_per_view();
  std::vector<double> out(views.size() * ppv, 0.0);
  const long n = static_cast<long>(views.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) project_one_view(vol, geom, views[i], out.data() + i * ppv);
  return out;
}

ProjectionSet forward_project(const VoxelVolume& vol, const ScanGeometry& geom) {
  std::vector<int> all(geom.n_views);
  for (int v = 0; v < geom.n_views; ++v) all[v] = v;
  return ProjectionSet(geom, forward_project_views(vol, geom, all));
}

VoxelVolume back_project_views(std::span<const double> data, const ScanGeometry& geom, std::span<const int> views,
                               const GridSpec& grid) {
  check_unit_consistency(geom, grid);
  check_views(geom, views);
  const std::size_t ppv = geom.pixels_per_view();
  require(data.size() == views.size() * ppv, ErrorCategory::shape, "projection data does not match view subset");
  VoxelVolume out(grid);
  const long n = static_cast<long>(views.size());
  const int chunks = static_cast<int>(std::min<long>(kBackprojectChunks, std::max<long>(n, 1)));
  if (chunks <= 1) {
    for (long i = 0; i < n; ++i) backproject_one_view(data.data() + i * ppv, geom, views[i], grid, out.data().data());
    return out;
  }
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(grid.size(), 0.0));
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < chunks; ++c) {
    const long lo = n * c / chunks, hi = n * (c + 1) / chunks;
    for (long i = lo; i < hi; ++i) backproject_one_view(data.data() + i * ppv, geom, views[i], grid, partial[c].data());
  }
  auto dst = out.data();
  for (int c = 0; c < chunks; ++c)
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += partial[c][k];
  return out;
}

VoxelVolume back_project(const ProjectionSet& projs, const GridSpec& grid) {
  const ScanGeometry& geom = projs.geometry;
  require(projs.data.size() == geom.projection_size(), ErrorCategory::shape, "projection payload does not match geometry");
  std::vector<int> all(geom.n_views);
  for (int v = 0; v < geom.n_views; ++v) all[v] = v;
  return back_project_views(projs.data, geom, all, grid);
}

ScanGeometry fit_detector(const ScanGeometry& geom, const GridSpec& grid, int margin_px) {
  validate(geom);
  validate(grid);
  const Vec3 he = grid.half_extent() + Vec3{1, 1, 1} * (0.5 * grid.voxel_size_mm);
  double umax = 0.0, vmax = 0.0;
  for (int view = 0; view < geom.n_views; ++view) {
    const Vec3 s = geom.source_direction(view), u = geom.detector_u(view), v = geom.detector_v(view);
    for (int corner = 0; corner < 8; ++corner) {
      const Vec3 p = grid.center_mm + Vec3{corner & 1 ? he.x : -he.x, corner & 2 ? he.y : -he.y, corner & 4 ? he.z : -he.z};
      const double depth = geom.source_to_center_mm - dot(p, s);
      require(depth > 0.0, ErrorCategory::geometry, "volume corner lies behind the source");
      umax = std::max(umax, std::abs(geom.source_to_detector_mm * dot(p, u) / depth));
      vmax = std::max(vmax, std::abs(geom.source_to_detector_mm * dot(p, v) / depth));
    }
  }
  ScanGeometry out = geom;
  out.detector_cols = 2 * (static_cast<int>(std::ceil(umax / geom.detector_pitch_mm)) + margin_px) + 1;
  out.detector_rows = 2 * (static_cast<int>(std::ceil(vmax / geom.detector_pitch_mm)) + margin_px) + 1;
  return out;
}

void validate(const NoiseModel& m) {
  require(m.sigma >= 0.0, ErrorCategory::config, "noise sigma must be non-negative");
  require(m.i0 > 0.0, ErrorCategory::config, "photon count I0 must be positive");
}

ProjectionSet apply_noise(const ProjectionSet& projs, const NoiseModel& model) {
  validate(model);
  ProjectionSet out = projs;
  std::mt19937_64 rng(model.rng_seed);
  switch (model.kind) {
    case NoiseKind::none:
      break;
    case NoiseKind::gaussian: {
      std::normal_distribution<double> n(0.0, 1.0);
      for (double& p : out.data) p += model.sigma * n(rng);
      break;
    }
    case NoiseKind::poisson_transmission: {
      for (double& p : out.data) {
        std::poisson_distribution<long long> counts(model.i0 * std::exp(-p));
        const double c = std::max<long long>(1, counts(rng));
        p = -std::log(c / model.i0);
      }
      break;
    }
  }
  return out;
}

}  // namespace lamino
