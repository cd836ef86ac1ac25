#include "lamino/iterative.hpp"

#include <algorithm>
#include <cmath>

#include "lamino/error.hpp"
#include "lamino/fdk.hpp"

namespace lamino {

void validate(const SartConfig& cfg) {
  require(cfg.n_iterations >= 0, ErrorCategory::config, "n_iterations must be non-negative");
  require(cfg.n_subsets >= 1, ErrorCategory::config, "n_subsets must be at least 1");
  require(cfg.relaxation_lambda > 0.0 && cfg.relaxation_lambda < 2.0, ErrorCategory::config,
          "relaxation_lambda must lie in (0, 2)");
  require(cfg.epsilon_norm > 0.0, ErrorCategory::config, "epsilon_norm must be positive");
}

std::vector<std::vector<int>> ordered_subsets(int n_views, int n_subsets) {
  require(n_subsets >= 1 && n_views >= 1, ErrorCategory::config, "need at least one view and one subset");
  require(n_views % n_subsets == 0, ErrorCategory::config, "n_subsets must divide n_views");
  std::vector<std::vector<int>> subsets(n_subsets);
  for (int v = 0; v < n_views; ++v) subsets[v % n_subsets].push_back(v);
  return subsets;
}

VoxelVolume compute_sart_normalizer(const ScanGeometry& geom, const GridSpec& grid, std::span<const int> subset,
                                    double epsilon_norm) {
  require(!subset.empty(), ErrorCategory::config, "normalizer subset must not be empty");
  const std::vector<double> ones(subset.size() * geom.pixels_per_view(), 1.0);
  VoxelVolume n = back_project_views(ones, geom, subset, grid);
  for (double& v : n.data()) v = std::max(v, epsilon_norm);
  return n;
}

std::vector<double> compute_ray_lengths(const ScanGeometry& geom, const GridSpec& grid, std::span<const int> subset,
                                        double epsilon_norm) {
  require(!subset.empty(), ErrorCategory::config, "ray-length subset must not be empty");
  std::vector<double> len = forward_project_views(VoxelVolume(grid, 1.0), geom, subset);
  for (double& v : len) v = std::max(v, epsilon_norm);
  return len;
}

namespace {

void clamp_nonnegative(VoxelVolume& x) {
  for (double& v : x.data()) v = std::max(v, 0.0);
}

// x += lambda * correction / N
void apply_correction(VoxelVolume& x, const VoxelVolume& correction, const VoxelVolume& normalizer, double lambda) {
  auto xd = x.data();
  auto cd = correction.data();
  auto nd = normalizer.data();
  for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += lambda * cd[i] / nd[i];
}

}  // namespace

VoxelVolume os_sart_update(const VoxelVolume& x, const SubsetProjections& ys, const ScanGeometry& geom,
                           const SartConfig& cfg, const VoxelVolume* normalizer,
                           const std::vector<double>* ray_lengths) {
  validate(cfg);
  require(ys.data.size() == ys.views.size() * geom.pixels_per_view(), ErrorCategory::shape,
          "subset data does not match geometry");
  std::vector<double> local_len;
  if (ray_lengths == nullptr) {
    local_len = compute_ray_lengths(geom, x.grid(), ys.views, cfg.epsilon_norm);
    ray_lengths = &local_len;
  }
  require(ray_lengths->size() == ys.data.size(), ErrorCategory::shape, "ray lengths do not match subset data");
  std::vector<double> residual = forward_project_views(x, geom, ys.views);
  for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = (ys.data[i] - residual[i]) / (*ray_lengths)[i];
  const VoxelVolume correction = back_project_views(residual, geom, ys.views, x.grid());
  VoxelVolume local_norm;
  if (normalizer == nullptr) {
    local_norm = compute_sart_normalizer(geom, x.grid(), ys.views, cfg.epsilon_norm);
    normalizer = &local_norm;
  }
  require(normalizer->grid() == x.grid(), ErrorCategory::shape, "normalizer grid does not match volume");
  VoxelVolume out = x;
  apply_correction(out, correction, *normalizer, cfg.relaxation_lambda);
  if (cfg.nonnegativity) clamp_nonnegative(out);
  return out;
}

VoxelVolume sart_reconstruct(const ProjectionSet& y, const GridSpec& grid, const SartConfig& cfg) {
  validate(cfg);
  const ScanGeometry& geom = y.geometry;
  VoxelVolume x(grid);
  if (cfg.n_iterations == 0) return x;
  const auto subsets = ordered_subsets(geom.n_views, cfg.n_subsets);
  std::vector<VoxelVolume> norms;
  std::vector<std::vector<double>> lengths;
  std::vector<SubsetProjections> data;
  for (const auto& s : subsets) {
    norms.push_back(compute_sart_normalizer(geom, grid, s, cfg.epsilon_norm));
    lengths.push_back(compute_ray_lengths(geom, grid, s, cfg.epsilon_norm));
    data.push_back(gather_views(y, s));
  }
  for (int it = 0; it < cfg.n_iterations; ++it)
    for (std::size_t s = 0; s < subsets.size(); ++s)
      x = os_sart_update(x, data[s], geom, cfg, &norms[s], &lengths[s]);
  return x;
}

ProjectionSet calibrate_intensity(const ProjectionSet& y_cl, double mean_ct, double mean_cl) {
  if (!(mean_cl > 0.0) || !std::isfinite(mean_ct) || !std::isfinite(mean_cl))
    fail(ErrorCategory::calibration, "CL region mean must be positive and finite");
  ProjectionSet out = y_cl;
  const double ratio = mean_ct / mean_cl;
  for (double& v : out.data) v *= ratio;
  return out;
}

double region_mean(const VoxelVolume& vol, const IndexBox& box) {
  require(!box.empty(), ErrorCategory::calibration, "calibration region is empty");
  const auto dims = vol.grid().dims();
  for (int a = 0; a < 3; ++a)
    require(box.lo[a] >= 0 && box.hi[a] <= dims[a], ErrorCategory::calibration, "calibration region outside grid");
  double sum = 0.0;
  long count = 0;
  for (int k = box.lo[2]; k < box.hi[2]; ++k)
    for (int j = box.lo[1]; j < box.hi[1]; ++j)
      for (int i = box.lo[0]; i < box.hi[0]; ++i) {
        sum += vol.at(i, j, k);
        ++count;
      }
  return sum / static_cast<double>(count);
}

CalibrationRegions default_calibration_regions(const GridSpec& g) {
  IndexBox b;
  b.lo = {g.nx / 4, g.ny / 4, 0};
  b.hi = {std::max(g.nx / 4 + 1, 3 * g.nx / 4), std::max(g.ny / 4 + 1, 3 * g.ny / 4), g.nz};
  return {b, b};
}

void validate(const FusionConfig& cfg) {
  validate(cfg.sart());
  validate(cfg.object_grid);
  require(cfg.coarse_factor >= 1, ErrorCategory::config, "coarse_factor must be at least 1");
  require(cfg.calibration_z_extension >= 1, ErrorCategory::config, "calibration_z_extension must be at least 1");
}

std::string to_string(SubsetSchedule s) {
  switch (s) {
    case SubsetSchedule::interleave_cl_ct: return "interleave-cl-ct";
    case SubsetSchedule::ct_only: return "ct-only";
    case SubsetSchedule::cl_only: return "cl-only";
  }
  return "?";
}

SubsetSchedule parse_subset_schedule(const std::string& s) {
  if (s == "interleave-cl-ct") return SubsetSchedule::interleave_cl_ct;
  if (s == "ct-only") return SubsetSchedule::ct_only;
  if (s == "cl-only") return SubsetSchedule::cl_only;
  fail(ErrorCategory::config, "unknown subset_schedule '" + s + "'");
}

FusionGrids make_fusion_grids(const FusionConfig& cfg) {
  validate(cfg);
  const GridSpec& obj = cfg.object_grid;
  const double vs = obj.voxel_size_mm;
  const Vec3 face = obj.center_mm - obj.half_extent();
  const std::array<int, 3> n = obj.dims();
  const double lo_mm[3] = {cfg.roi.lo_mm.x, cfg.roi.lo_mm.y, cfg.roi.lo_mm.z};
  const double hi_mm[3] = {cfg.roi.hi_mm.x, cfg.roi.hi_mm.y, cfg.roi.hi_mm.z};
  const double face_mm[3] = {face.x, face.y, face.z};
  const bool whole = !(hi_mm[0] > lo_mm[0] && hi_mm[1] > lo_mm[1] && hi_mm[2] > lo_mm[2]);

  FusionGrids out;
  std::array<int, 3> lo{0, 0, 0}, hi = n;
  if (!whole) {
    for (int a = 0; a < 3; ++a) {
      const double l = (lo_mm[a] - face_mm[a]) / vs, h = (hi_mm[a] - face_mm[a]) / vs;
      require(l >= -1e-6 && h <= n[a] + 1e-6, ErrorCategory::geometry, "roi extends outside the object grid");
      lo[a] = static_cast<int>(std::floor(l + 1e-6));
      hi[a] = static_cast<int>(std::ceil(h - 1e-6));
      require(hi[a] > lo[a], ErrorCategory::geometry, "roi is thinner than one voxel");
    }
  }
  out.fine_offset = lo;
  out.fine = obj;
  out.fine.nx = hi[0] - lo[0];
  out.fine.ny = hi[1] - lo[1];
  out.fine.nz = hi[2] - lo[2];
  const Vec3 flo = face + Vec3{double(lo[0]), double(lo[1]), double(lo[2])} * vs;
  const Vec3 fhi = face + Vec3{double(hi[0]), double(hi[1]), double(hi[2])} * vs;
  out.fine.center_mm = (flo + fhi) * 0.5;

  const int f = cfg.coarse_factor;
  out.coarse = obj;
  out.coarse.nx = (n[0] + f - 1) / f;
  out.coarse.ny = (n[1] + f - 1) / f;
  out.coarse.nz = (n[2] + f - 1) / f;
  out.coarse.voxel_size_mm = vs * f;
  out.calibration = obj;
  out.calibration.nx = std::max(1, n[0] / 2);
  out.calibration.ny = std::max(1, n[1] / 2);
  out.calibration.nz = n[2] * cfg.calibration_z_extension;
  out.coarse_in_roi.assign(out.coarse.size(), 0);
  for (int k = 0; k < out.coarse.nz; ++k)
    for (int j = 0; j < out.coarse.ny; ++j)
      for (int i = 0; i < out.coarse.nx; ++i) {
        const Vec3 c = out.coarse.voxel_center(i, j, k);
        const bool in = c.x > flo.x && c.x < fhi.x && c.y > flo.y && c.y < fhi.y && c.z > flo.z && c.z < fhi.z;
        out.coarse_in_roi[out.coarse.index(i, j, k)] = in ? 1 : 0;
      }
  return out;
}

namespace {

struct Modality {
  const ScanGeometry* geom;
  const ProjectionSet* data;
  std::vector<std::vector<int>> subsets;
  std::vector<SubsetProjections> subset_data;
  std::vector<VoxelVolume> fine_norm;
  std::vector<VoxelVolume> coarse_norm;
  // Ray lengths through the fine grid plus the active (outside-roi) coarse voxels.
  std::vector<std::vector<double>> ray_len;
};

Modality prepare(const ScanGeometry& geom, const ProjectionSet& y, const FusionGrids& grids, const FusionConfig& cfg,
                 bool need_coarse) {
  Modality m{&geom, &y, ordered_subsets(geom.n_views, cfg.n_subsets), {}, {}, {}, {}};
  VoxelVolume outside(grids.coarse);
  for (std::size_t i = 0; i < outside.size(); ++i) outside.data()[i] = grids.coarse_in_roi[i] ? 0.0 : 1.0;
  for (const auto& s : m.subsets) {
    m.subset_data.push_back(gather_views(y, s));
    m.fine_norm.push_back(compute_sart_normalizer(geom, grids.fine, s, cfg.epsilon_norm));
    std::vector<double> len = forward_project_views(VoxelVolume(grids.fine, 1.0), geom, s);
    if (need_coarse) {
      m.coarse_norm.push_back(compute_sart_normalizer(geom, grids.coarse, s, cfg.epsilon_norm));
      const std::vector<double> coarse_len = forward_project_views(outside, geom, s);
      for (std::size_t i = 0; i < len.size(); ++i) len[i] += coarse_len[i];
    }
    for (double& v : len) v = std::max(v, cfg.epsilon_norm);
    m.ray_len.push_back(std::move(len));
  }
  return m;
}

}  // namespace

FusionResult dual_scale_fuse(const ProjectionSet& y_ct, const ProjectionSet& y_cl_raw, const ScanGeometry& geom_ct,
                             const ScanGeometry& geom_cl, const CalibrationRegions& regions, const FusionConfig& cfg) {
  validate(cfg);
  validate(geom_ct);
  validate(geom_cl);
  require(y_ct.geometry == geom_ct && y_cl_raw.geometry == geom_cl, ErrorCategory::geometry,
          "projection sets are not bound to the supplied geometries");
  require(std::abs(geom_ct.voxel_size_mm - geom_cl.voxel_size_mm) <= 1e-12 * geom_cl.voxel_size_mm,
          ErrorCategory::geometry, "CT and CL geometries disagree on voxel_size_mm");
  require(std::abs(cfg.object_grid.voxel_size_mm - geom_cl.voxel_size_mm) <= 1e-12 * geom_cl.voxel_size_mm,
          ErrorCategory::geometry, "object grid voxel size differs from the scan geometry");

  const FusionGrids grids = make_fusion_grids(cfg);
  const bool use_cl = cfg.subset_schedule != SubsetSchedule::ct_only;
  const bool use_ct = cfg.subset_schedule != SubsetSchedule::cl_only;
  const bool coarse_active =
      std::any_of(grids.coarse_in_roi.begin(), grids.coarse_in_roi.end(), [](std::uint8_t b) { return b == 0; });

  FusionResult result{VoxelVolume(grids.fine), VoxelVolume(grids.coarse)};

  ProjectionSet y_cl = y_cl_raw;
  if (use_cl && use_ct && cfg.calibrate) {
    const VoxelVolume x_ct = fdk_reconstruct(y_ct, grids.calibration);
    const VoxelVolume x_cl = fdk_reconstruct(y_cl_raw, grids.calibration);
    result.mean_ct = region_mean(x_ct, regions.ct_region);
    result.mean_cl = region_mean(x_cl, regions.cl_region);
    if (!(result.mean_ct > 0.0)) fail(ErrorCategory::calibration, "CT region mean must be positive");
    y_cl = calibrate_intensity(y_cl_raw, result.mean_ct, result.mean_cl);
    result.calibration_ratio = result.mean_ct / result.mean_cl;
  }

  std::vector<Modality> mods;
  if (use_cl) mods.push_back(prepare(geom_cl, y_cl, grids, cfg, coarse_active));
  if (use_ct) mods.push_back(prepare(geom_ct, y_ct, grids, cfg, coarse_active));

  const double lambda = cfg.relaxation_lambda;
  VoxelVolume& xh = result.x_fus;
  VoxelVolume& xg = result.x_coarse;

  for (int it = 0; it < cfg.n_iterations; ++it) {
    for (int s = 0; s < cfg.n_subsets; ++s) {
      for (Modality& m : mods) {
        const ScanGeometry& geom = *m.geom;
        const SubsetProjections& ys = m.subset_data[s];
        const std::vector<int>& views = ys.views;
        const std::vector<double>& len = m.ray_len[s];

        std::vector<double> coarse_proj;
        if (coarse_active) coarse_proj = forward_project_views(xg, geom, views);

        std::vector<double> r = forward_project_views(xh, geom, views);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = (ys.data[i] - r[i] - (coarse_active ? coarse_proj[i] : 0.0)) / len[i];
        apply_correction(xh, back_project_views(r, geom, views, xh.grid()), m.fine_norm[s], lambda);
        if (cfg.nonnegativity) clamp_nonnegative(xh);

        if (!coarse_active) continue;
        std::vector<double> r2 = forward_project_views(xh, geom, views);
        for (std::size_t i = 0; i < r2.size(); ++i) r2[i] = (ys.data[i] - r2[i] - coarse_proj[i]) / len[i];
        apply_correction(xg, back_project_views(r2, geom, views, xg.grid()), m.coarse_norm[s], lambda);
        auto gd = xg.data();
        for (std::size_t i = 0; i < gd.size(); ++i)
          if (grids.coarse_in_roi[i] || (cfg.nonnegativity && gd[i] < 0.0)) gd[i] = 0.0;
      }
    }
  }
  return result;
}

}  // namespace lamino
