#include "lamino/fdk.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

#include "lamino/error.hpp"

namespace lamino {

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
  return FftwBuffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

// Half-spectrum (P/2 + 1 real values) of the circulant ramp kernel.
std::vector<double> kernel_response(const FilterSpec& spec, int P, double tau) {
  auto h = fftw_buffer<double>(P);
  auto H = fftw_buffer<fftw_complex>(P / 2 + 1);
  double sum = 0.0;
  for (int n = 0; n < P; ++n) {
    if (n == P / 2) continue;
    const int m = n < P / 2 ? n : n - P;
    h[n] = ram_lak_tap(m, tau);
    sum += h[n];
  }
  h[P / 2] = -sum;
  fftw_plan plan = fftw_plan_dft_r2c_1d(P, h.get(), H.get(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  std::vector<double> resp(P / 2 + 1);
  for (int k = 0; k <= P / 2; ++k) {
    double r = H[k][0];
    if (spec.kernel == RampKernel::hann_ram_lak) r *= 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * k / P));
    resp[k] = r;
  }
  return resp;
}

}  // namespace

int padded_length(const FilterSpec& spec, int cols) {
  if (spec.padded_length > 0) {
    require(is_pow2(spec.padded_length), ErrorCategory::config, "padded_length must be a power of two");
    require(spec.padded_length >= cols, ErrorCategory::config, "filter padding is smaller than the detector width");
    require(spec.padded_length >= 2, ErrorCategory::config, "filter padding must be at least 2");
    return spec.padded_length;
  }
  require(spec.zero_pad >= 2 && is_pow2(spec.zero_pad), ErrorCategory::config,
          "zero_pad must be a power of two >= 2");
  return spec.zero_pad * next_pow2(cols);
}

double ram_lak_tap(int n, double tau) {
  if (n == 0) return 1.0 / (4.0 * tau * tau);
  if (n % 2 == 0) return 0.0;
  const double d = std::numbers::pi * n * tau;
  return -1.0 / (d * d);
}

ProjectionSet cosine_weight(const ProjectionSet& projs) {
  const ScanGeometry& g = projs.geometry;
  validate(g);
  ProjectionSet out = projs;
  const double D = g.source_to_detector_mm;
  std::vector<double> w(g.pixels_per_view());
  for (int r = 0; r < g.detector_rows; ++r)
    for (int c = 0; c < g.detector_cols; ++c) {
      const auto [u, v] = g.pixel_offset(r, c);
      w[static_cast<std::size_t>(r) * g.detector_cols + c] = D / std::sqrt(D * D + u * u + v * v);
    }
  for (int view = 0; view < g.n_views; ++view) {
    auto img = out.view(view);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] *= w[i];
  }
  return out;
}

ProjectionSet ramp_filter(const ProjectionSet& projs, const FilterSpec& spec) {
  const ScanGeometry& g = projs.geometry;
  validate(g);
  const int cols = g.detector_cols;
  const int P = padded_length(spec, cols);
  const std::vector<double> resp = kernel_response(spec, P, g.detector_pitch_mm);

  auto buf = fftw_buffer<double>(P);
  auto spec_buf = fftw_buffer<fftw_complex>(P / 2 + 1);
  fftw_plan fwd = fftw_plan_dft_r2c_1d(P, buf.get(), spec_buf.get(), FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r_1d(P, spec_buf.get(), buf.get(), FFTW_ESTIMATE);

  ProjectionSet out = projs;
  const int right = (P - cols) / 2;
  const long n_rows = static_cast<long>(g.n_views) * g.detector_rows;
  for (long row = 0; row < n_rows; ++row) {
    double* line = out.data.data() + row * cols;
    for (int c = 0; c < cols; ++c) buf[c] = line[c];
    for (int c = cols; c < P; ++c) buf[c] = (c < cols + right) ? line[cols - 1] : line[0];
    fftw_execute(fwd);
    for (int k = 0; k <= P / 2; ++k) {
      spec_buf[k][0] *= resp[k];
      spec_buf[k][1] *= resp[k];
    }
    fftw_execute(inv);
    const double scale = 1.0 / P;
    for (int c = 0; c < cols; ++c) line[c] = buf[c] * scale;
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
  return out;
}

VoxelVolume fdk_reconstruct(const ProjectionSet& projs, const GridSpec& grid, const FilterSpec& spec) {
  const ScanGeometry& g = projs.geometry;
  validate(g);
  validate(grid);
  require(projs.data.size() == g.projection_size(), ErrorCategory::shape, "projection payload does not match geometry");

  const ProjectionSet filtered = ramp_filter(cosine_weight(projs), spec);

  const double Dso = g.source_to_center_mm;
  const double Dsd = g.source_to_detector_mm;
  const double inv_pitch = 1.0 / g.detector_pitch_mm;
  const double c0 = g.col_center(), r0 = g.row_center();
  const int rows = g.detector_rows, cols = g.detector_cols;

  struct Frame {
    Vec3 s, u, v;
  };
  std::vector<Frame> frames(g.n_views);
  for (int view = 0; view < g.n_views; ++view)
    frames[view] = {g.source_direction(view), g.detector_u(view), g.detector_v(view)};

  VoxelVolume out(grid);
  // pi/n from the angular quadrature over a full orbit, cos(tilt) from the
  // tilted-orbit Jacobian, magnification * pitch converts the detector-domain
  // convolution sum to an integral in rotation-centre units.
  const double scale = std::numbers::pi * std::cos(g.tilt_rad()) / g.n_views * g.magnification() * g.detector_pitch_mm;

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < grid.nz; ++k) {
    for (int view = 0; view < g.n_views; ++view) {
      const Frame& f = frames[view];
      const double* img = filtered.data.data() + filtered.offset(view);
      for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
          const Vec3 x = grid.voxel_center(i, j, k);
          const double U = Dso - dot(x, f.s);
          const double mag = Dsd / U;
          const double col = mag * dot(x, f.u) * inv_pitch + c0;
          const double row = mag * dot(x, f.v) * inv_pitch + r0;
          const double fc = std::floor(col), fr = std::floor(row);
          const int ic = static_cast<int>(fc), ir = static_cast<int>(fr);
          if (ic < -1 || ir < -1 || ic >= cols || ir >= rows) continue;
          const double ac = col - fc, ar = row - fr;
          double val = 0.0;
          for (int dr = 0; dr < 2; ++dr) {
            const int rr = ir + dr;
            if (rr < 0 || rr >= rows) continue;
            const double wr = dr ? ar : 1.0 - ar;
            for (int dc = 0; dc < 2; ++dc) {
              const int cc = ic + dc;
              if (cc < 0 || cc >= cols) continue;
              val += wr * (dc ? ac : 1.0 - ac) * img[static_cast<std::size_t>(rr) * cols + cc];
            }
          }
          out.at(i, j, k) += (Dso * Dso) / (U * U) * val;
        }
    }
  }
  for (double& v : out.data()) v *= scale;
  return out;
}

VoxelVolume fdk_reconstruct(const ProjectionSet& projs, const ScanGeometry& geom, const GridSpec& grid,
                            const FilterSpec& spec) {
  require(projs.geometry == geom, ErrorCategory::geometry, "projection geometry does not match the supplied geometry");
  return fdk_reconstruct(projs, grid, spec);
}

}  // namespace lamino
