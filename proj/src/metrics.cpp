#include "lamino/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lamino/error.hpp"

namespace lamino {

namespace {

void same_size(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCategory::shape, "metric inputs differ in size");
  require(!a.empty(), ErrorCategory::shape, "metric inputs are empty");
}

std::pair<double, double> min_max(std::span<const double> a) {
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  return {*lo, *hi};
}

}  // namespace

double mse(std::span<const double> a, std::span<const double> b) {
  same_size(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(std::span<const double> a, std::span<const double> ref, std::optional<double> data_range) {
  const double m = mse(a, ref);
  double range;
  if (data_range) {
    range = *data_range;
  } else {
    const auto [lo, hi] = min_max(ref);
    range = hi - lo;
  }
  require(range > 0.0, ErrorCategory::numeric, "PSNR data range must be positive");
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / m);
}

double ssim(const Image2D& a, const Image2D& b, std::optional<double> data_range) {
  require(a.rows == b.rows && a.cols == b.cols, ErrorCategory::shape, "SSIM inputs differ in shape");
  constexpr int W = 11;
  constexpr double sigma = 1.5;
  require(a.rows >= W && a.cols >= W, ErrorCategory::shape, "image smaller than the 11x11 SSIM window");

  double L;
  if (data_range) {
    L = *data_range;
  } else {
    const auto [alo, ahi] = min_max(a.data);
    const auto [blo, bhi] = min_max(b.data);
    L = std::max(ahi, bhi) - std::min(alo, blo);
  }
  if (!(L > 0.0)) L = 1.0;
  const double C1 = (0.01 * L) * (0.01 * L);
  const double C2 = (0.03 * L) * (0.03 * L);

  double g[W];
  double gsum = 0.0;
  for (int i = 0; i < W; ++i) {
    const double d = i - W / 2;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  // Separable weighted moments: filter rows, then columns (valid region only).
  const int R = a.rows, C = a.cols, VR = R - W + 1, VC = C - W + 1;
  auto filter = [&](auto&& value) {
    std::vector<double> horiz(static_cast<std::size_t>(R) * VC);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < VC; ++c) {
        double s = 0.0;
        for (int t = 0; t < W; ++t) s += g[t] * value(r, c + t);
        horiz[static_cast<std::size_t>(r) * VC + c] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(VR) * VC);
    for (int r = 0; r < VR; ++r)
      for (int c = 0; c < VC; ++c) {
        double s = 0.0;
        for (int t = 0; t < W; ++t) s += g[t] * horiz[static_cast<std::size_t>(r + t) * VC + c];
        out[static_cast<std::size_t>(r) * VC + c] = s;
      }
    return out;
  };
  const auto mu_a = filter([&](int r, int c) { return a.at(r, c); });
  const auto mu_b = filter([&](int r, int c) { return b.at(r, c); });
  const auto aa = filter([&](int r, int c) { return a.at(r, c) * a.at(r, c); });
  const auto bb = filter([&](int r, int c) { return b.at(r, c) * b.at(r, c); });
  const auto ab = filter([&](int r, int c) { return a.at(r, c) * b.at(r, c); });

  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = aa[i] - ma * ma, vb = bb[i] - mb * mb, cov = ab[i] - ma * mb;
    total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
  }
  return total / static_cast<double>(mu_a.size());
}

double pearson_cc(std::span<const double> a, std::span<const double> b) {
  same_size(a, b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) fail(ErrorCategory::numeric, "correlation undefined for zero-variance input");
  return sab / std::sqrt(saa * sbb);
}

int otsu_bin(const OtsuThreshold& t, double v) {
  if (t.constant) return 0;
  const int b = static_cast<int>(std::floor((v - t.lo) / (t.hi - t.lo) * 256.0));
  return std::clamp(b, 0, 255);
}

OtsuThreshold otsu_threshold(std::span<const double> img) {
  require(!img.empty(), ErrorCategory::shape, "Otsu threshold of an empty image");
  OtsuThreshold t;
  std::tie(t.lo, t.hi) = min_max(img);
  if (t.hi == t.lo) {
    t.constant = true;
    t.tau = t.lo;
    t.bin = 255;
    return t;
  }
  std::vector<double> hist(256, 0.0);
  for (double v : img) hist[otsu_bin(t, v)] += 1.0;

  const double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int k = 0; k < 255; ++k) {
    w0 += hist[k];
    sum0 += k * hist[k];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = k;
    }
  }
  t.bin = best_bin;
  t.tau = t.lo + (best_bin + 1) * (t.hi - t.lo) / 256.0;
  return t;
}

std::vector<std::uint8_t> binarize(std::span<const double> img) {
  const OtsuThreshold t = otsu_threshold(img);
  std::vector<std::uint8_t> out(img.size(), 0);
  if (t.constant) return out;
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = otsu_bin(t, img[i]) > t.bin ? 1 : 0;
  return out;
}

double bdm(std::span<const double> rec, std::span<const double> ref) {
  same_size(rec, ref);
  const auto br = binarize(rec);
  const auto bp = binarize(ref);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < br.size(); ++i) diff += br[i] != bp[i];
  return (1.0 - static_cast<double>(diff) / static_cast<double>(br.size())) * 100.0;
}

double missing_cone_energy(const VoxelVolume& vol, const SpectralMask& mask) {
  const GridSpec& g = vol.grid();
  require(mask.dims() == g.dims(), ErrorCategory::shape, "spectral mask dims differ from volume dims");
  const std::size_t n = g.size();
  fftw_complex* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  fftw_plan plan = fftw_plan_dft_3d(g.nz, g.ny, g.nx, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  auto d = vol.data();
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = d[i];
    buf[i][1] = 0.0;
  }
  fftw_execute(plan);
  double inside = 0.0, total = 0.0;
  const auto& bits = mask.bits();
  for (std::size_t i = 1; i < n; ++i) {  // index 0 is DC
    const double e = buf[i][0] * buf[i][0] + buf[i][1] * buf[i][1];
    total += e;
    if (bits[i]) inside += e;
  }
  fftw_destroy_plan(plan);
  fftw_free(buf);
  if (!(total > 0.0)) fail(ErrorCategory::numeric, "spectral energy fraction undefined for a constant volume");
  return inside / total;
}

MetricReport evaluate_image(const Image2D& rec, const Image2D& ref) {
  MetricReport r;
  r.mse = mse(rec.data, ref.data);
  r.psnr_db = psnr(rec.data, ref.data);
  const auto [lo, hi] = min_max(ref.data);
  r.ssim = ssim(rec, ref, hi - lo);
  r.cc = pearson_cc(rec.data, ref.data);
  r.bdm_percent = bdm(rec.data, ref.data);
  r.missing_cone_energy_fraction = std::numeric_limits<double>::quiet_NaN();
  return r;
}

MetricReport evaluate_volume(const VoxelVolume& rec, const VoxelVolume& ref, double cone_half_angle_deg) {
  require(rec.grid().dims() == ref.grid().dims(), ErrorCategory::shape, "volumes differ in shape");
  MetricReport r;
  r.mse = mse(rec.data(), ref.data());
  r.psnr_db = psnr(rec.data(), ref.data());
  r.cc = pearson_cc(rec.data(), ref.data());
  r.bdm_percent = bdm(rec.data(), ref.data());
  const auto [lo, hi] = min_max(ref.data());
  double s = 0.0;
  for (int k = 0; k < rec.nz(); ++k)
    s += ssim(extract_slice(rec, Axis::z, k), extract_slice(ref, Axis::z, k), hi - lo);
  r.ssim = s / rec.nz();
  // A full-circle CT orbit (half angle 0) has no missing cone.
  r.missing_cone_energy_fraction =
      cone_half_angle_deg == 0.0 ? 0.0
                                 : missing_cone_energy(rec, missing_cone_mask(rec.grid().dims(), cone_half_angle_deg));
  return r;
}

std::string metrics_csv_header() { return "method,psnr,ssim,mse,bdm,cc,cone_fraction"; }

std::string metrics_csv_row(const std::string& method, const MetricReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << method << ',' << r.psnr_db << ',' << r.ssim << ',' << r.mse << ',' << r.bdm_percent << ',' << r.cc << ','
     << r.missing_cone_energy_fraction;
  return os.str();
}

}  // namespace lamino
