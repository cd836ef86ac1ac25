#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "lamino/error.hpp"
#include "lamino/metrics.hpp"
#include "support.hpp"

using namespace lamino;
using namespace lamino::testing;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Image2D random_image(int r, int c, std::uint64_t seed) {
  Image2D img(r, c);
  img.data = random_vector(img.size(), seed);
  return img;
}

// Direct per-window SSIM with an explicitly built 2D Gaussian window.
double ssim_oracle(const Image2D& a, const Image2D& b, double L) {
  double w[11][11], wsum = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * 1.5 * 1.5));
      wsum += w[i][j];
    }
  const double C1 = (0.01 * L) * (0.01 * L), C2 = (0.03 * L) * (0.03 * L);
  double total = 0;
  int count = 0;
  for (int r0 = 0; r0 + 11 <= a.rows; ++r0)
    for (int c0 = 0; c0 + 11 <= a.cols; ++c0) {
      double ma = 0, mb = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          ma += w[i][j] / wsum * a.at(r0 + i, c0 + j);
          mb += w[i][j] / wsum * b.at(r0 + i, c0 + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double da = a.at(r0 + i, c0 + j) - ma, db = b.at(r0 + i, c0 + j) - mb;
          va += w[i][j] / wsum * da * da;
          vb += w[i][j] / wsum * db * db;
          cov += w[i][j] / wsum * da * db;
        }
      total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("PSNR", "[metrics]") {
  const std::vector<double> ref{0.0, 0.25, 0.5, 1.0};
  CHECK(std::isinf(psnr(ref, ref)));
  CHECK(psnr(ref, ref) > 0);
  std::vector<double> rec = ref;
  for (double& v : rec) v += 0.1;  // mse 0.01 on a unit range
  CHECK_THAT(psnr(rec, ref), WithinAbs(20.0, 1e-9));
  CHECK_THAT(psnr(rec, ref, 2.0), WithinAbs(20.0 + 20.0 * std::log10(2.0), 1e-9));

  const auto a = random_vector(500, 1), b = random_vector(500, 2);
  double m = 0, lo = b[0], hi = b[0];
  for (std::size_t i = 0; i < 500; ++i) {
    m += (a[i] - b[i]) * (a[i] - b[i]);
    lo = std::min(lo, b[i]);
    hi = std::max(hi, b[i]);
  }
  m /= 500;
  CHECK_THAT(mse(a, b), WithinRel(m, 1e-12));
  CHECK_THAT(psnr(a, b), WithinAbs(10 * std::log10((hi - lo) * (hi - lo) / m), 1e-9));
  CHECK_THROWS_AS(psnr(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
}

TEST_CASE("PSNR falls as noise grows", "[metrics]") {
  const auto ref = random_vector(4096, 3);
  const auto noise = random_vector(4096, 4);
  double prev = std::numeric_limits<double>::infinity();
  for (double s : {0.01, 0.05, 0.1, 0.5}) {
    std::vector<double> rec(ref);
    for (std::size_t i = 0; i < rec.size(); ++i) rec[i] += s * noise[i];
    const double p = psnr(rec, ref);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("SSIM", "[metrics]") {
  const Image2D a = random_image(16, 16, 5);
  Image2D b = a;
  const auto noise = random_vector(b.size(), 6);
  for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = 0.6 * a.data[i] + 0.4 * noise[i];
  CHECK_THAT(ssim(a, a), WithinAbs(1.0, 1e-12));
  CHECK_THAT(ssim(a, b), WithinAbs(ssim(b, a), 1e-14));
  double lo = 1e300, hi = -1e300;
  for (double v : a.data) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : b.data) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK_THAT(ssim(a, b), WithinAbs(ssim_oracle(a, b, hi - lo), 1e-10));
  CHECK_THAT(ssim(a, b, 3.0), WithinAbs(ssim_oracle(a, b, 3.0), 1e-10));
  CHECK(ssim(a, b) < 1.0);
  CHECK_THROWS_AS(ssim(random_image(8, 8, 1), random_image(8, 8, 2)), Error);
  CHECK_THROWS_AS(ssim(a, random_image(16, 15, 2)), Error);
}

TEST_CASE("Pearson correlation", "[metrics]") {
  const auto a = random_vector(300, 7), b = random_vector(300, 8);
  CHECK_THAT(pearson_cc(a, a), WithinAbs(1.0, 1e-12));
  std::vector<double> neg(a), affine(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    neg[i] = -a[i];
    affine[i] = 3.0 * a[i] + 7.0;
  }
  CHECK_THAT(pearson_cc(a, neg), WithinAbs(-1.0, 1e-12));
  CHECK_THAT(pearson_cc(a, affine), WithinAbs(1.0, 1e-12));
  CHECK_THAT(pearson_cc(a, b), WithinAbs(pearson_cc(b, a), 1e-15));
  CHECK(std::abs(pearson_cc(a, b)) <= 1.0);
  CHECK_THROWS_AS(pearson_cc(a, std::vector<double>(300, 1.0)), Error);
}

TEST_CASE("Otsu threshold matches an exhaustive search", "[metrics][otsu]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    // Bimodal sample.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> lo(0.2, 0.05), hi(0.8, 0.1);
    std::vector<double> img(3000);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = i % 3 == 0 ? hi(rng) : lo(rng);
    const OtsuThreshold t = otsu_threshold(img);

    const auto [mn, mx] = std::minmax_element(img.begin(), img.end());
    std::vector<int> bins(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
      bins[i] = std::clamp(static_cast<int>(std::floor((img[i] - *mn) / (*mx - *mn) * 256.0)), 0, 255);
    double best = -1;
    int best_k = -1;
    for (int k = 0; k < 255; ++k) {
      double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
      for (int b : bins) (b <= k ? (n0 += 1, s0 += b) : (n1 += 1, s1 += b));
      if (n0 == 0 || n1 == 0) continue;
      const double v = n0 * n1 * (s0 / n0 - s1 / n1) * (s0 / n0 - s1 / n1);
      if (v > best * (1 + 1e-12)) {
        best = v;
        best_k = k;
      }
    }
    CHECK(t.bin == best_k);
    CHECK(t.tau > 0.3);
    CHECK(t.tau < 0.7);
  }
  const OtsuThreshold c = otsu_threshold(std::vector<double>(10, 2.0));
  CHECK(c.constant);
  for (auto b : binarize(std::vector<double>(10, 2.0))) CHECK(b == 0);
}

TEST_CASE("binary difference measure", "[metrics][otsu]") {
  std::vector<double> ref(100), inv(100), half(100);
  for (int i = 0; i < 100; ++i) {
    ref[i] = i % 2 ? 1.0 : 0.0;
    inv[i] = 1.0 - ref[i];
    half[i] = i < 50 ? ref[i] : inv[i];
  }
  CHECK(bdm(ref, ref) == 100.0);
  CHECK(bdm(inv, ref) == 0.0);
  CHECK(bdm(half, ref) == 50.0);

  // Monotone increasing remaps leave the binarisation unchanged.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.03);
  std::vector<double> img(400), remapped(400), affine(400);
  for (int i = 0; i < 400; ++i) {
    img[i] = (i % 5 == 0 ? 1.0 : 0.2) + noise(rng);
    remapped[i] = std::exp(3.0 * img[i]);
    affine[i] = 4.0 * img[i] + 1.0;
  }
  CHECK(bdm(remapped, img) == 100.0);
  CHECK(bdm(affine, img) == 100.0);
}

TEST_CASE("missing-cone energy fraction", "[metrics][cone]") {
  const GridSpec grid{16, 16, 16};
  const SpectralMask m = missing_cone_mask(grid.dims(), 30.0);
  VoxelVolume along_z(grid), along_x(grid);
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) {
        along_z.at(i, j, k) = std::cos(2 * std::numbers::pi * 3 * k / 16.0);
        along_x.at(i, j, k) = std::cos(2 * std::numbers::pi * 3 * i / 16.0) + 0.5;
      }
  CHECK_THAT(missing_cone_energy(along_z, m), WithinAbs(1.0, 1e-12));
  CHECK_THAT(missing_cone_energy(along_x, m), WithinAbs(0.0, 1e-12));

  const GridSpec big{32, 32, 32};
  const VoxelVolume white = random_volume(big, 5, -1, 1);
  const SpectralMask mb = missing_cone_mask(big.dims(), 30.0);
  const double expected = static_cast<double>(mb.masked_count()) / (big.size() - 1);
  CHECK_THAT(missing_cone_energy(white, mb), WithinAbs(expected, 0.02));

  CHECK_THROWS_AS(missing_cone_energy(VoxelVolume(grid, 1.0), m), Error);
  CHECK_THROWS_AS(missing_cone_energy(white, m), Error);
}

TEST_CASE("volume and image reports", "[metrics]") {
  const GridSpec grid{16, 16, 4};
  const VoxelVolume ref = random_volume(grid, 1);
  VoxelVolume rec = ref;
  for (double& v : rec.data()) v += 0.05;
  const MetricReport r = evaluate_volume(rec, ref, 30.0);
  CHECK_THAT(r.mse, WithinAbs(0.0025, 1e-12));
  CHECK(r.ssim > 0.5);
  CHECK(r.missing_cone_energy_fraction >= 0.0);
  CHECK(r.missing_cone_energy_fraction <= 1.0);
  CHECK(evaluate_volume(rec, ref, 0.0).missing_cone_energy_fraction == 0.0);
  const MetricReport img = evaluate_image(extract_slice(rec, Axis::z, 1), extract_slice(ref, Axis::z, 1));
  CHECK(std::isnan(img.missing_cone_energy_fraction));
  CHECK(metrics_csv_header() == "method,psnr,ssim,mse,bdm,cc,cone_fraction");
  CHECK(metrics_csv_row("fdk", r).rfind("fdk,", 0) == 0);
}
