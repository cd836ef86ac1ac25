#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "lamino/error.hpp"
#include "lamino/geometry.hpp"

using namespace lamino;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double point_line_distance(const Vec3& p, const Ray& r) {
  const Vec3 d = p - r.origin;
  return norm(d - r.direction * dot(d, r.direction));
}

}  // namespace

TEST_CASE("scanner defaults form a valid laminography geometry", "[geometry]") {
  const ScanGeometry g = make_geometry({});
  CHECK(g.source_to_center_mm == 19.32);
  CHECK(g.source_to_detector_mm == 201.63);
  CHECK(g.tilt_angle_deg == 30.0);
  CHECK(g.n_views == 360);
  CHECK(g.detector_pitch_mm == 0.0495);
  CHECK(g.voxel_size_mm == 0.005);
  CHECK(g.focus_to_stage_mm.value() == 16.35);
  CHECK(g.rotation_radius_mm.value() == 10.32);
}

TEST_CASE("magnification and demagnified pixel follow from the scanner table", "[geometry]") {
  const ScanGeometry g;
  CHECK_THAT(g.magnification(), WithinAbs(10.4363, 5e-5));
  CHECK_THAT(g.effective_pixel_mm(), WithinAbs(0.004743, 5e-7));
  CHECK(std::abs(g.effective_pixel_mm() - g.voxel_size_mm) / g.voxel_size_mm < 0.06);
}

TEST_CASE("invalid geometries are rejected", "[geometry]") {
  auto rejects = [](auto mutate) {
    ScanGeometry g;
    mutate(g);
    try {
      make_geometry(g);
    } catch (const Error& e) {
      return e.category() == ErrorCategory::geometry;
    }
    return false;
  };
  CHECK(rejects([](ScanGeometry& g) { g.source_to_center_mm = 0; }));
  CHECK(rejects([](ScanGeometry& g) { g.source_to_center_mm = -1; }));
  CHECK(rejects([](ScanGeometry& g) { g.source_to_detector_mm = g.source_to_center_mm; }));
  CHECK(rejects([](ScanGeometry& g) { g.tilt_angle_deg = 90; }));
  CHECK(rejects([](ScanGeometry& g) { g.tilt_angle_deg = -1; }));
  CHECK(rejects([](ScanGeometry& g) { g.n_views = 0; }));
  CHECK(rejects([](ScanGeometry& g) { g.detector_rows = 0; }));
  CHECK(rejects([](ScanGeometry& g) { g.detector_pitch_mm = 0; }));
  CHECK(rejects([](ScanGeometry& g) { g.voxel_size_mm = 0; }));
  CHECK(rejects([](ScanGeometry& g) { g.tilt_angle_deg = std::nan(""); }));
}

TEST_CASE("source position follows the elevated circular orbit", "[geometry]") {
  ScanGeometry g;
  g.n_views = 8;
  const Vec3 s0 = source_position(g, 0);
  CHECK_THAT(s0.x, WithinAbs(16.7317, 1e-4));
  CHECK_THAT(s0.y, WithinAbs(0.0, 1e-12));
  CHECK_THAT(s0.z, WithinAbs(9.6600, 1e-4));

  const Vec3 s4 = source_position(g, 4);  // beta = pi
  CHECK_THAT(s4.x, WithinAbs(-s0.x, 1e-12));
  CHECK_THAT(s4.y, WithinAbs(-s0.y, 1e-12));
  CHECK_THAT(s4.z, WithinAbs(s0.z, 1e-12));

  for (int v = 0; v < g.n_views; ++v) {
    const Vec3 s = source_position(g, v);
    CHECK_THAT(norm(s), WithinRel(g.source_to_center_mm, 1e-12));
    CHECK_THAT(s.z, WithinAbs(g.source_to_center_mm * std::sin(g.tilt_rad()), 1e-12));
    // elevation above the specimen plane equals the tilt
    CHECK_THAT(std::asin(s.z / norm(s)), WithinAbs(g.tilt_rad(), 1e-12));
  }

  ScanGeometry ct = ct_mode(g);
  ct.n_views = 4;
  const Vec3 s1 = source_position(ct, 1);  // beta = pi/2
  CHECK_THAT(s1.x, WithinAbs(0.0, 1e-12));
  CHECK_THAT(s1.y, WithinAbs(ct.source_to_center_mm, 1e-12));
  CHECK_THAT(s1.z, WithinAbs(0.0, 1e-12));

  CHECK_THROWS_AS(source_position(g, 8), Error);
  CHECK_THROWS_AS(source_position(g, -1), Error);
}

TEST_CASE("detector frame is orthonormal and perpendicular to the central ray", "[geometry]") {
  for (double tilt : {0.0, 30.0, 60.0}) {
    ScanGeometry g;
    g.tilt_angle_deg = tilt;
    g.n_views = 12;
    for (int v = 0; v < g.n_views; ++v) {
      const Vec3 u = g.detector_u(v), w = g.detector_v(v), s = g.source_direction(v);
      CHECK_THAT(norm(u), WithinAbs(1.0, 1e-12));
      CHECK_THAT(norm(w), WithinAbs(1.0, 1e-12));
      CHECK_THAT(dot(u, w), WithinAbs(0.0, 1e-12));
      CHECK_THAT(dot(u, s), WithinAbs(0.0, 1e-12));
      CHECK_THAT(dot(w, s), WithinAbs(0.0, 1e-12));
      const Vec3 c = g.detector_center(v);
      CHECK_THAT(norm(c - g.source_position(v)), WithinRel(g.source_to_detector_mm, 1e-12));
    }
  }
}

TEST_CASE("CT mode central rays are perpendicular to the rotation axis", "[geometry]") {
  ScanGeometry g = ct_mode(ScanGeometry{});
  CHECK(g.tilt_angle_deg == 0.0);
  g.n_views = 16;
  for (int v = 0; v < g.n_views; ++v) {
    const Vec3 dir = normalized(g.detector_center(v) - g.source_position(v));
    CHECK_THAT(dir.z, WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("pixel rays", "[geometry]") {
  ScanGeometry g;
  g.n_views = 10;
  g.detector_rows = 31;
  g.detector_cols = 41;

  SECTION("central pixel ray passes through the rotation centre") {
    for (int v = 0; v < g.n_views; ++v) {
      const Ray r = pixel_ray(g, v, 15, 20);
      CHECK(point_line_distance({0, 0, 0}, r) < 1e-9);
    }
  }

  SECTION("every ray direction has unit norm and starts at the source") {
    for (int v = 0; v < g.n_views; v += 3)
      for (int row = 0; row < g.detector_rows; row += 5)
        for (int col = 0; col < g.detector_cols; col += 7) {
          const Ray r = pixel_ray(g, v, row, col);
          CHECK_THAT(norm(r.direction), WithinAbs(1.0, 1e-9));
          CHECK(norm(r.origin - source_position(g, v)) == 0.0);
        }
  }

  SECTION("pixel position matches direct vector arithmetic") {
    std::mt19937 rng(5);
    for (int n = 0; n < 5; ++n) {
      const int v = static_cast<int>(rng() % g.n_views);
      const int row = static_cast<int>(rng() % g.detector_rows);
      const int col = static_cast<int>(rng() % g.detector_cols);
      const double beta = 2.0 * std::numbers::pi * v / g.n_views, phi = g.tilt_angle_deg * std::numbers::pi / 180.0;
      const Vec3 dir{std::cos(phi) * std::cos(beta), std::cos(phi) * std::sin(beta), std::sin(phi)};
      const Vec3 src = dir * g.source_to_center_mm;
      const Vec3 centre = src - dir * g.source_to_detector_mm;
      const Vec3 u{-std::sin(beta), std::cos(beta), 0.0};
      const Vec3 w{-std::sin(phi) * std::cos(beta), -std::sin(phi) * std::sin(beta), std::cos(phi)};
      const Vec3 expect = centre + u * ((col - 20.0) * g.detector_pitch_mm) + w * ((row - 15.0) * g.detector_pitch_mm);
      const Vec3 got = detector_pixel_position(g, v, row, col);
      CHECK(norm(got - expect) < 1e-9);
    }
  }

  SECTION("out-of-range indices are rejected") {
    CHECK_THROWS_AS(pixel_ray(g, 0, 31, 0), Error);
    CHECK_THROWS_AS(pixel_ray(g, 0, 0, 41), Error);
    CHECK_THROWS_AS(pixel_ray(g, 10, 0, 0), Error);
    CHECK_THROWS_AS(detector_pixel_position(g, 0, -1, 0), Error);
  }
}

TEST_CASE("missing-cone mask membership", "[geometry][mask]") {
  const SpectralMask m = missing_cone_mask({16, 16, 16}, 30.0);
  CHECK_FALSE(m.at(0, 0, 0));  // DC
  CHECK(m.at(0, 0, 3));        // on the omega_z axis
  CHECK(m.at(0, 0, 13));       // negative omega_z
  CHECK_FALSE(m.at(3, 0, 0));  // omega_z = 0 plane
  CHECK_FALSE(m.at(5, 7, 0));
  CHECK(SpectralMask::frequency(0, 16) == 0.0);
  CHECK(SpectralMask::frequency(8, 16) == -0.5);
  CHECK(SpectralMask::frequency(7, 16) == 7.0 / 16.0);
  CHECK(SpectralMask::frequency(2, 5) == 2.0 / 5.0);
  CHECK(SpectralMask::frequency(3, 5) == -2.0 / 5.0);
}

TEST_CASE("missing-cone mask is symmetric under frequency negation", "[geometry][mask]") {
  for (auto dims : {std::array<int, 3>{12, 10, 9}, std::array<int, 3>{7, 8, 16}}) {
    const SpectralMask m = missing_cone_mask(dims, 30.0);
    for (int k = 0; k < dims[2]; ++k)
      for (int j = 0; j < dims[1]; ++j)
        for (int i = 0; i < dims[0]; ++i) {
          const int ni = (dims[0] - i) % dims[0], nj = (dims[1] - j) % dims[1], nk = (dims[2] - k) % dims[2];
          // The Nyquist sample of an even axis is its own negative, so skip samples touching it.
          const bool nyq = (dims[0] % 2 == 0 && i == dims[0] / 2) || (dims[1] % 2 == 0 && j == dims[1] / 2) ||
                           (dims[2] % 2 == 0 && k == dims[2] / 2);
          if (!nyq) CHECK(m.at(i, j, k) == m.at(ni, nj, nk));
        }
  }
}

TEST_CASE("masked fraction on 64^3 matches brute-force counts", "[geometry][mask]") {
  const int n = 64;
  const SpectralMask m = missing_cone_mask({n, n, n}, 30.0);
  // Independent counts with integer frequency indices in [-n/2, n/2).
  std::size_t inside = 0, ball = 0, ball_inside = 0;
  const double t = std::tan(30.0 * std::numbers::pi / 180.0);
  for (int kz = -n / 2; kz < n / 2; ++kz)
    for (int ky = -n / 2; ky < n / 2; ++ky)
      for (int kx = -n / 2; kx < n / 2; ++kx) {
        if (kx == 0 && ky == 0 && kz == 0) continue;
        const double r = std::sqrt(double(kx) * kx + double(ky) * ky);
        const bool in = r < t * std::abs(kz);
        inside += in;
        if (double(kx) * kx + double(ky) * ky + double(kz) * kz <= (n / 2.0) * (n / 2.0)) {
          ++ball;
          ball_inside += in;
        }
      }
  CHECK(m.masked_count() == inside);
  CHECK(m.masked_fraction() == static_cast<double>(inside) / (static_cast<double>(n) * n * n - 1));
  CHECK(m.band_limited_masked_fraction() == static_cast<double>(ball_inside) / static_cast<double>(ball));
  // Inside the Nyquist ball a double cone of half angle a fills 1 - cos(a).
  CHECK_THAT(m.band_limited_masked_fraction(), WithinAbs(1.0 - std::cos(std::numbers::pi / 6.0), 0.02));
  // Over the whole cube the cone fills pi tan^2(a) / 12 (valid while tan(a) <= 1).
  CHECK_THAT(m.masked_fraction(), WithinAbs(std::numbers::pi * t * t / 12.0, 0.005));
}

TEST_CASE("degenerate mask requests are rejected", "[geometry][mask]") {
  CHECK_THROWS_AS(missing_cone_mask({1, 8, 8}, 30.0), Error);
  CHECK_THROWS_AS(missing_cone_mask({8, 8, 8}, 0.0), Error);
  CHECK_THROWS_AS(missing_cone_mask({8, 8, 8}, 90.0), Error);
}
