#include "lamino/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "lamino/error.hpp"

namespace lamino {

GridSpec PhantomSpec::grid() const { return GridSpec{nx, ny, nz, voxel_size_mm, {}}; }

void validate(const PhantomSpec& s) {
  auto bad = [](const std::string& m) { fail(ErrorCategory::config, m); };
  if (s.nx < 1 || s.ny < 1 || s.nz < 1) bad("phantom dimensions must be positive");
  if (!(s.voxel_size_mm > 0)) bad("voxel_size_mm must be positive");
  if (s.n_layers < 1) bad("n_layers must be at least 1");
  if (s.layer_thickness < 1) bad("layer_thickness must be at least 1");
  if (s.z_margin < 0 || s.lateral_margin < 0) bad("margins must be non-negative");
  if (!(s.air_mu < s.substrate_mu && s.substrate_mu < s.copper_mu)) bad("need air_mu < substrate_mu < copper_mu");
  if (s.air_mu < 0) bad("attenuation values must be non-negative");
  if (s.trace_width < 1 || s.clearance < 1) bad("trace_width and clearance must be at least 1");
  if (!(s.trace_density > 0.0 && s.trace_density <= 1.0)) bad("trace_density must lie in (0, 1]");
  if (s.max_segment < 1) bad("max_segment must be at least 1");
  if (s.via_count_min < 0 || s.via_count_max < s.via_count_min) bad("invalid via count range");
  if (s.via_radius < 0) bad("via_radius must be non-negative");
  const int slab = s.nz - 2 * s.z_margin;
  if (slab < s.n_layers * (s.layer_thickness + 1))
    bad("copper layers and margins do not fit inside nz");
  if (s.nx - 2 * s.lateral_margin < s.trace_width || s.ny - 2 * s.lateral_margin < s.trace_width)
    bad("lateral margins leave no room for routing");
}

std::vector<std::pair<int, int>> pcb_layer_bands(const PhantomSpec& s) {
  validate(s);
  const double slab = s.nz - 2 * s.z_margin;
  const double spacing = slab / s.n_layers;
  std::vector<std::pair<int, int>> bands;
  for (int l = 0; l < s.n_layers; ++l) {
    const int z0 = s.z_margin + static_cast<int>(std::floor(l * spacing + 0.5 * (spacing - s.layer_thickness)));
    bands.emplace_back(z0, z0 + s.layer_thickness);
  }
  return bands;
}

namespace {

// Routing lattice for one layer. Node (a, b) owns the square starting at
// voxel (margin + a*pitch, margin + b*pitch) of side trace_width; an edge
// between neighbouring nodes fills the gap between their squares.
class RoutingLayer {
 public:
  RoutingLayer(const PhantomSpec& s)
      : spec_(s),
        pitch_(s.trace_width + s.clearance),
        lx_((s.nx - 2 * s.lateral_margin - s.trace_width) / pitch_ + 1),
        ly_((s.ny - 2 * s.lateral_margin - s.trace_width) / pitch_ + 1),
        used_(static_cast<std::size_t>(lx_) * ly_, 0),
        mask_(static_cast<std::size_t>(s.nx) * s.ny, 0) {}

  void route(std::mt19937_64& rng) {
    const std::size_t budget =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(spec_.trace_density * used_.size())));
    std::size_t filled = 0;
    std::size_t failures = 0;
    std::uniform_int_distribution<int> pick_x(0, lx_ - 1), pick_y(0, ly_ - 1), pick_dir(0, 3);
    std::uniform_int_distribution<int> pick_len(1, spec_.max_segment);
    std::uniform_int_distribution<int> pick_segments(1, 4);
    while (filled < budget && failures < 64 * used_.size()) {
      int a = pick_x(rng), b = pick_y(rng);
      if (used(a, b)) {
        ++failures;
        continue;
      }
      mark_node(a, b);
      ++filled;
      const int segments = pick_segments(rng);
      int dir = pick_dir(rng);
      for (int seg = 0; seg < segments; ++seg) {
        const int len = pick_len(rng);
        for (int step = 0; step < len; ++step) {
          const int na = a + kDx[dir], nb = b + kDy[dir];
          if (na < 0 || nb < 0 || na >= lx_ || nb >= ly_ || used(na, nb)) break;
          mark_node(na, nb);
          mark_edge(a, b, na, nb);
          a = na;
          b = nb;
          ++filled;
        }
        // 90 degree turn
        dir = (dir + (pick_dir(rng) % 2 == 0 ? 1 : 3)) % 4;
      }
      if (spec_.pads) filled += place_pad(a, b);
    }
  }

  bool copper(int x, int y) const { return mask_[static_cast<std::size_t>(y) * spec_.nx + x] != 0; }

 private:
  static constexpr std::array<int, 4> kDx{1, 0, -1, 0};
  static constexpr std::array<int, 4> kDy{0, 1, 0, -1};

  bool used(int a, int b) const { return used_[static_cast<std::size_t>(b) * lx_ + a] != 0; }

  void fill(int x0, int y0, int w, int h) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x)
        if (x >= 0 && y >= 0 && x < spec_.nx && y < spec_.ny) mask_[static_cast<std::size_t>(y) * spec_.nx + x] = 1;
  }

  int origin_x(int a) const { return spec_.lateral_margin + a * pitch_; }
  int origin_y(int b) const { return spec_.lateral_margin + b * pitch_; }

  void mark_node(int a, int b) {
    used_[static_cast<std::size_t>(b) * lx_ + a] = 1;
    fill(origin_x(a), origin_y(b), spec_.trace_width, spec_.trace_width);
  }

  void mark_edge(int a, int b, int na, int nb) {
    const int x0 = origin_x(std::min(a, na)), y0 = origin_y(std::min(b, nb));
    if (a != na)
      fill(x0, y0, pitch_ + spec_.trace_width, spec_.trace_width);
    else
      fill(x0, y0, spec_.trace_width, pitch_ + spec_.trace_width);
  }

  // A pad covers the 2x2 node block anchored at (a, b) when that block is free
  // apart from the trace end itself.
  std::size_t place_pad(int a, int b) {
    if (a + 1 >= lx_ || b + 1 >= ly_) return 0;
    if (used(a + 1, b) || used(a, b + 1) || used(a + 1, b + 1)) return 0;
    used_[static_cast<std::size_t>(b) * lx_ + a + 1] = 1;
    used_[static_cast<std::size_t>(b + 1) * lx_ + a] = 1;
    used_[static_cast<std::size_t>(b + 1) * lx_ + a + 1] = 1;
    fill(origin_x(a), origin_y(b), pitch_ + spec_.trace_width, pitch_ + spec_.trace_width);
    return 3;
  }

  const PhantomSpec& spec_;
  int pitch_;
  int lx_;
  int ly_;
  std::vector<std::uint8_t> used_;
  std::vector<std::uint8_t> mask_;
};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

}  // namespace

VoxelVolume generate_pcb_phantom(const PhantomSpec& s) {
  validate(s);
  VoxelVolume vol(s.grid(), s.air_mu);
  const auto bands = pcb_layer_bands(s);

  for (int k = s.z_margin; k < s.nz - s.z_margin; ++k)
    for (int j = s.lateral_margin; j < s.ny - s.lateral_margin; ++j)
      for (int i = s.lateral_margin; i < s.nx - s.lateral_margin; ++i) vol.at(i, j, k) = s.substrate_mu;

  for (int l = 0; l < s.n_layers; ++l) {
    auto rng = stream(s.rng_seed, 1 + static_cast<std::uint64_t>(l));
    RoutingLayer layer(s);
    layer.route(rng);
    for (int k = bands[l].first; k < bands[l].second; ++k)
      for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
          if (layer.copper(i, j)) vol.at(i, j, k) = s.copper_mu;
  }

  if (s.n_layers >= 2 && s.via_count_max > 0) {
    auto rng = stream(s.rng_seed, 0);
    std::uniform_int_distribution<int> count(s.via_count_min, s.via_count_max);
    const int lo = s.lateral_margin + s.via_radius;
    const int hix = s.nx - 1 - s.lateral_margin - s.via_radius;
    const int hiy = s.ny - 1 - s.lateral_margin - s.via_radius;
    const int n = count(rng);
    if (hix >= lo && hiy >= lo) {
      std::uniform_int_distribution<int> px(lo, hix), py(lo, hiy), layer(0, s.n_layers - 1);
      for (int v = 0; v < n; ++v) {
        const int cx = px(rng), cy = py(rng);
        int l0 = layer(rng), l1 = layer(rng);
        while (l1 == l0) l1 = layer(rng);
        if (l0 > l1) std::swap(l0, l1);
        const int r2 = s.via_radius * s.via_radius;
        for (int k = bands[l0].first; k < bands[l1].second; ++k)
          for (int j = cy - s.via_radius; j <= cy + s.via_radius; ++j)
            for (int i = cx - s.via_radius; i <= cx + s.via_radius; ++i)
              if ((i - cx) * (i - cx) + (j - cy) * (j - cy) <= r2) vol.at(i, j, k) = s.copper_mu;
      }
    }
  }
  return vol;
}

VoxelVolume cylinder_phantom(const GridSpec& grid, double radius_mm, double half_height_mm, double mu) {
  VoxelVolume vol(grid);
  for (int k = 0; k < grid.nz; ++k)
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const Vec3 p = grid.voxel_center(i, j, k);
        if (p.x * p.x + p.y * p.y <= radius_mm * radius_mm && std::abs(p.z) <= half_height_mm) vol.at(i, j, k) = mu;
      }
  return vol;
}

}  // namespace lamino
