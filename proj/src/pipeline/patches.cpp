#include "lamino/pipeline/patches.hpp"

#include <algorithm>

#include "lamino/error.hpp"

namespace lamino::pipeline {

namespace {

std::vector<int> starts(int n, int size, int step) {
  if (n <= size) return {0};
  std::vector<int> s;
  for (int p = 0;; p += step) {
    if (p + size >= n) {
      s.push_back(n - size);
      break;
    }
    s.push_back(p);
  }
  return s;
}

double ramp(int i, int len, bool lead, bool trail, int overlap) {
  double w = 1.0;
  if (overlap <= 0) return w;
  if (lead) w = std::min(w, (i + 0.5) / overlap);
  if (trail) w = std::min(w, (len - i - 0.5) / overlap);
  return w;
}

}  // namespace

std::vector<Tile> plan_tiles(int rows, int cols, const PatchConfig& cfg) {
  validate(cfg);
  require(rows > 0 && cols > 0, ErrorCategory::shape, "cannot tile an empty image");
  const int step = cfg.size - cfg.overlap;
  std::vector<Tile> tiles;
  for (int r : starts(rows, cfg.size, step))
    for (int c : starts(cols, cfg.size, step))
      tiles.push_back({r, c, std::min(cfg.size, rows), std::min(cfg.size, cols)});
  return tiles;
}

double tile_weight(const Tile& t, int r, int c, int rows, int cols, int overlap) {
  return ramp(r, t.rows, t.row0 > 0, t.row0 + t.rows < rows, overlap) *
         ramp(c, t.cols, t.col0 > 0, t.col0 + t.cols < cols, overlap);
}

Image2D crop_tile(const Image2D& img, const Tile& t) {
  Image2D out(t.rows, t.cols);
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c) out.at(r, c) = img.at(t.row0 + r, t.col0 + c);
  return out;
}

Image2D process_tiles(const std::vector<const Image2D*>& inputs, const PatchConfig& cfg,
                      const std::function<Image2D(const std::vector<Image2D>&)>& fn) {
  require(!inputs.empty() && inputs[0] != nullptr, ErrorCategory::shape, "no images to tile");
  const int rows = inputs[0]->rows, cols = inputs[0]->cols;
  for (const Image2D* im : inputs)
    require(im != nullptr && im->rows == rows && im->cols == cols, ErrorCategory::shape, "tiled inputs differ in shape");
  Image2D acc(rows, cols), wsum(rows, cols);
  for (const Tile& t : plan_tiles(rows, cols, cfg)) {
    std::vector<Image2D> parts;
    for (const Image2D* im : inputs) parts.push_back(crop_tile(*im, t));
    const Image2D out = fn(parts);
    require(out.rows == t.rows && out.cols == t.cols, ErrorCategory::shape, "tile processor changed the tile shape");
    for (int r = 0; r < t.rows; ++r)
      for (int c = 0; c < t.cols; ++c) {
        const double w = tile_weight(t, r, c, rows, cols, cfg.overlap);
        acc.at(t.row0 + r, t.col0 + c) += w * out.at(r, c);
        wsum.at(t.row0 + r, t.col0 + c) += w;
      }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] /= wsum.data[i];
  return acc;
}

Image2D restore_slice(nn::DenoiserNet& net, const nn::NoiseSchedule& sched, const nn::SamplerConfig& sampler,
                      const nn::IntensityNormalizer& norm, const Image2D& fdk, const Image2D* fus,
                      const PatchConfig& patch) {
  std::vector<const Image2D*> inputs{&fdk};
  if (fus != nullptr) inputs.push_back(fus);
  const int m = net.config().size_multiple();
  return process_tiles(inputs, patch, [&](const std::vector<Image2D>& parts) {
    const int rows = parts[0].rows, cols = parts[0].cols;
    require(rows % m == 0 && cols % m == 0, ErrorCategory::shape,
            "tile size " + std::to_string(rows) + "x" + std::to_string(cols) + " is not a multiple of " +
                std::to_string(m));
    const nn::Tensor c_fdk({1, 1, rows, cols}, norm.to_unit(parts[0].data));
    nn::Tensor c_fus;
    if (parts.size() > 1) c_fus = nn::Tensor({1, 1, rows, cols}, norm.to_unit(parts[1].data));
    const nn::Tensor x0 = nn::ddim_sample(net, c_fdk, parts.size() > 1 ? &c_fus : nullptr, sched, sampler);
    Image2D out(rows, cols);
    out.data = norm.from_unit(x0.data);
    return out;
  });
}

}  // namespace lamino::pipeline
