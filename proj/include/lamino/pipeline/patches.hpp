#pragma once

#include <functional>
#include <vector>

#include "lamino/diffusion/sampler.hpp"
#include "lamino/pipeline/config.hpp"
#include "lamino/volume.hpp"

namespace lamino::pipeline {

struct Tile {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;
};

/// Tiles of at most `size` pixels per side, stepping by size - overlap; the
/// last tile on each axis is pulled back to end at the image border.
std::vector<Tile> plan_tiles(int rows, int cols, const PatchConfig& cfg);

/// Per-pixel blending weight inside `tile`: linear ramps of width `overlap`
/// on every side that borders another tile, 1 elsewhere.
double tile_weight(const Tile& tile, int r, int c, int rows, int cols, int overlap);

Image2D crop_tile(const Image2D& img, const Tile& t);

/// Runs `fn` on every tile and blends the outputs with normalised weights.
Image2D process_tiles(const std::vector<const Image2D*>& inputs, const PatchConfig& cfg,
                      const std::function<Image2D(const std::vector<Image2D>&)>& fn);

/// Normalises a slice, restores it with the DDIM sampler tile by tile, and
/// maps the result back to physical units. `fus` may be null.
Image2D restore_slice(nn::DenoiserNet& net, const nn::NoiseSchedule& sched, const nn::SamplerConfig& sampler,
                      const nn::IntensityNormalizer& norm, const Image2D& fdk, const Image2D* fus,
                      const PatchConfig& patch);

}  // namespace lamino::pipeline
