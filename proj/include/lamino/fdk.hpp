#pragma once

#include <vector>

#include "lamino/projector.hpp"
#include "lamino/volume.hpp"

namespace lamino {

enum class RampKernel { ram_lak, hann_ram_lak };

struct FilterSpec {
  RampKernel kernel = RampKernel::ram_lak;
  /// Power-of-two factor applied to the next power of two >= detector_cols.
  int zero_pad = 2;
  /// Explicit padded length; 0 selects zero_pad * next_pow2(cols).
  int padded_length = 0;
};

/// Padded row length used by ramp_filter for `cols` detector columns.
int padded_length(const FilterSpec& spec, int cols);

/// Spatial Ram-Lak taps h[n] for pitch tau: 1/(4 tau^2) at 0, -1/(pi n tau)^2
/// at odd n, 0 at even n.
double ram_lak_tap(int n, double tau);

/// Multiplies every pixel by D_sd / sqrt(D_sd^2 + u^2 + v^2).
ProjectionSet cosine_weight(const ProjectionSet& projs);

/// Convolves every detector row with the discrete ramp kernel (no pitch
/// factor). Rows are extended with their edge values to the padded length,
/// and the kernel's far tap at n = P/2 absorbs the truncation residue so the
/// circulant kernel sums to zero; a constant row therefore maps to zero while
/// in-row impulse responses equal the closed-form taps.
ProjectionSet ramp_filter(const ProjectionSet& projs, const FilterSpec& spec = {});

/// Weighted filtered backprojection: cosine weight, ramp filter, then
/// voxel-driven backprojection with bilinear detector interpolation and
/// D_so^2 / U^2 distance weights, scaled by pi cos(tilt) / n_views.
VoxelVolume fdk_reconstruct(const ProjectionSet& projs, const GridSpec& grid, const FilterSpec& spec = {});

/// As above, but first checks that `geom` matches the geometry bound to `projs`.
VoxelVolume fdk_reconstruct(const ProjectionSet& projs, const ScanGeometry& geom, const GridSpec& grid,
                            const FilterSpec& spec = {});

}  // namespace lamino
