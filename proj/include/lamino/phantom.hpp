#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lamino/volume.hpp"

namespace lamino {

/// Parameters of the stochastic multilayer PCB generator. Lengths are in voxels.
struct PhantomSpec {
  int nx = 256;
  int ny = 256;
  int nz = 64;
  double voxel_size_mm = 0.005;

  int n_layers = 6;
  int layer_thickness = 2;
  int z_margin = 2;        // air above and below the substrate slab
  int lateral_margin = 4;  // air border around the board

  double air_mu = 0.0;
  double substrate_mu = 0.2;
  double copper_mu = 1.0;

  int trace_width = 2;
  int clearance = 2;
  double trace_density = 0.35;  // fraction of routing lattice nodes to fill, (0, 1]
  int max_segment = 12;         // lattice steps before a forced turn
  bool pads = true;

  int via_count_min = 4;
  int via_count_max = 10;
  int via_radius = 2;

  std::uint64_t rng_seed = 0;

  GridSpec grid() const;
};

void validate(const PhantomSpec& spec);

/// Half-open z ranges [z0, z1) of the copper layers, bottom to top.
std::vector<std::pair<int, int>> pcb_layer_bands(const PhantomSpec& spec);

/// Generates a board phantom: a substrate slab with `n_layers` copper planes
/// of Manhattan random-walk traces, square pads at trace ends, and copper via
/// cylinders joining random layer pairs. Output values are exactly one of
/// air_mu, substrate_mu, copper_mu. Deterministic in rng_seed.
VoxelVolume generate_pcb_phantom(const PhantomSpec& spec);

/// Uniform cylinder about the z axis (useful for CT sanity checks).
VoxelVolume cylinder_phantom(const GridSpec& grid, double radius_mm, double half_height_mm, double mu);

}  // namespace lamino
