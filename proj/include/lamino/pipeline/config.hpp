#pragma once

#include <cstdint>
#include <filesystem>

#include "lamino/diffusion/sampler.hpp"
#include "lamino/diffusion/train.hpp"
#include "lamino/diffusion/unet.hpp"
#include "lamino/fdk.hpp"
#include "lamino/geometry.hpp"
#include "lamino/io.hpp"
#include "lamino/iterative.hpp"
#include "lamino/phantom.hpp"
#include "lamino/projector.hpp"

namespace lamino::pipeline {

struct ScheduleSpec {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct PatchConfig {
  int size = 64;
  int overlap = 8;
};

void validate(const PatchConfig& p);

struct ExportSettings {
  double window_lo = 25.5;
  double window_hi = 284.5;
  int bits = 8;
};

/// Every tunable of a run. Loaded from JSON with one object per section;
/// keys not listed in the schema are rejected.
struct RunConfig {
  ScanGeometry geometry;
  bool fit_detector = true;  // shrink the detector to the object's shadow
  int detector_margin_px = 2;
  PhantomSpec phantom;
  NoiseModel noise;
  FilterSpec filter;
  SartConfig sart;
  FusionConfig fusion;  // object_grid is taken from the input volume at run time
  nn::DenoiserConfig network = [] {
    nn::DenoiserConfig c;
    c.velocity_head = true;
    return c;
  }();
  ScheduleSpec schedule;
  nn::TrainConfig train;
  int log_every = 50;
  nn::SamplerConfig sampler;
  PatchConfig patch;
  ExportSettings export_image;
};

/// Overlays `j` onto `base`. Throws Error(config) for unknown keys or bad types.
RunConfig apply_config(const io::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
io::json to_json(const RunConfig& c);

/// Sets every seed of the run from one master seed (phantom, noise, init, training, sampler).
void apply_seed(RunConfig& c, std::uint64_t seed);

}  // namespace lamino::pipeline
