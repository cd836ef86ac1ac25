#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lamino/diffusion/unet.hpp"
#include "lamino/geometry.hpp"
#include "lamino/projector.hpp"
#include "lamino/volume.hpp"

namespace lamino::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

json to_json(const ScanGeometry& g);
/// Strict: every key must be known; missing keys keep the defaults of `base`.
ScanGeometry geometry_from_json(const json& j, const ScanGeometry& base = {});

json to_json(const GridSpec& g);
GridSpec grid_from_json(const json& j);

/// `path` with its extension replaced by ".json".
fs::path sidecar_path(const fs::path& raw);

/// Raw little-endian float32, x fastest, plus a JSON sidecar with dims and voxel size.
void save_volume(const fs::path& raw, const VoxelVolume& vol);
VoxelVolume load_volume(const fs::path& raw);

/// Raw little-endian float32, view-major, plus a geometry sidecar.
void save_projections(const fs::path& raw, const ProjectionSet& p);
ProjectionSet load_projections(const fs::path& raw);

void write_f32(const fs::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const fs::path& path);

/// Binary checkpoint: magic, version, hyperparameter JSON, then a
/// (name, shape, offset) table and the float32 payload.
void save_checkpoint(const fs::path& path, const nn::DenoiserNet& net, const json& extra = json::object());

struct Checkpoint {
  nn::DenoiserConfig config;
  json extra;
};

/// Loads parameters into a freshly constructed network.
nn::DenoiserNet load_checkpoint(const fs::path& path, Checkpoint* meta = nullptr);

json to_json(const nn::DenoiserConfig& c);
nn::DenoiserConfig denoiser_config_from_json(const json& j);

/// Clips to [lo, hi] and maps affinely to 0..maxval (255 or 65535).
std::vector<std::uint16_t> window_image(const Image2D& img, double lo, double hi, int bits);

/// Writes a binary PGM (P5) of the windowed slice. bits is 8 or 16.
void export_windowed_image(const Image2D& slice, double lo, double hi, const fs::path& path, int bits = 8);

struct GrayImage {
  int rows = 0;
  int cols = 0;
  int maxval = 0;
  std::vector<std::uint16_t> pixels;
};

GrayImage read_pgm(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
json read_json(const fs::path& path);

}  // namespace lamino::io
