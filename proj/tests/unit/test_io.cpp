#include <catch_amalgamated.hpp>

#include <fstream>
#include <unistd.h>

#include "lamino/diffusion/unet.hpp"
#include "lamino/error.hpp"
#include "lamino/io.hpp"
#include "support.hpp"

using namespace lamino;
using namespace lamino::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("lamino_io_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(Catch::rngSeed()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected an error");
  return ErrorCategory::usage;
}

VoxelVolume float_volume(const GridSpec& g, std::uint64_t seed) {
  VoxelVolume v = random_volume(g, seed, -2.0, 3.0);
  for (double& x : v.data()) x = static_cast<float>(x);
  return v;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("volumes round-trip bit for bit", "[io]") {
  TempDir tmp;
  GridSpec g{7, 5, 3, 0.01, {0.1, -0.2, 0.0}};
  const VoxelVolume v = float_volume(g, 1);
  const fs::path raw = tmp.path / "vol.raw";
  io::save_volume(raw, v);
  CHECK(fs::exists(tmp.path / "vol.json"));
  CHECK(fs::file_size(raw) == 4 * v.size());
  const VoxelVolume back = io::load_volume(raw);
  CHECK(back == v);
  CHECK(io::read_json(tmp.path / "vol.json")["kind"] == "volume");
}

TEST_CASE("sidecar and payload disagreements are format errors", "[io]") {
  TempDir tmp;
  const VoxelVolume v = float_volume(GridSpec{4, 4, 4}, 2);
  const fs::path raw = tmp.path / "v.raw";
  io::save_volume(raw, v);
  io::json j = io::read_json(io::sidecar_path(raw));
  j["nz"] = 5;
  io::write_text(io::sidecar_path(raw), j.dump());
  CHECK(category_of([&] { io::load_volume(raw); }) == ErrorCategory::format);

  io::write_text(tmp.path / "odd.raw", "abc");
  io::write_text(tmp.path / "odd.json", io::to_json(GridSpec{1, 1, 1}).dump());
  CHECK(category_of([&] { io::load_volume(tmp.path / "odd.raw"); }) == ErrorCategory::format);
  CHECK(category_of([&] { io::load_volume(tmp.path / "missing.raw"); }) == ErrorCategory::io);

  io::write_text(tmp.path / "bad.json", "{ not json");
  CHECK(category_of([&] { io::read_json(tmp.path / "bad.json"); }) == ErrorCategory::config);
}

TEST_CASE("projection sets round-trip with their geometry", "[io]") {
  TempDir tmp;
  ScanGeometry g = small_geometry(3, 5, 4, 0.0);
  g.focus_to_stage_mm.reset();
  ProjectionSet p(g, random_vector(g.projection_size(), 3));
  for (double& x : p.data) x = static_cast<float>(x);
  io::save_projections(tmp.path / "p.raw", p);
  const ProjectionSet back = io::load_projections(tmp.path / "p.raw");
  CHECK(back.geometry == g);
  CHECK(back.data == p.data);
  CHECK(io::read_json(tmp.path / "p.json")["tilt_angle_deg"] == 0.0);
}

TEST_CASE("geometry JSON is strict", "[io]") {
  io::json j = {{"tilt_angle_deg", 20.0}, {"n_views", 90}};
  const ScanGeometry g = io::geometry_from_json(j);
  CHECK(g.tilt_angle_deg == 20.0);
  CHECK(g.n_views == 90);
  CHECK(g.source_to_center_mm == 19.32);
  CHECK(category_of([] { io::geometry_from_json({{"tilt", 1.0}}); }) == ErrorCategory::config);
  CHECK(category_of([] { io::geometry_from_json({{"n_views", "many"}}); }) == ErrorCategory::config);
  CHECK(category_of([] { io::geometry_from_json({{"tilt_angle_deg", 95.0}}); }) == ErrorCategory::geometry);
}

TEST_CASE("checkpoints round-trip the network exactly", "[io][checkpoint]") {
  TempDir tmp;
  nn::DenoiserConfig cfg;
  cfg.base_channels = 4;
  cfg.n_resolutions = 2;
  cfg.embed_dim = 8;
  cfg.groups = 2;
  nn::DenoiserNet net(cfg, 12);
  const fs::path ck = tmp.path / "ck.bin";
  io::save_checkpoint(ck, net, io::json{{"note", "x"}});
  io::Checkpoint meta;
  nn::DenoiserNet back = io::load_checkpoint(ck, &meta);
  CHECK(meta.extra["note"] == "x");
  CHECK(meta.config.base_channels == 4);
  REQUIRE(back.params().size() == net.params().size());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    CHECK(back.params().name(i) == net.params().name(i));
    CHECK(back.params().value(i).data == net.params().value(i).data);
  }
  nn::Tensor xt({1, 1, 4, 4}, 0.3), fdk({1, 1, 4, 4}, -0.1);
  CHECK(back.predict(xt, fdk, nullptr, {5.0}).data == net.predict(xt, fdk, nullptr, {5.0}).data);

  cfg.velocity_head = true;
  cfg.schedule_steps = 50;
  nn::DenoiserNet vel(cfg, 12);
  io::save_checkpoint(tmp.path / "vel.bin", vel, {});
  nn::DenoiserNet vel_back = io::load_checkpoint(tmp.path / "vel.bin");
  CHECK(vel_back.config().velocity_head);
  CHECK(vel_back.config().schedule_steps == 50);
  CHECK(vel_back.predict(xt, fdk, nullptr, {5.0}).data == vel.predict(xt, fdk, nullptr, {5.0}).data);

  const auto bytes = slurp(ck);
  std::vector<char> bad = bytes;
  bad[0] = 'X';
  spit(tmp.path / "bad.bin", bad);
  CHECK(category_of([&] { io::load_checkpoint(tmp.path / "bad.bin"); }) == ErrorCategory::format);
  for (std::size_t cut : {std::size_t{6}, std::size_t{14}, bytes.size() / 2, bytes.size() - 1}) {
    spit(tmp.path / "short.bin", std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
    CHECK(category_of([&] { io::load_checkpoint(tmp.path / "short.bin"); }) == ErrorCategory::format);
  }
  std::vector<char> vers = bytes;
  vers[8] = 9;
  spit(tmp.path / "vers.bin", vers);
  CHECK(category_of([&] { io::load_checkpoint(tmp.path / "vers.bin"); }) == ErrorCategory::format);
}

TEST_CASE("windowed PGM export", "[io][pgm]") {
  TempDir tmp;
  const double lo = 25.5, hi = 284.5;
  Image2D img(2, 4);
  img.data = {lo, hi, 0.0, 1000.0, 155.0, 100.0, 200.0, 26.0};
  const auto px = io::window_image(img, lo, hi, 8);
  CHECK(px[0] == 0);
  CHECK(px[1] == 255);
  CHECK(px[2] == 0);
  CHECK(px[3] == 255);
  CHECK(px[4] == 128);  // 155 sits exactly halfway: 127.5 rounds up
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double clipped = std::clamp(img.data[i], lo, hi);
    CHECK(std::abs(lo + px[i] / 255.0 * (hi - lo) - clipped) <= (hi - lo) / 510.0 + 1e-12);
  }
  io::export_windowed_image(img, lo, hi, tmp.path / "s.pgm");
  const io::GrayImage g = io::read_pgm(tmp.path / "s.pgm");
  CHECK(g.rows == 2);
  CHECK(g.cols == 4);
  CHECK(g.maxval == 255);
  CHECK(std::vector<std::uint16_t>(px.begin(), px.end()) == g.pixels);

  io::export_windowed_image(img, lo, hi, tmp.path / "s16.pgm", 16);
  const io::GrayImage g16 = io::read_pgm(tmp.path / "s16.pgm");
  CHECK(g16.maxval == 65535);
  CHECK(g16.pixels[1] == 65535);
  CHECK(g16.pixels[0] == 0);

  CHECK(category_of([&] { io::window_image(img, 3.0, 2.0, 8); }) == ErrorCategory::usage);
  CHECK(category_of([&] { io::window_image(img, 0.0, 1.0, 12); }) == ErrorCategory::usage);
}
