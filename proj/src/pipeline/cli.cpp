#include "lamino/pipeline/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "lamino/error.hpp"
#include "lamino/metrics.hpp"
#include "lamino/pipeline/config.hpp"
#include "lamino/pipeline/patches.hpp"

namespace lamino::pipeline {

namespace fs = std::filesystem;
using io::json;

namespace {

constexpr int kManifestVersion = 1;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file overriding defaults");
  sub->add_option("--seed", c.seed, "Master seed for every random stream of the run");
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_flag("--force", c.force, "Allow writing into a non-empty output directory");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (c.seed) apply_seed(cfg, *c.seed);
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  return cfg;
}

void prepare_out(const Common& c) {
  const fs::path out = c.out;
  if (fs::exists(out)) {
    require(fs::is_directory(out), ErrorCategory::io, out.string() + " exists and is not a directory");
    require(c.force || fs::is_empty(out), ErrorCategory::usage,
            "output directory " + out.string() + " is not empty (pass --force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec, ErrorCategory::io, "cannot create " + out.string() + ": " + ec.message());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Collects what a subcommand produced and writes manifest.json at the end.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args, const RunConfig& cfg, const Common& c)
      : out_(c.out) {
    j_["format_version"] = kManifestVersion;
    j_["command"] = std::move(command);
    j_["args"] = args;
    j_["config"] = to_json(cfg);
    j_["seeds"] = {{"phantom", cfg.phantom.rng_seed},
                   {"noise", cfg.noise.rng_seed},
                   {"train", cfg.train.rng_seed},
                   {"sampler", cfg.sampler.rng_seed}};
    j_["inputs"] = json::object();
    j_["artifacts"] = json::array();
    j_["started_utc"] = utc_now();
  }

  void input(const std::string& role, const fs::path& p) { j_["inputs"][role] = p.string(); }
  void artifact(const fs::path& p) { j_["artifacts"].push_back(p.lexically_relative(out_).string()); }
  json& info() { return j_["info"]; }

  void write() {
    j_["finished_utc"] = utc_now();
    j_["artifacts"].push_back("manifest.json");
    io::write_text(out_ / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  fs::path out_;
  json j_;
};

void save_vol(Manifest& m, const fs::path& raw, const VoxelVolume& v) {
  io::save_volume(raw, v);
  m.artifact(raw);
  m.artifact(io::sidecar_path(raw));
}

GridSpec grid_from(const RunConfig& cfg, const std::string& like) {
  if (like.empty()) return cfg.phantom.grid();
  return io::load_volume(like).grid();
}

std::vector<int> parse_slices(const std::string& text, int nz) {
  std::vector<int> out;
  if (text.empty()) {
    for (int k = 0; k < nz; ++k) out.push_back(k);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int k = 0;
    try {
      std::size_t used = 0;
      k = std::stoi(item, &used);
      require(used == item.size(), ErrorCategory::usage, "bad slice index '" + item + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCategory::usage, "bad slice index '" + item + "'");
    }
    require(k >= 0 && k < nz, ErrorCategory::usage, "slice index " + item + " out of range");
    out.push_back(k);
  }
  require(!out.empty(), ErrorCategory::usage, "empty slice list");
  return out;
}

/// Reference voxels on the grid of `rec`: exact crop when the grids are
/// voxel-aligned, trilinear resampling otherwise.
VoxelVolume align_reference(const VoxelVolume& ref, const GridSpec& target) {
  const GridSpec& g = ref.grid();
  if (g == target) return ref;
  if (std::abs(g.voxel_size_mm - target.voxel_size_mm) < 1e-12) {
    const Vec3 d = (target.first_center() - g.first_center()) * (1.0 / g.voxel_size_mm);
    const std::array<double, 3> off{d.x, d.y, d.z};
    std::array<int, 3> io{};
    bool aligned = true;
    for (int a = 0; a < 3; ++a) {
      io[a] = static_cast<int>(std::lround(off[a]));
      aligned = aligned && std::abs(off[a] - io[a]) < 1e-6;
    }
    const auto dims = target.dims(), full = g.dims();
    for (int a = 0; a < 3; ++a) aligned = aligned && io[a] >= 0 && io[a] + dims[a] <= full[a];
    if (aligned) return crop(ref, io, dims);
  }
  return resample(ref, target);
}

// ---- subcommands -------------------------------------------------------

int run_phantom(const Common& c, const std::vector<std::string>& args) {
  const RunConfig cfg = resolve_config(c);
  prepare_out(c);
  Manifest m("phantom", args, cfg, c);
  save_vol(m, fs::path(c.out) / "phantom.raw", generate_pcb_phantom(cfg.phantom));
  m.write();
  return 0;
}

int run_project(const Common& c, const std::vector<std::string>& args, const std::string& volume,
                const std::string& modality) {
  const RunConfig cfg = resolve_config(c);
  require(modality == "cl" || modality == "ct", ErrorCategory::usage, "modality must be cl or ct");
  const VoxelVolume vol = io::load_volume(volume);
  prepare_out(c);
  ScanGeometry geom = modality == "ct" ? ct_mode(cfg.geometry) : cfg.geometry;
  if (cfg.fit_detector) geom = fit_detector(geom, vol.grid(), cfg.detector_margin_px);
  ProjectionSet p = forward_project(vol, geom);
  if (cfg.noise.kind != NoiseKind::none) p = apply_noise(p, cfg.noise);
  Manifest m("project", args, cfg, c);
  m.input("volume", volume);
  m.info()["modality"] = modality;
  const fs::path raw = fs::path(c.out) / ("projections_" + modality + ".raw");
  io::save_projections(raw, p);
  m.artifact(raw);
  m.artifact(io::sidecar_path(raw));
  m.write();
  return 0;
}

int run_recon(const Common& c, const std::vector<std::string>& args, const std::string& projections,
              const std::string& method, const std::string& like) {
  const RunConfig cfg = resolve_config(c);
  require(method == "fdk" || method == "sart", ErrorCategory::usage, "method must be fdk or sart");
  const ProjectionSet p = io::load_projections(projections);
  const GridSpec grid = grid_from(cfg, like);
  prepare_out(c);
  const VoxelVolume rec = method == "fdk" ? fdk_reconstruct(p, grid, cfg.filter) : sart_reconstruct(p, grid, cfg.sart);
  Manifest m("recon", args, cfg, c);
  m.input("projections", projections);
  if (!like.empty()) m.input("grid", like);
  m.info()["method"] = method;
  save_vol(m, fs::path(c.out) / ("recon_" + method + ".raw"), rec);
  m.write();
  return 0;
}

int run_fuse(const Common& c, const std::vector<std::string>& args, const std::string& ct, const std::string& cl,
             const std::string& like) {
  RunConfig cfg = resolve_config(c);
  const ProjectionSet y_ct = io::load_projections(ct);
  const ProjectionSet y_cl = io::load_projections(cl);
  cfg.fusion.object_grid = grid_from(cfg, like);
  prepare_out(c);
  const FusionGrids grids = make_fusion_grids(cfg.fusion);
  const FusionResult r = dual_scale_fuse(y_ct, y_cl, y_ct.geometry, y_cl.geometry,
                                         default_calibration_regions(grids.calibration), cfg.fusion);
  Manifest m("fuse", args, cfg, c);
  m.input("ct", ct);
  m.input("cl", cl);
  m.info()["mean_ct"] = r.mean_ct;
  m.info()["mean_cl"] = r.mean_cl;
  m.info()["calibration_ratio"] = r.calibration_ratio;
  save_vol(m, fs::path(c.out) / "fusion.raw", r.x_fus);
  save_vol(m, fs::path(c.out) / "coarse.raw", r.x_coarse);
  m.write();
  return 0;
}

int run_train(const Common& c, const std::vector<std::string>& args, const std::string& fdk_path,
              const std::string& fus_path, const std::string& slices_text, std::ostream& out) {
  const RunConfig cfg = resolve_config(c);
  const VoxelVolume fdk = io::load_volume(fdk_path);
  const VoxelVolume fus = io::load_volume(fus_path);
  require(fdk.grid().dims() == fus.grid().dims(), ErrorCategory::shape, "FDK and fusion volumes differ in shape");
  const auto slices = parse_slices(slices_text, fdk.nz());
  prepare_out(c);

  std::vector<double> all;
  for (int k : slices) {
    const Image2D a = extract_slice(fdk, Axis::z, k), b = extract_slice(fus, Axis::z, k);
    all.insert(all.end(), a.data.begin(), a.data.end());
    all.insert(all.end(), b.data.begin(), b.data.end());
  }
  const auto norm = nn::IntensityNormalizer::fit(all);
  nn::TrainingSet set;
  set.rows = fdk.ny();
  set.cols = fdk.nx();
  for (int k : slices)
    set.pairs.push_back({norm.to_unit(extract_slice(fus, Axis::z, k).data),
                         norm.to_unit(extract_slice(fdk, Axis::z, k).data)});

  const auto sched = nn::build_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max);
  nn::DenoiserNet net(cfg.network, cfg.train.rng_seed + 1);
  nn::Trainer trainer(net, sched, cfg.train);
  std::ostringstream log;
  log << nn::train_log_header() << '\n';
  double running = 0.0;
  int in_window = 0;
  for (int step = 1; step <= cfg.train.iterations; ++step) {
    running += trainer.step(set).loss;
    ++in_window;
    if (step % cfg.log_every == 0 || step == cfg.train.iterations) {
      const double mf = static_cast<double>(trainer.masked_total()) / static_cast<double>(trainer.sample_total());
      log << nn::train_log_row({step, running / in_window, nn::learning_rate_at(cfg.train, step), mf}) << '\n';
      running = 0.0;
      in_window = 0;
    }
  }
  require(net.all_finite(), ErrorCategory::numeric, "training diverged (non-finite parameters)");

  Manifest m("train", args, cfg, c);
  m.input("fdk", fdk_path);
  m.input("fusion", fus_path);
  json extra;
  extra["normalizer"] = {{"lo", norm.lo}, {"hi", norm.hi}};
  extra["schedule"] = {{"T", cfg.schedule.T}, {"beta_min", cfg.schedule.beta_min}, {"beta_max", cfg.schedule.beta_max}};
  extra["slices"] = slices;
  const fs::path ck = fs::path(c.out) / "checkpoint.bin", lp = fs::path(c.out) / "train_log.csv";
  io::save_checkpoint(ck, net, extra);
  io::write_text(lp, log.str());
  m.artifact(ck);
  m.artifact(lp);
  m.info()["normalizer"] = extra["normalizer"];
  m.write();
  out << "trained " << cfg.train.iterations << " steps on " << slices.size() << " slices\n";
  return 0;
}

int run_restore(const Common& c, const std::vector<std::string>& args, const std::string& ck_path,
                const std::string& fdk_path, const std::string& fus_path, const std::string& slices_text) {
  const RunConfig cfg = resolve_config(c);
  io::Checkpoint meta;
  nn::DenoiserNet net = io::load_checkpoint(ck_path, &meta);
  const VoxelVolume fdk = io::load_volume(fdk_path);
  std::optional<VoxelVolume> fus;
  if (!fus_path.empty()) {
    fus = io::load_volume(fus_path);
    require(fus->grid().dims() == fdk.grid().dims(), ErrorCategory::shape, "FDK and fusion volumes differ in shape");
  }
  const auto slices = parse_slices(slices_text, fdk.nz());
  require(meta.extra.contains("normalizer") && meta.extra.contains("schedule"), ErrorCategory::format,
          "checkpoint lacks normaliser or schedule metadata");
  const nn::IntensityNormalizer norm{meta.extra["normalizer"].at("lo").get<double>(),
                                     meta.extra["normalizer"].at("hi").get<double>()};
  const auto& s = meta.extra["schedule"];
  const auto sched = nn::build_schedule(s.at("T").get<int>(), s.at("beta_min").get<double>(),
                                        s.at("beta_max").get<double>());
  nn::validate(cfg.sampler, sched);
  prepare_out(c);

  VoxelVolume restored = fdk;
  for (int k : slices) {
    const Image2D a = extract_slice(fdk, Axis::z, k);
    std::optional<Image2D> b;
    if (fus) b = extract_slice(*fus, Axis::z, k);
    insert_slice(restored, Axis::z, k,
                 restore_slice(net, sched, cfg.sampler, norm, a, b ? &*b : nullptr, cfg.patch));
  }
  Manifest m("restore", args, cfg, c);
  m.input("checkpoint", ck_path);
  m.input("fdk", fdk_path);
  if (fus) m.input("fusion", fus_path);
  m.info()["slices"] = slices;
  save_vol(m, fs::path(c.out) / "restored.raw", restored);
  m.write();
  return 0;
}

int run_metrics(const Common& c, const std::vector<std::string>& args, const std::string& ref_path,
                const std::vector<std::string>& recs) {
  const RunConfig cfg = resolve_config(c);
  const VoxelVolume ref = io::load_volume(ref_path);
  require(!recs.empty(), ErrorCategory::usage, "at least one --rec name=path is required");
  std::vector<std::pair<std::string, VoxelVolume>> loaded;
  for (const std::string& r : recs) {
    const auto eq = r.find('=');
    const std::string name = eq == std::string::npos ? fs::path(r).stem().string() : r.substr(0, eq);
    const std::string path = eq == std::string::npos ? r : r.substr(eq + 1);
    require(!name.empty() && name.find(',') == std::string::npos, ErrorCategory::usage, "bad method name in '" + r + "'");
    loaded.emplace_back(name, io::load_volume(path));
  }
  prepare_out(c);
  std::ostringstream csv;
  csv << metrics_csv_header() << '\n';
  for (const auto& [name, rec] : loaded) {
    const VoxelVolume aligned = align_reference(ref, rec.grid());
    csv << metrics_csv_row(name, evaluate_volume(rec, aligned, cfg.geometry.tilt_angle_deg)) << '\n';
  }
  Manifest m("metrics", args, cfg, c);
  m.input("reference", ref_path);
  const fs::path p = fs::path(c.out) / "metrics.csv";
  io::write_text(p, csv.str());
  m.artifact(p);
  m.write();
  return 0;
}

int run_spectrum(const Common& c, const std::vector<std::string>& args, const std::string& volume) {
  const RunConfig cfg = resolve_config(c);
  const VoxelVolume vol = io::load_volume(volume);
  prepare_out(c);
  const double half = cfg.geometry.tilt_angle_deg;
  require(half > 0.0, ErrorCategory::config, "spectrum needs a laminography tilt above 0 degrees");
  const SpectralMask mask = missing_cone_mask(vol.grid().dims(), half);
  json j;
  j["cone_half_angle_deg"] = half;
  j["missing_cone_energy_fraction"] = missing_cone_energy(vol, mask);
  j["masked_frequency_fraction"] = mask.masked_fraction();
  j["band_limited_masked_fraction"] = mask.band_limited_masked_fraction();
  Manifest m("spectrum", args, cfg, c);
  m.input("volume", volume);
  const fs::path p = fs::path(c.out) / "spectrum.json";
  io::write_text(p, j.dump(2) + "\n");
  m.artifact(p);
  m.write();
  return 0;
}

int run_export(const Common& c, const std::vector<std::string>& args, const std::string& volume, const std::string& axis,
               std::optional<int> index, const std::vector<double>& window, std::optional<int> bits) {
  RunConfig cfg = resolve_config(c);
  const VoxelVolume vol = io::load_volume(volume);
  Axis ax;
  int n;
  if (axis == "x") { ax = Axis::x; n = vol.nx(); }
  else if (axis == "y") { ax = Axis::y; n = vol.ny(); }
  else if (axis == "z") { ax = Axis::z; n = vol.nz(); }
  else fail(ErrorCategory::usage, "axis must be x, y or z");
  const int k = index.value_or(n / 2);
  require(k >= 0 && k < n, ErrorCategory::usage, "slice index out of range");
  if (!window.empty()) {
    require(window.size() == 2, ErrorCategory::usage, "--window takes two values");
    cfg.export_image.window_lo = window[0];
    cfg.export_image.window_hi = window[1];
  }
  if (bits) cfg.export_image.bits = *bits;
  require(cfg.export_image.window_hi > cfg.export_image.window_lo, ErrorCategory::usage, "display window must satisfy hi > lo");
  prepare_out(c);
  Manifest m("export", args, cfg, c);
  m.input("volume", volume);
  const fs::path p = fs::path(c.out) / ("slice_" + axis + std::to_string(k) + ".pgm");
  io::export_windowed_image(extract_slice(vol, ax, k), cfg.export_image.window_lo, cfg.export_image.window_hi, p,
                            cfg.export_image.bits);
  m.artifact(p);
  m.write();
  return 0;
}

}  // namespace

int exit_code_for(const std::string& category) {
  if (category == "usage") return 2;
  if (category == "config") return 3;
  if (category == "io") return 4;
  if (category == "format") return 5;
  return 1;
}

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Laminography reconstruction and diffusion restoration toolkit", "lamino"};
  app.require_subcommand(1);
  Common c;

  auto* phantom = app.add_subcommand("phantom", "Generate a multilayer PCB phantom");
  add_common(phantom, c);

  std::string volume, modality = "cl";
  auto* project = app.add_subcommand("project", "Simulate projections of a volume");
  add_common(project, c);
  project->add_option("--volume", volume, "Input volume (.raw with sidecar)")->required();
  project->add_option("--modality", modality, "cl or ct")->check(CLI::IsMember({"cl", "ct"}));

  std::string projections, method = "fdk", like;
  auto* recon = app.add_subcommand("recon", "Reconstruct a volume from projections");
  add_common(recon, c);
  recon->add_option("--projections", projections, "Projection file")->required();
  recon->add_option("--method", method, "fdk or sart")->check(CLI::IsMember({"fdk", "sart"}));
  recon->add_option("--like", like, "Volume whose grid the reconstruction uses");

  std::string ct, cl;
  auto* fuse = app.add_subcommand("fuse", "Dual-scale CT/CL fusion");
  add_common(fuse, c);
  fuse->add_option("--ct", ct, "CT projections")->required();
  fuse->add_option("--cl", cl, "CL projections")->required();
  fuse->add_option("--like", like, "Volume whose grid is the full object grid");

  std::string fdk, fus, slices;
  auto* train = app.add_subcommand("train", "Train the conditional denoiser");
  add_common(train, c);
  train->add_option("--fdk", fdk, "FDK volume (condition)")->required();
  train->add_option("--fusion", fus, "Fusion volume (target)")->required();
  train->add_option("--slices", slices, "Comma-separated z slices (default all)");

  std::string checkpoint;
  auto* restore = app.add_subcommand("restore", "Restore FDK slices with the trained denoiser");
  add_common(restore, c);
  restore->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  restore->add_option("--fdk", fdk, "FDK volume")->required();
  restore->add_option("--fusion", fus, "Optional fusion volume used as second condition");
  restore->add_option("--slices", slices, "Comma-separated z slices (default all)");

  std::string ref;
  std::vector<std::string> recs;
  auto* metrics = app.add_subcommand("metrics", "Evaluate reconstructions against a reference");
  add_common(metrics, c);
  metrics->add_option("--ref", ref, "Reference volume")->required();
  metrics->add_option("--rec", recs, "name=path of a reconstruction (repeatable)")->required();

  auto* spectrum = app.add_subcommand("spectrum", "Missing-cone spectral energy of a volume");
  add_common(spectrum, c);
  spectrum->add_option("--volume", volume, "Input volume")->required();

  std::string axis = "z";
  std::optional<int> index, bits;
  std::vector<double> window;
  auto* exp = app.add_subcommand("export", "Export a windowed slice as PGM");
  add_common(exp, c);
  exp->add_option("--volume", volume, "Input volume")->required();
  exp->add_option("--axis", axis, "x, y or z");
  exp->add_option("--index", index, "Slice index (default middle)");
  exp->add_option("--window", window, "Display window lo hi")->expected(2);
  exp->add_option("--bits", bits, "8 or 16");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      std::string msg = e.what();
      for (char& ch : msg)
        if (ch == '\n') ch = ' ';
      fail(ErrorCategory::usage, msg);
    }
    if (phantom->parsed()) return run_phantom(c, args);
    if (project->parsed()) return run_project(c, args, volume, modality);
    if (recon->parsed()) return run_recon(c, args, projections, method, like);
    if (fuse->parsed()) return run_fuse(c, args, ct, cl, like);
    if (train->parsed()) return run_train(c, args, fdk, fus, slices, out);
    if (restore->parsed()) return run_restore(c, args, checkpoint, fdk, fus, slices);
    if (metrics->parsed()) return run_metrics(c, args, ref, recs);
    if (spectrum->parsed()) return run_spectrum(c, args, volume);
    if (exp->parsed()) return run_export(c, args, volume, axis, index, window, bits);
    fail(ErrorCategory::usage, "no subcommand given");
  } catch (const Error& e) {
    const std::string cat(category_name(e.category()));
    err << "error: " << cat << ": " << e.what() << '\n';
    return exit_code_for(cat);
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
    return exit_code_for("io");
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace lamino::pipeline
