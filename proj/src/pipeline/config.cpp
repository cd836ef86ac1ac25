#include "lamino/pipeline/config.hpp"

#include <set>
#include <string>

#include "lamino/error.hpp"

namespace lamino::pipeline {

using io::json;

namespace {

/// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    require(j_.is_object(), ErrorCategory::config, "config section '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      require(seen_.count(k) != 0, ErrorCategory::config, "unknown config key '" + name_ + "." + k + "'");
  }

  template <class T>
  Section& get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCategory::config, "bad value for config key '" + name_ + "." + key + "'");
    }
    return *this;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::array<double, 3> vec_of(const Vec3& v) { return {v.x, v.y, v.z}; }

Vec3 vec_from(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

std::string kernel_name(RampKernel k) { return k == RampKernel::ram_lak ? "ram_lak" : "hann"; }

std::string noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::poisson_transmission: return "poisson";
  }
  return "none";
}

}  // namespace

void validate(const PatchConfig& p) {
  require(p.size >= 8, ErrorCategory::config, "patch size must be at least 8");
  require(p.overlap >= 0 && 2 * p.overlap < p.size, ErrorCategory::config, "patch overlap must be below half the size");
}

RunConfig apply_config(const json& j, RunConfig c) {
  Section top(j, "config");
  if (top.has("geometry")) {
    const json& g = top.at("geometry");
    require(g.is_object(), ErrorCategory::config, "config section 'geometry' must be an object");
    json geo = g;
    Section s(g, "geometry");
    s.get("fit_detector", c.fit_detector).get("detector_margin_px", c.detector_margin_px);
    geo.erase("fit_detector");
    geo.erase("detector_margin_px");
    for (const auto& [k, v] : geo.items()) s.has(k.c_str());
    c.geometry = io::geometry_from_json(geo, c.geometry);
  }
  if (top.has("phantom")) {
    Section s(top.at("phantom"), "phantom");
    auto& p = c.phantom;
    s.get("nx", p.nx).get("ny", p.ny).get("nz", p.nz).get("voxel_size_mm", p.voxel_size_mm);
    s.get("n_layers", p.n_layers).get("layer_thickness", p.layer_thickness).get("z_margin", p.z_margin);
    s.get("lateral_margin", p.lateral_margin).get("air_mu", p.air_mu).get("substrate_mu", p.substrate_mu);
    s.get("copper_mu", p.copper_mu).get("trace_width", p.trace_width).get("clearance", p.clearance);
    s.get("trace_density", p.trace_density).get("max_segment", p.max_segment).get("pads", p.pads);
    s.get("via_count_min", p.via_count_min).get("via_count_max", p.via_count_max).get("via_radius", p.via_radius);
    s.get("seed", p.rng_seed);
  }
  if (top.has("noise")) {
    Section s(top.at("noise"), "noise");
    std::string kind = noise_name(c.noise.kind);
    s.get("kind", kind).get("sigma", c.noise.sigma).get("i0", c.noise.i0).get("seed", c.noise.rng_seed);
    if (kind == "none") c.noise.kind = NoiseKind::none;
    else if (kind == "gaussian") c.noise.kind = NoiseKind::gaussian;
    else if (kind == "poisson") c.noise.kind = NoiseKind::poisson_transmission;
    else fail(ErrorCategory::config, "noise.kind must be none, gaussian or poisson");
  }
  if (top.has("filter")) {
    Section s(top.at("filter"), "filter");
    std::string kernel = kernel_name(c.filter.kernel);
    s.get("kernel", kernel).get("zero_pad", c.filter.zero_pad).get("padded_length", c.filter.padded_length);
    if (kernel == "ram_lak") c.filter.kernel = RampKernel::ram_lak;
    else if (kernel == "hann") c.filter.kernel = RampKernel::hann_ram_lak;
    else fail(ErrorCategory::config, "filter.kernel must be ram_lak or hann");
  }
  if (top.has("sart")) {
    Section s(top.at("sart"), "sart");
    s.get("n_iterations", c.sart.n_iterations).get("n_subsets", c.sart.n_subsets);
    s.get("lambda", c.sart.relaxation_lambda).get("nonnegativity", c.sart.nonnegativity);
    s.get("epsilon_norm", c.sart.epsilon_norm);
  }
  if (top.has("fusion")) {
    Section s(top.at("fusion"), "fusion");
    auto& f = c.fusion;
    s.get("n_iterations", f.n_iterations).get("n_subsets", f.n_subsets).get("lambda", f.relaxation_lambda);
    s.get("coarse_factor", f.coarse_factor).get("nonnegativity", f.nonnegativity).get("calibrate", f.calibrate);
    s.get("epsilon_norm", f.epsilon_norm).get("calibration_z_extension", f.calibration_z_extension);
    std::string sched = to_string(f.subset_schedule);
    s.get("subset_schedule", sched);
    f.subset_schedule = parse_subset_schedule(sched);
    std::array<double, 3> lo = vec_of(f.roi.lo_mm), hi = vec_of(f.roi.hi_mm);
    s.get("roi_lo_mm", lo).get("roi_hi_mm", hi);
    f.roi = {vec_from(lo), vec_from(hi)};
  }
  if (top.has("network")) c.network = io::denoiser_config_from_json(top.at("network"));
  if (top.has("schedule")) {
    Section s(top.at("schedule"), "schedule");
    s.get("T", c.schedule.T).get("beta_min", c.schedule.beta_min).get("beta_max", c.schedule.beta_max);
  }
  // The schedule section is authoritative for the velocity head.
  c.network.schedule_steps = c.schedule.T;
  c.network.beta_min = c.schedule.beta_min;
  c.network.beta_max = c.schedule.beta_max;
  if (top.has("train")) {
    Section s(top.at("train"), "train");
    auto& t = c.train;
    s.get("lr", t.lr).get("batch_size", t.batch_size).get("iterations", t.iterations);
    s.get("uncond_prob", t.uncond_prob).get("fus_drop_prob", t.fus_drop_prob).get("seed", t.rng_seed);
    s.get("weight_decay", t.weight_decay).get("final_lr_fraction", t.final_lr_fraction).get("log_every", c.log_every);
  }
  if (top.has("sampler")) {
    Section s(top.at("sampler"), "sampler");
    s.get("n_steps", c.sampler.n_steps).get("guidance_scale", c.sampler.guidance_scale).get("seed", c.sampler.rng_seed);
    s.get("clip_x0", c.sampler.clip_x0).get("clip_min", c.sampler.clip_min).get("clip_max", c.sampler.clip_max);
  }
  if (top.has("patch")) {
    Section s(top.at("patch"), "patch");
    s.get("size", c.patch.size).get("overlap", c.patch.overlap);
  }
  if (top.has("export")) {
    Section s(top.at("export"), "export");
    s.get("window_lo", c.export_image.window_lo).get("window_hi", c.export_image.window_hi).get("bits", c.export_image.bits);
  }

  validate(c.phantom);
  validate(c.noise);
  validate(c.sart);
  nn::validate(c.train);
  validate(c.patch);
  require(c.detector_margin_px >= 0, ErrorCategory::config, "detector_margin_px must be non-negative");
  require(c.log_every >= 1, ErrorCategory::config, "train.log_every must be positive");
  require(c.export_image.window_hi > c.export_image.window_lo, ErrorCategory::config, "export window must satisfy hi > lo");
  require(c.export_image.bits == 8 || c.export_image.bits == 16, ErrorCategory::config, "export.bits must be 8 or 16");
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  return apply_config(io::read_json(path), std::move(base));
}

json to_json(const RunConfig& c) {
  json j;
  j["geometry"] = io::to_json(c.geometry);
  j["geometry"]["fit_detector"] = c.fit_detector;
  j["geometry"]["detector_margin_px"] = c.detector_margin_px;
  const auto& p = c.phantom;
  j["phantom"] = {{"nx", p.nx},
                  {"ny", p.ny},
                  {"nz", p.nz},
                  {"voxel_size_mm", p.voxel_size_mm},
                  {"n_layers", p.n_layers},
                  {"layer_thickness", p.layer_thickness},
                  {"z_margin", p.z_margin},
                  {"lateral_margin", p.lateral_margin},
                  {"air_mu", p.air_mu},
                  {"substrate_mu", p.substrate_mu},
                  {"copper_mu", p.copper_mu},
                  {"trace_width", p.trace_width},
                  {"clearance", p.clearance},
                  {"trace_density", p.trace_density},
                  {"max_segment", p.max_segment},
                  {"pads", p.pads},
                  {"via_count_min", p.via_count_min},
                  {"via_count_max", p.via_count_max},
                  {"via_radius", p.via_radius},
                  {"seed", p.rng_seed}};
  j["noise"] = {{"kind", noise_name(c.noise.kind)},
                {"sigma", c.noise.sigma},
                {"i0", c.noise.i0},
                {"seed", c.noise.rng_seed}};
  j["filter"] = {{"kernel", kernel_name(c.filter.kernel)},
                 {"zero_pad", c.filter.zero_pad},
                 {"padded_length", c.filter.padded_length}};
  j["sart"] = {{"n_iterations", c.sart.n_iterations},
               {"n_subsets", c.sart.n_subsets},
               {"lambda", c.sart.relaxation_lambda},
               {"nonnegativity", c.sart.nonnegativity},
               {"epsilon_norm", c.sart.epsilon_norm}};
  const auto& f = c.fusion;
  j["fusion"] = {{"n_iterations", f.n_iterations},
                 {"n_subsets", f.n_subsets},
                 {"lambda", f.relaxation_lambda},
                 {"coarse_factor", f.coarse_factor},
                 {"nonnegativity", f.nonnegativity},
                 {"calibrate", f.calibrate},
                 {"calibration_z_extension", f.calibration_z_extension},
                 {"epsilon_norm", f.epsilon_norm},
                 {"subset_schedule", to_string(f.subset_schedule)},
                 {"roi_lo_mm", vec_of(f.roi.lo_mm)},
                 {"roi_hi_mm", vec_of(f.roi.hi_mm)}};
  j["network"] = io::to_json(c.network);
  j["schedule"] = {{"T", c.schedule.T}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}};
  const auto& t = c.train;
  j["train"] = {{"lr", t.lr},
                {"batch_size", t.batch_size},
                {"iterations", t.iterations},
                {"uncond_prob", t.uncond_prob},
                {"fus_drop_prob", t.fus_drop_prob},
                {"seed", t.rng_seed},
                {"weight_decay", t.weight_decay},
                {"final_lr_fraction", t.final_lr_fraction},
                {"log_every", c.log_every}};
  j["sampler"] = {{"n_steps", c.sampler.n_steps},
                  {"guidance_scale", c.sampler.guidance_scale},
                  {"clip_x0", c.sampler.clip_x0},
                  {"clip_min", c.sampler.clip_min},
                  {"clip_max", c.sampler.clip_max},
                  {"seed", c.sampler.rng_seed}};
  j["patch"] = {{"size", c.patch.size}, {"overlap", c.patch.overlap}};
  j["export"] = {{"window_lo", c.export_image.window_lo},
                 {"window_hi", c.export_image.window_hi},
                 {"bits", c.export_image.bits}};
  return j;
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.phantom.rng_seed = seed;
  c.noise.rng_seed = seed + 1;
  c.train.rng_seed = seed + 2;
  c.sampler.rng_seed = seed + 3;
}

}  // namespace lamino::pipeline
