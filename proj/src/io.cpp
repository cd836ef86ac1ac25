#include "lamino/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "lamino/error.hpp"

namespace lamino::io {

namespace {

constexpr char kCheckpointMagic[8] = {'L', 'M', 'N', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::uint64_t to_le64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return (static_cast<std::uint64_t>(to_le(static_cast<std::uint32_t>(v))) << 32) | to_le(static_cast<std::uint32_t>(v >> 32));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_le64(v);
  os.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  require(static_cast<bool>(is), ErrorCategory::format, "truncated checkpoint header");
  return to_le(v);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  require(static_cast<bool>(is), ErrorCategory::format, "truncated checkpoint header");
  return to_le64(v);
}

void encode_f32(const std::vector<double>& values, std::vector<char>& out) {
  out.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    std::memcpy(out.data() + 4 * i, &bits, 4);
  }
}

void decode_f32(const char* src, std::size_t n, double* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + 4 * i, 4);
    dst[i] = static_cast<double>(std::bit_cast<float>(to_le(bits)));
  }
}

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  require(static_cast<bool>(os), ErrorCategory::io, "cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  require(fs::exists(path), ErrorCategory::io, "missing file " + path.string());
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCategory::io, "cannot read " + path.string());
  return is;
}

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& what) {
  require(j.is_object(), ErrorCategory::config, what + " must be a JSON object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [k, v] : j.items())
    require(allowed.count(k) != 0, ErrorCategory::config, "unknown key '" + k + "' in " + what);
}

template <class T>
void read_opt(const json& j, const char* key, T& dst, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCategory::config, std::string("bad type for '") + key + "' in " + what);
  }
}

}  // namespace

json to_json(const ScanGeometry& g) {
  json j;
  j["source_to_center_mm"] = g.source_to_center_mm;
  j["source_to_detector_mm"] = g.source_to_detector_mm;
  j["tilt_angle_deg"] = g.tilt_angle_deg;
  j["n_views"] = g.n_views;
  j["detector_rows"] = g.detector_rows;
  j["detector_cols"] = g.detector_cols;
  j["detector_pitch_mm"] = g.detector_pitch_mm;
  j["voxel_size_mm"] = g.voxel_size_mm;
  j["focus_to_stage_mm"] = g.focus_to_stage_mm ? json(*g.focus_to_stage_mm) : json(nullptr);
  j["rotation_radius_mm"] = g.rotation_radius_mm ? json(*g.rotation_radius_mm) : json(nullptr);
  return j;
}

ScanGeometry geometry_from_json(const json& j, const ScanGeometry& base) {
  const std::string what = "geometry";
  check_keys(j,
             {"source_to_center_mm", "source_to_detector_mm", "tilt_angle_deg", "n_views", "detector_rows",
              "detector_cols", "detector_pitch_mm", "voxel_size_mm", "focus_to_stage_mm", "rotation_radius_mm"},
             what);
  ScanGeometry g = base;
  read_opt(j, "source_to_center_mm", g.source_to_center_mm, what);
  read_opt(j, "source_to_detector_mm", g.source_to_detector_mm, what);
  read_opt(j, "tilt_angle_deg", g.tilt_angle_deg, what);
  read_opt(j, "n_views", g.n_views, what);
  read_opt(j, "detector_rows", g.detector_rows, what);
  read_opt(j, "detector_cols", g.detector_cols, what);
  read_opt(j, "detector_pitch_mm", g.detector_pitch_mm, what);
  read_opt(j, "voxel_size_mm", g.voxel_size_mm, what);
  for (const char* key : {"focus_to_stage_mm", "rotation_radius_mm"}) {
    if (!j.contains(key)) continue;
    auto& dst = std::string(key) == "focus_to_stage_mm" ? g.focus_to_stage_mm : g.rotation_radius_mm;
    if (j[key].is_null()) {
      dst.reset();
    } else {
      require(j[key].is_number(), ErrorCategory::config, std::string("bad type for '") + key + "' in geometry");
      dst = j[key].get<double>();
    }
  }
  return make_geometry(g);
}

json to_json(const GridSpec& g) {
  json j;
  j["nx"] = g.nx;
  j["ny"] = g.ny;
  j["nz"] = g.nz;
  j["voxel_size_mm"] = g.voxel_size_mm;
  j["center_mm"] = {g.center_mm.x, g.center_mm.y, g.center_mm.z};
  return j;
}

GridSpec grid_from_json(const json& j) {
  const std::string what = "volume sidecar";
  check_keys(j, {"nx", "ny", "nz", "voxel_size_mm", "center_mm", "kind"}, what);
  GridSpec g;
  require(j.contains("nx") && j.contains("ny") && j.contains("nz"), ErrorCategory::format,
          "volume sidecar lacks nx/ny/nz");
  read_opt(j, "nx", g.nx, what);
  read_opt(j, "ny", g.ny, what);
  read_opt(j, "nz", g.nz, what);
  read_opt(j, "voxel_size_mm", g.voxel_size_mm, what);
  if (j.contains("center_mm")) {
    std::vector<double> c;
    read_opt(j, "center_mm", c, what);
    require(c.size() == 3, ErrorCategory::format, "center_mm must have three entries");
    g.center_mm = {c[0], c[1], c[2]};
  }
  validate(g);
  return g;
}

fs::path sidecar_path(const fs::path& raw) {
  fs::path p = raw;
  p.replace_extension(".json");
  return p;
}

void write_f32(const fs::path& path, const std::vector<double>& values) {
  std::vector<char> bytes;
  encode_f32(values, bytes);
  auto os = open_out(path, true);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorCategory::io, "write failed for " + path.string());
}

std::vector<double> read_f32(const fs::path& path) {
  auto is = open_in(path);
  const auto size = fs::file_size(path);
  require(size % 4 == 0, ErrorCategory::format, path.string() + " is not a float32 payload");
  std::vector<char> bytes(size);
  is.read(bytes.data(), static_cast<std::streamsize>(size));
  require(static_cast<bool>(is), ErrorCategory::io, "read failed for " + path.string());
  std::vector<double> out(size / 4);
  decode_f32(bytes.data(), out.size(), out.data());
  return out;
}

void save_volume(const fs::path& raw, const VoxelVolume& vol) {
  write_f32(raw, std::vector<double>(vol.data().begin(), vol.data().end()));
  json j = to_json(vol.grid());
  j["kind"] = "volume";
  write_text(sidecar_path(raw), j.dump(2) + "\n");
}

VoxelVolume load_volume(const fs::path& raw) {
  const GridSpec g = grid_from_json(read_json(sidecar_path(raw)));
  auto data = read_f32(raw);
  require(data.size() == g.size(), ErrorCategory::format,
          "volume payload holds " + std::to_string(data.size()) + " values, sidecar dims need " +
              std::to_string(g.size()));
  return VoxelVolume(g, std::move(data));
}

void save_projections(const fs::path& raw, const ProjectionSet& p) {
  write_f32(raw, p.data);
  write_text(sidecar_path(raw), to_json(p.geometry).dump(2) + "\n");
}

ProjectionSet load_projections(const fs::path& raw) {
  const ScanGeometry g = geometry_from_json(read_json(sidecar_path(raw)));
  auto data = read_f32(raw);
  require(data.size() == g.projection_size(), ErrorCategory::format,
          "projection payload holds " + std::to_string(data.size()) + " values, geometry needs " +
              std::to_string(g.projection_size()));
  return ProjectionSet(g, std::move(data));
}

json to_json(const nn::DenoiserConfig& c) {
  json j;
  j["base_channels"] = c.base_channels;
  j["n_resolutions"] = c.n_resolutions;
  j["embed_dim"] = c.embed_dim;
  j["groups"] = c.groups;
  j["velocity_head"] = c.velocity_head;
  j["schedule_steps"] = c.schedule_steps;
  j["beta_min"] = c.beta_min;
  j["beta_max"] = c.beta_max;
  return j;
}

nn::DenoiserConfig denoiser_config_from_json(const json& j) {
  const std::string what = "network config";
  check_keys(j,
             {"base_channels", "n_resolutions", "embed_dim", "groups", "velocity_head", "schedule_steps", "beta_min",
              "beta_max"},
             what);
  nn::DenoiserConfig c;
  read_opt(j, "base_channels", c.base_channels, what);
  read_opt(j, "n_resolutions", c.n_resolutions, what);
  read_opt(j, "embed_dim", c.embed_dim, what);
  read_opt(j, "groups", c.groups, what);
  read_opt(j, "velocity_head", c.velocity_head, what);
  read_opt(j, "schedule_steps", c.schedule_steps, what);
  read_opt(j, "beta_min", c.beta_min, what);
  read_opt(j, "beta_max", c.beta_max, what);
  nn::validate(c);
  return c;
}

void save_checkpoint(const fs::path& path, const nn::DenoiserNet& net, const json& extra) {
  const auto& ps = net.params();
  json header;
  header["network"] = to_json(net.config());
  header["extra"] = extra;
  const std::string hdr = header.dump();

  auto os = open_out(path, true);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(hdr.size()));
  os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  put_u32(os, static_cast<std::uint32_t>(ps.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(i);
    const auto& shape = ps.value(i).shape;
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (int s : shape) put_u32(os, static_cast<std::uint32_t>(s));
    put_u64(os, offset);
    offset += ps.value(i).numel();
  }
  std::vector<char> bytes;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    encode_f32(ps.value(i).data, bytes);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  require(static_cast<bool>(os), ErrorCategory::io, "write failed for " + path.string());
}

nn::DenoiserNet load_checkpoint(const fs::path& path, Checkpoint* meta) {
  auto is = open_in(path);
  char magic[sizeof kCheckpointMagic];
  is.read(magic, sizeof magic);
  require(static_cast<bool>(is) && std::memcmp(magic, kCheckpointMagic, sizeof magic) == 0, ErrorCategory::format,
          path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = get_u32(is);
  require(version == kCheckpointVersion, ErrorCategory::format,
          "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t hlen = get_u32(is);
  require(hlen < (1u << 24), ErrorCategory::format, "implausible checkpoint header length");
  std::string hdr(hlen, '\0');
  is.read(hdr.data(), hlen);
  require(static_cast<bool>(is), ErrorCategory::format, "truncated checkpoint header");
  json header;
  try {
    header = json::parse(hdr);
  } catch (const json::exception& e) {
    fail(ErrorCategory::format, std::string("corrupt checkpoint header: ") + e.what());
  }
  require(header.contains("network"), ErrorCategory::format, "checkpoint header lacks network config");
  const nn::DenoiserConfig cfg = denoiser_config_from_json(header["network"]);
  nn::DenoiserNet net(cfg);
  auto& ps = net.params();

  const std::uint32_t count = get_u32(is);
  require(count == ps.size(), ErrorCategory::format, "checkpoint parameter count does not match the network");
  struct Entry {
    std::string name;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::uint64_t total = 0;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t nlen = get_u32(is);
    require(nlen < 4096, ErrorCategory::format, "implausible parameter name length");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const std::uint32_t rank = get_u32(is);
    require(rank <= 8, ErrorCategory::format, "implausible parameter rank");
    std::vector<int> shape(rank);
    for (auto& s : shape) s = static_cast<int>(get_u32(is));
    const std::uint64_t offset = get_u64(is);
    require(ps.contains(name), ErrorCategory::format, "checkpoint has unknown parameter " + name);
    require(ps.get(name).shape == shape, ErrorCategory::format, "shape mismatch for parameter " + name);
    entries.push_back({name, offset});
    total += nn::numel_of(shape);
  }
  std::vector<char> payload(total * 4);
  is.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  require(static_cast<bool>(is), ErrorCategory::format, "truncated checkpoint payload");
  for (const auto& e : entries) {
    nn::Tensor& t = ps.get(e.name);
    require(e.offset + t.numel() <= total, ErrorCategory::format, "parameter offset out of range");
    decode_f32(payload.data() + 4 * e.offset, t.numel(), t.data.data());
  }
  if (meta != nullptr) {
    meta->config = cfg;
    meta->extra = header.value("extra", json::object());
  }
  return net;
}

std::vector<std::uint16_t> window_image(const Image2D& img, double lo, double hi, int bits) {
  require(hi > lo, ErrorCategory::usage, "display window must satisfy hi > lo");
  require(bits == 8 || bits == 16, ErrorCategory::usage, "image bit depth must be 8 or 16");
  const double maxval = bits == 8 ? 255.0 : 65535.0;
  std::vector<std::uint16_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double c = std::clamp(img.data[i], lo, hi);
    out[i] = static_cast<std::uint16_t>(std::lround((c - lo) / (hi - lo) * maxval));
  }
  return out;
}

void export_windowed_image(const Image2D& slice, double lo, double hi, const fs::path& path, int bits) {
  const auto px = window_image(slice, lo, hi, bits);
  auto os = open_out(path, true);
  const int maxval = bits == 8 ? 255 : 65535;
  os << "P5\n" << slice.cols << ' ' << slice.rows << '\n' << maxval << '\n';
  for (std::uint16_t p : px) {
    if (bits == 8) {
      os.put(static_cast<char>(p));
    } else {
      os.put(static_cast<char>(p >> 8));
      os.put(static_cast<char>(p & 0xff));
    }
  }
  require(static_cast<bool>(os), ErrorCategory::io, "write failed for " + path.string());
}

GrayImage read_pgm(const fs::path& path) {
  auto is = open_in(path);
  std::string magic;
  GrayImage g;
  is >> magic >> g.cols >> g.rows >> g.maxval;
  require(static_cast<bool>(is) && magic == "P5", ErrorCategory::format, path.string() + " is not a binary PGM");
  require(g.maxval > 0 && g.maxval <= 65535 && g.rows > 0 && g.cols > 0, ErrorCategory::format, "bad PGM header");
  is.get();
  const std::size_t n = static_cast<std::size_t>(g.rows) * g.cols;
  g.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int hi = is.get();
    if (g.maxval < 256) {
      g.pixels[i] = static_cast<std::uint16_t>(hi);
    } else {
      const int lo = is.get();
      g.pixels[i] = static_cast<std::uint16_t>((hi << 8) | lo);
    }
  }
  require(static_cast<bool>(is), ErrorCategory::format, "truncated PGM payload");
  return g;
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path, false);
  os << text;
  require(static_cast<bool>(os), ErrorCategory::io, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCategory::config, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace lamino::io
