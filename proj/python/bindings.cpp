#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lamino/diffusion/sampler.hpp"
#include "lamino/diffusion/schedule.hpp"
#include "lamino/error.hpp"
#include "lamino/fdk.hpp"
#include "lamino/iterative.hpp"
#include "lamino/metrics.hpp"
#include "lamino/phantom.hpp"
#include "lamino/pipeline/cli.hpp"
#include "lamino/projector.hpp"

namespace py = pybind11;
using namespace lamino;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Volumes cross the boundary as (nz, ny, nx) arrays, x fastest.
VoxelVolume to_volume(const Array& a, double voxel_size_mm, std::array<double, 3> center) {
  if (a.ndim() != 3) throw Error(ErrorCategory::shape, "expected a 3-D array (nz, ny, nx)");
  GridSpec g{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), voxel_size_mm,
             {center[0], center[1], center[2]}};
  return VoxelVolume(g, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_volume(const VoxelVolume& v) {
  Array out({v.nz(), v.ny(), v.nx()});
  std::copy(v.data().begin(), v.data().end(), out.mutable_data());
  return out;
}

ProjectionSet to_projections(const Array& a, const ScanGeometry& g) {
  if (a.ndim() != 3 || a.shape(0) != g.n_views || a.shape(1) != g.detector_rows || a.shape(2) != g.detector_cols)
    throw Error(ErrorCategory::shape, "expected projections of shape (n_views, detector_rows, detector_cols)");
  return ProjectionSet(g, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_projections(const ProjectionSet& p) {
  const ScanGeometry& g = p.geometry;
  Array out({g.n_views, g.detector_rows, g.detector_cols});
  std::copy(p.data.begin(), p.data.end(), out.mutable_data());
  return out;
}

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Image2D to_image(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCategory::shape, "expected a 2-D array");
  Image2D img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

std::optional<double> range_arg(const py::object& o) {
  if (o.is_none()) return std::nullopt;
  return o.cast<double>();
}

}  // namespace

PYBIND11_MODULE(_lamino, m) {
  m.doc() = "Computed laminography simulation, reconstruction and evaluation";

  static py::exception<Error> error(m, "LaminoError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error((std::string(category_name(e.category())) + ": " + e.what()).c_str());
    }
  });

  py::class_<ScanGeometry>(m, "ScanGeometry")
      .def(py::init([](double tilt_angle_deg, int n_views, int detector_rows, int detector_cols,
                       double source_to_center_mm, double source_to_detector_mm, double detector_pitch_mm,
                       double voxel_size_mm) {
             ScanGeometry g;
             g.tilt_angle_deg = tilt_angle_deg;
             g.n_views = n_views;
             g.detector_rows = detector_rows;
             g.detector_cols = detector_cols;
             g.source_to_center_mm = source_to_center_mm;
             g.source_to_detector_mm = source_to_detector_mm;
             g.detector_pitch_mm = detector_pitch_mm;
             g.voxel_size_mm = voxel_size_mm;
             return make_geometry(g);
           }),
           py::arg("tilt_angle_deg") = 30.0, py::arg("n_views") = 360, py::arg("detector_rows") = 256,
           py::arg("detector_cols") = 256, py::arg("source_to_center_mm") = 19.32,
           py::arg("source_to_detector_mm") = 201.63, py::arg("detector_pitch_mm") = 0.0495,
           py::arg("voxel_size_mm") = 0.005)
      .def_readonly("tilt_angle_deg", &ScanGeometry::tilt_angle_deg)
      .def_readonly("n_views", &ScanGeometry::n_views)
      .def_readonly("detector_rows", &ScanGeometry::detector_rows)
      .def_readonly("detector_cols", &ScanGeometry::detector_cols)
      .def_readonly("source_to_center_mm", &ScanGeometry::source_to_center_mm)
      .def_readonly("source_to_detector_mm", &ScanGeometry::source_to_detector_mm)
      .def_readonly("detector_pitch_mm", &ScanGeometry::detector_pitch_mm)
      .def_property_readonly("magnification", &ScanGeometry::magnification)
      .def("ct_mode", [](const ScanGeometry& g) { return ct_mode(g); })
      .def(
          "fit_detector",
          [](const ScanGeometry& g, const Array& like, double voxel_size_mm, int margin_px) {
            return fit_detector(g, to_volume(like, voxel_size_mm, {0, 0, 0}).grid(), margin_px);
          },
          py::arg("like"), py::arg("voxel_size_mm") = 0.005, py::arg("margin_px") = 2)
      .def("__repr__", [](const ScanGeometry& g) {
        std::ostringstream s;
        s << "ScanGeometry(tilt_angle_deg=" << g.tilt_angle_deg << ", n_views=" << g.n_views
          << ", detector=" << g.detector_rows << "x" << g.detector_cols << ")";
        return s.str();
      });

  m.def(
      "pcb_phantom",
      [](int nx, int ny, int nz, std::uint64_t seed, int n_layers, int trace_width, int clearance) {
        PhantomSpec s;
        s.nx = nx;
        s.ny = ny;
        s.nz = nz;
        s.rng_seed = seed;
        s.n_layers = n_layers;
        s.trace_width = trace_width;
        s.clearance = clearance;
        return from_volume(generate_pcb_phantom(s));
      },
      py::arg("nx") = 256, py::arg("ny") = 256, py::arg("nz") = 64, py::arg("seed") = 0, py::arg("n_layers") = 6,
      py::arg("trace_width") = 2, py::arg("clearance") = 2);
  m.def(
      "cylinder_phantom",
      [](int nx, int ny, int nz, double radius_mm, double half_height_mm, double mu, double voxel_size_mm) {
        return from_volume(cylinder_phantom(GridSpec{nx, ny, nz, voxel_size_mm}, radius_mm, half_height_mm, mu));
      },
      py::arg("nx"), py::arg("ny"), py::arg("nz"), py::arg("radius_mm"), py::arg("half_height_mm"),
      py::arg("mu") = 1.0, py::arg("voxel_size_mm") = 0.005);

  m.def(
      "forward_project",
      [](const Array& vol, const ScanGeometry& g, double voxel_size_mm) {
        return from_projections(forward_project(to_volume(vol, voxel_size_mm, {0, 0, 0}), g));
      },
      py::arg("volume"), py::arg("geometry"), py::arg("voxel_size_mm") = 0.005);
  m.def(
      "back_project",
      [](const Array& proj, const ScanGeometry& g, std::array<int, 3> shape, double voxel_size_mm) {
        const GridSpec grid{shape[2], shape[1], shape[0], voxel_size_mm};
        return from_volume(back_project(to_projections(proj, g), grid));
      },
      py::arg("projections"), py::arg("geometry"), py::arg("shape"), py::arg("voxel_size_mm") = 0.005);
  m.def(
      "fdk",
      [](const Array& proj, const ScanGeometry& g, std::array<int, 3> shape, double voxel_size_mm) {
        const GridSpec grid{shape[2], shape[1], shape[0], voxel_size_mm};
        return from_volume(fdk_reconstruct(to_projections(proj, g), grid));
      },
      py::arg("projections"), py::arg("geometry"), py::arg("shape"), py::arg("voxel_size_mm") = 0.005);
  m.def(
      "sart",
      [](const Array& proj, const ScanGeometry& g, std::array<int, 3> shape, int n_iterations, int n_subsets,
         double relaxation, bool nonnegativity, double voxel_size_mm) {
        const GridSpec grid{shape[2], shape[1], shape[0], voxel_size_mm};
        return from_volume(sart_reconstruct(to_projections(proj, g), grid,
                                            SartConfig{n_iterations, n_subsets, relaxation, nonnegativity}));
      },
      py::arg("projections"), py::arg("geometry"), py::arg("shape"), py::arg("n_iterations") = 10,
      py::arg("n_subsets") = 10, py::arg("relaxation") = 0.5, py::arg("nonnegativity") = true,
      py::arg("voxel_size_mm") = 0.005);
  m.def(
      "add_noise",
      [](const Array& proj, const ScanGeometry& g, const std::string& kind, double sigma, double i0,
         std::uint64_t seed) {
        NoiseModel nm;
        if (kind == "gaussian")
          nm.kind = NoiseKind::gaussian;
        else if (kind == "poisson")
          nm.kind = NoiseKind::poisson_transmission;
        else if (kind != "none")
          throw Error(ErrorCategory::usage, "noise kind must be none, gaussian or poisson");
        nm.sigma = sigma;
        nm.i0 = i0;
        nm.rng_seed = seed;
        return from_projections(apply_noise(to_projections(proj, g), nm));
      },
      py::arg("projections"), py::arg("geometry"), py::arg("kind") = "poisson", py::arg("sigma") = 0.0,
      py::arg("i0") = 1e5, py::arg("seed") = 0);

  m.def("mse", [](const Array& a, const Array& b) { return mse(view(a), view(b)); });
  m.def(
      "psnr", [](const Array& rec, const Array& ref, py::object data_range) {
        return psnr(view(rec), view(ref), range_arg(data_range));
      },
      py::arg("rec"), py::arg("ref"), py::arg("data_range") = py::none());
  m.def(
      "ssim", [](const Array& a, const Array& b, py::object data_range) {
        return ssim(to_image(a), to_image(b), range_arg(data_range));
      },
      py::arg("a"), py::arg("b"), py::arg("data_range") = py::none());
  m.def("pearson_cc", [](const Array& a, const Array& b) { return pearson_cc(view(a), view(b)); });
  m.def("bdm", [](const Array& rec, const Array& ref) { return bdm(view(rec), view(ref)); });
  m.def("otsu_threshold", [](const Array& a) { return otsu_threshold(view(a)).tau; });
  m.def(
      "missing_cone_energy",
      [](const Array& vol, double half_angle_deg) {
        const VoxelVolume v = to_volume(vol, 0.005, {0, 0, 0});
        return missing_cone_energy(v, missing_cone_mask(v.grid().dims(), half_angle_deg));
      },
      py::arg("volume"), py::arg("half_angle_deg") = 30.0);
  m.def(
      "masked_fraction",
      [](std::array<int, 3> shape, double half_angle_deg, bool band_limited) {
        const SpectralMask mask = missing_cone_mask({shape[2], shape[1], shape[0]}, half_angle_deg);
        return band_limited ? mask.band_limited_masked_fraction() : mask.masked_fraction();
      },
      py::arg("shape"), py::arg("half_angle_deg") = 30.0, py::arg("band_limited") = true);

  m.def(
      "alpha_bar",
      [](int T, double beta_min, double beta_max) { return nn::build_schedule(T, beta_min, beta_max).alpha_bar; },
      py::arg("T") = 1000, py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.02);
  m.def("ddim_timesteps", &nn::ddim_timesteps, py::arg("T"), py::arg("n_steps"));

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> full{"lamino"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    const int code = pipeline::cli_dispatch(full, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
