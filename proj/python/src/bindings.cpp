#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>

#include "fvdb/build.hpp"
#include "fvdb/conv.hpp"
#include "fvdb/interp.hpp"
#include "fvdb/io.hpp"

namespace py = pybind11;
using namespace fvdb;

namespace {

// Shared so that arrays and handles can outlive each other freely.
struct Grid {
  std::shared_ptr<const IndexGrid> grid;
};

[[noreturn]] void shape_error(const std::string& field, const std::string& expected, const py::array& a) {
  std::string got = "(";
  for (py::ssize_t d = 0; d < a.ndim(); ++d) got += (d ? ", " : "") + std::to_string(a.shape(d));
  throw py::value_error(field + ": expected shape " + expected + ", got " + got + (a.ndim() == 1 ? ",)" : ")"));
}

// Copies a C-contiguous array of dtype T and rank `rank` into a Tensor. The
// trailing size is checked when `width` is non-zero.
template <class T>
Tensor<T> to_tensor(const py::array& a, const char* field, int rank, size_t width, const std::string& expected) {
  if (!py::isinstance<py::array_t<T>>(a))
    throw py::type_error(std::string(field) + ": expected dtype " + py::str(py::dtype::of<T>()).cast<std::string>() +
                         ", got " + py::str(a.dtype()).cast<std::string>());
  if (a.ndim() != rank || (width && a.shape(rank - 1) != py::ssize_t(width))) shape_error(field, expected, a);
  const auto c = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(a);
  std::vector<size_t> shape(c.shape(), c.shape() + c.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(c.data(), c.data() + c.size()));
}

// Hands the tensor's storage to numpy without copying.
template <class T>
py::array_t<T> to_numpy(Tensor<T>&& t) {
  auto* storage = new std::vector<T>(std::move(t.values()));
  py::capsule owner(storage, [](void* p) { delete static_cast<std::vector<T>*>(p); });
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  return py::array_t<T>(shape, storage->data(), owner);
}

Vec3d vec3(const std::vector<double>& v, const char* field) {
  if (v.size() != 3) throw py::value_error(std::string(field) + ": expected 3 values, got " + std::to_string(v.size()));
  return {v[0], v[1], v[2]};
}

VoxelTransform make_transform(const py::object& voxel_size, const std::vector<double>& origin) {
  VoxelTransform xf;
  if (py::isinstance<py::float_>(voxel_size) || py::isinstance<py::int_>(voxel_size)) {
    const double s = voxel_size.cast<double>();
    xf.voxel_size = {s, s, s};
  } else {
    xf.voxel_size = vec3(voxel_size.cast<std::vector<double>>(), "voxel_size");
  }
  xf.origin = vec3(origin, "origin");
  if (!xf.valid()) throw py::value_error("voxel_size: must be positive and finite");
  return xf;
}

InterpMode parse_mode(const std::string& mode) {
  if (mode == "trilinear") return InterpMode::trilinear;
  if (mode == "bezier") return InterpMode::bezier;
  throw py::value_error("mode: expected 'trilinear' or 'bezier', got '" + mode + "'");
}

bool is_f32(const py::array& a) { return py::isinstance<py::array_t<float>>(a); }

template <class T>
py::array sample_impl(const Grid& g, const py::array& features, const py::array& points, InterpMode mode) {
  const size_t v = g.grid->active_voxel_count();
  Tensor<T> f = to_tensor<T>(features, "features", 2, 0, "(V, C)");
  if (f.num_rows() != v) shape_error("features", "(" + std::to_string(v) + ", C)", features);
  Tensor<T> p = to_tensor<T>(points, "points", 2, 3, "(N, 3)");
  Tensor<T> out;
  {
    py::gil_scoped_release release;
    const GridBatch batch({*g.grid});
    out = sample(batch, JaggedTensor<T>::from_list(std::span(&f, 1)), JaggedTensor<T>::from_list(std::span(&p, 1)),
                 mode)
              .jdata();
  }
  return to_numpy(std::move(out));
}

template <class T>
py::array splat_impl(const Grid& g, const py::array& points, const py::array& values, InterpMode mode) {
  Tensor<T> p = to_tensor<T>(points, "points", 2, 3, "(N, 3)");
  Tensor<T> f = to_tensor<T>(values, "point_features", 2, 0, "(N, C)");
  if (f.num_rows() != p.num_rows()) shape_error("point_features", "(" + std::to_string(p.num_rows()) + ", C)", values);
  Tensor<T> out;
  {
    py::gil_scoped_release release;
    const GridBatch batch({*g.grid});
    out = splat(batch, JaggedTensor<T>::from_list(std::span(&p, 1)), JaggedTensor<T>::from_list(std::span(&f, 1)),
                mode)
              .jdata();
  }
  return to_numpy(std::move(out));
}

template <class T>
py::array conv_impl(const Grid& in, const py::array& features, const py::array& kernel, const Grid& out_grid,
                    int stride) {
  const size_t v = in.grid->active_voxel_count();
  Tensor<T> f = to_tensor<T>(features, "features", 2, 0, "(V, C_in)");
  if (f.num_rows() != v) shape_error("features", "(" + std::to_string(v) + ", C_in)", features);
  if (kernel.ndim() != 5 || kernel.shape(2) != 3 || kernel.shape(3) != 3 || kernel.shape(4) != 3 ||
      kernel.shape(1) != py::ssize_t(f.row_size()))
    shape_error("kernel", "(C_out, " + std::to_string(f.row_size()) + ", 3, 3, 3)", kernel);
  ConvKernel<T> k;
  k.weights = to_tensor<T>(kernel, "kernel", 5, 3, "(C_out, C_in, 3, 3, 3)");
  Tensor<T> out;
  {
    py::gil_scoped_release release;
    out = conv(*in.grid, f, k, *out_grid.grid, ConvVariant::igemm, stride);
  }
  return to_numpy(std::move(out));
}

}  // namespace

PYBIND11_MODULE(_fvdb, m) {
  m.doc() = "Sparse voxel grids: build, index queries, sampling, splatting and convolution.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<Grid>(m, "Grid", "Immutable sparse voxel grid.")
      .def_property_readonly("voxel_count", [](const Grid& g) { return g.grid->active_voxel_count(); })
      .def_property_readonly("leaf_count", [](const Grid& g) { return g.grid->leaves().size(); })
      .def_property_readonly("voxel_size", [](const Grid& g) { return g.grid->transform().voxel_size; })
      .def_property_readonly("origin", [](const Grid& g) { return g.grid->transform().origin; })
      .def(
          "coords",
          [](const Grid& g) {
            const std::vector<Coord> c = g.grid->active_coords();
            Tensor<int32_t> out = Tensor<int32_t>::rows(c.size(), 3);
            for (size_t n = 0; n < c.size(); ++n)
              for (int a = 0; a < 3; ++a) out(n, size_t(a)) = c[n][a];
            return to_numpy(std::move(out));
          },
          "Active voxel coordinates (V, 3) int32 in index order; row n has index n + 1.")
      .def(
          "world_to_coord",
          [](const Grid& g, const py::array& points) {
            const Tensor<double> p = to_tensor<double>(points, "points", 2, 3, "(N, 3)");
            Tensor<int32_t> out = Tensor<int32_t>::rows(p.num_rows(), 3);
            for (size_t n = 0; n < p.num_rows(); ++n) {
              const Coord c = g.grid->transform().quantize({p(n, 0), p(n, 1), p(n, 2)});
              for (int a = 0; a < 3; ++a) out(n, size_t(a)) = c[a];
            }
            return to_numpy(std::move(out));
          },
          py::arg("points"), "Nearest voxel coordinate of each world point (float64 (N, 3)).")
      .def(
          "coord_to_index",
          [](const Grid& g, const py::array& coords) {
            const Tensor<int32_t> c = to_tensor<int32_t>(coords, "coords", 2, 3, "(N, 3)");
            Tensor<int64_t> out({c.num_rows()});
            {
              py::gil_scoped_release release;
              GridAccessor acc(*g.grid);
              for (size_t n = 0; n < c.num_rows(); ++n)
                out.values()[n] = int64_t(acc.coord_to_index({c(n, 0), c(n, 1), c(n, 2)}));
            }
            return to_numpy(std::move(out));
          },
          py::arg("coords"), "1-based index of each int32 (N, 3) coordinate; 0 where inactive.")
      .def("save", [](const Grid& g, const std::string& path) { return save_grid(*g.grid, path); }, py::arg("path"))
      .def("__repr__", [](const Grid& g) {
        return "<fvdb.Grid voxels=" + std::to_string(g.grid->active_voxel_count()) + ">";
      });

  m.def(
      "build_from_points",
      [](const py::array& points, const py::object& voxel_size, const std::vector<double>& origin) {
        const Tensor<double> p = to_tensor<double>(points, "points", 2, 3, "(N, 3)");
        const VoxelTransform xf = make_transform(voxel_size, origin);
        py::gil_scoped_release release;
        std::vector<Vec3d> pts(p.num_rows());
        for (size_t n = 0; n < pts.size(); ++n) pts[n] = {p(n, 0), p(n, 1), p(n, 2)};
        return Grid{std::make_shared<const IndexGrid>(build_from_points(pts, xf).grid)};
      },
      py::arg("points"), py::arg("voxel_size"), py::arg("origin") = std::vector<double>{0, 0, 0},
      "Grid of the voxels nearest to float64 (N, 3) world points.");

  m.def(
      "build_from_coords",
      [](const py::array& coords, const py::object& voxel_size, const std::vector<double>& origin) {
        const Tensor<int32_t> c = to_tensor<int32_t>(coords, "coords", 2, 3, "(N, 3)");
        const VoxelTransform xf = make_transform(voxel_size, origin);
        py::gil_scoped_release release;
        std::vector<Coord> cs(c.num_rows());
        for (size_t n = 0; n < cs.size(); ++n) cs[n] = {c(n, 0), c(n, 1), c(n, 2)};
        return Grid{std::make_shared<const IndexGrid>(build_from_coords(cs, xf).grid)};
      },
      py::arg("coords"), py::arg("voxel_size") = 1.0, py::arg("origin") = std::vector<double>{0, 0, 0},
      "Grid of the given int32 (N, 3) voxel coordinates.");

  m.def(
      "coarsen",
      [](const Grid& g, int factor) { return Grid{std::make_shared<const IndexGrid>(coarsen(*g.grid, factor))}; },
      py::arg("grid"), py::arg("factor"));

  m.def("load", [](const std::string& path) { return Grid{std::make_shared<const IndexGrid>(load_grid(path))}; },
        py::arg("path"));

  m.def(
      "sample",
      [](const Grid& g, const py::array& features, const py::array& points, const std::string& mode) {
        const InterpMode im = parse_mode(mode);
        return is_f32(features) ? sample_impl<float>(g, features, points, im)
                                : sample_impl<double>(g, features, points, im);
      },
      py::arg("grid"), py::arg("features"), py::arg("points"), py::arg("mode") = "trilinear",
      "Interpolates (V, C) features at (N, 3) world points; dtypes must match.");

  m.def(
      "splat",
      [](const Grid& g, const py::array& points, const py::array& point_features, const std::string& mode) {
        const InterpMode im = parse_mode(mode);
        return is_f32(point_features) ? splat_impl<float>(g, points, point_features, im)
                                      : splat_impl<double>(g, points, point_features, im);
      },
      py::arg("grid"), py::arg("points"), py::arg("point_features"), py::arg("mode") = "trilinear",
      "Adjoint of sample: accumulates (N, C) point features onto the (V, C) voxels.");

  m.def(
      "conv",
      [](const Grid& g, const py::array& features, const py::array& kernel, std::optional<Grid> out, int stride) {
        const Grid& target = out ? *out : g;
        return is_f32(features) ? conv_impl<float>(g, features, kernel, target, stride)
                                : conv_impl<double>(g, features, kernel, target, stride);
      },
      py::arg("grid"), py::arg("features"), py::arg("kernel"), py::arg("out_grid") = py::none(),
      py::arg("stride") = 1,
      "3x3x3 sparse convolution (gather-GEMM-scatter). kernel is (C_out, C_in, 3, 3, 3).");
}
