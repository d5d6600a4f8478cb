#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fvdb/conv.hpp"
#include "fvdb/index_grid.hpp"
#include "fvdb/io.hpp"
#include "fvdb/raymarch.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// Seeded generators shared by the CLI benchmarks and the test suites.
std::vector<Coord> random_coords(size_t n, int32_t half_range, uint64_t seed);
std::vector<Vec3d> normal_points(size_t n, double sigma, uint64_t seed);

/// Narrow-band sphere of radius 0.35 centred in the unit cube, sampled at
/// `res`^3 voxels of size 1/res. Voxels with |signed distance| <= band
/// voxels are active; phi holds the signed distance in world units.
struct SphereShell {
  IndexGrid grid;
  std::vector<double> phi;
  Vec3d center{0.5, 0.5, 0.5};
  double radius = 0.35;
};
SphereShell make_sphere_shell(int res, double band_voxels = 1.5);

/// Leaf-occupancy regimes: lidar < 20%, shell 20-40%, volumetric > 40%.
enum class Regime { lidar, shell, volumetric };
std::string to_string(Regime r);
std::optional<Regime> parse_regime(const std::string& name);

/// Grid of roughly `voxels` active voxels in the given regime.
IndexGrid regime_grid(Regime regime, size_t voxels, uint64_t seed);

template <class T>
Tensor<T> random_features(size_t rows, size_t channels, uint64_t seed);

template <class T>
ConvKernel<T> random_kernel(size_t c_out, size_t c_in, uint64_t seed);

/// Convolution evaluated in double precision by scattering the input into a
/// dense array over its bounding box and summing all 27 taps per output.
template <class T>
Tensor<double> dense_conv_reference(const IndexGrid& grid_in, const Tensor<T>& features, const ConvKernel<T>& kernel,
                                    const IndexGrid& grid_out, int stride = 1);

/// max |a - b| / max |b| (0 when both are all-zero).
template <class T>
double relative_error(const Tensor<T>& a, const Tensor<double>& b);

/// Pinhole camera looking from `eye` at `target` (+y up); one ray per pixel
/// centre, row-major from the top row.
std::vector<Ray> camera_rays(size_t width, size_t height, const Vec3d& eye, const Vec3d& target,
                             double fov_degrees);

/// Lambert-shaded image of the phi = 0 surface; normals come from the
/// interpolated phi gradient. `hits` (optional) receives one entry per ray.
Image render_levelset(const IndexGrid& grid, std::span<const double> phi, std::span<const Ray> rays, size_t width,
                      size_t height, std::vector<std::optional<LevelSetHit>>* hits = nullptr);

/// Grey-scale opacity image with a uniform density per world unit.
Image render_occupancy(const IndexGrid& grid, std::span<const Ray> rays, size_t width, size_t height,
                       double density, double step);

/// Default view of the unit cube used by the render command.
std::vector<Ray> default_camera(size_t width, size_t height);

/// Resident-set high-water mark of this process in bytes (0 if unknown).
uint64_t peak_memory_bytes();

}  // namespace fvdb
