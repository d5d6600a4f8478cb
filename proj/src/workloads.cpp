#include "fvdb/workloads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fvdb/build.hpp"
#include "fvdb/interp.hpp"
#include "fvdb/parallel.hpp"

namespace fvdb {
namespace {

Vec3d normalized(const Vec3d& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3d cross(const Vec3d& a, const Vec3d& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Voxels within `band` of a sphere (index-space centre and radius), found
// by solving for the k range of each (i, j) column.
std::vector<Coord> shell_coords(const Vec3d& c, double radius, double band, int lo, int hi) {
  const size_t columns = size_t(hi - lo);
  std::vector<std::vector<Coord>> per_chunk(chunk_count(columns, 1));
  parallel_chunks(columns, 1, [&](size_t b, size_t e, size_t chunk) {
    auto& out = per_chunk[chunk];
    const double outer = (radius + band) * (radius + band);
    for (size_t ii = b; ii < e; ++ii) {
      const int i = lo + int(ii);
      for (int j = lo; j < hi; ++j) {
        const double dxy = (i - c[0]) * (i - c[0]) + (j - c[1]) * (j - c[1]);
        if (dxy > outer) continue;
        const double half = std::sqrt(outer - dxy);
        const int k0 = std::max(lo, int(std::ceil(c[2] - half))), k1 = std::min(hi - 1, int(std::floor(c[2] + half)));
        for (int k = k0; k <= k1; ++k) {
          const double d = std::sqrt(dxy + (k - c[2]) * (k - c[2])) - radius;
          if (std::abs(d) <= band) out.push_back({i, j, k});
        }
      }
    }
  });
  std::vector<Coord> coords;
  for (auto& v : per_chunk) coords.insert(coords.end(), v.begin(), v.end());
  return coords;
}

}  // namespace

std::vector<Coord> random_coords(size_t n, int32_t half_range, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int32_t> dist(-half_range, half_range);
  std::vector<Coord> out(n);
  for (auto& c : out) c = {dist(rng), dist(rng), dist(rng)};
  return out;
}

std::vector<Vec3d> normal_points(size_t n, double sigma, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<Vec3d> out(n);
  for (auto& p : out) p = {dist(rng), dist(rng), dist(rng)};
  return out;
}

SphereShell make_sphere_shell(int res, double band_voxels) {
  if (res < 8) throw InvalidArgument("make_sphere_shell: resolution must be at least 8");
  SphereShell s;
  const double h = 1.0 / res;
  VoxelTransform xf;
  xf.voxel_size = {h, h, h};
  xf.origin = {0.5 * h, 0.5 * h, 0.5 * h};
  const Vec3d ci = xf.world_to_index(s.center);
  const double ri = s.radius * res;
  const std::vector<Coord> coords = shell_coords(ci, ri, band_voxels, 0, res);
  s.grid = build_from_coords(coords, xf).grid;
  const std::vector<Coord> active = s.grid.active_coords();
  s.phi.resize(active.size());
  parallel_for(active.size(), 4096, [&](size_t n) {
    const Coord& c = active[n];
    const double dx = c.i - ci[0], dy = c.j - ci[1], dz = c.k - ci[2];
    s.phi[n] = (std::sqrt(dx * dx + dy * dy + dz * dz) - ri) * h;
  });
  return s;
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::lidar: return "lidar";
    case Regime::shell: return "shell";
    case Regime::volumetric: return "volumetric";
  }
  return "unknown";
}

std::optional<Regime> parse_regime(const std::string& name) {
  for (Regime r : {Regime::lidar, Regime::shell, Regime::volumetric})
    if (to_string(r) == name) return r;
  return std::nullopt;
}

IndexGrid regime_grid(Regime regime, size_t voxels, uint64_t seed) {
  if (voxels == 0) throw InvalidArgument("regime_grid: voxel count must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Coord> coords;
  switch (regime) {
    case Regime::lidar: {
      // Uniform scatter at 6% density.
      const int side = std::max(8, int(std::cbrt(double(voxels) / 0.06)));
      std::uniform_int_distribution<int> dist(0, side - 1);
      coords.resize(voxels);
      for (auto& c : coords) c = {dist(rng), dist(rng), dist(rng)};
      break;
    }
    case Regime::shell: {
      // Six-voxel-thick sphere shell with a jittered centre.
      const double band = 3.0;
      const double radius = std::max(4.0, std::sqrt(double(voxels) / (4.0 * M_PI * 2.0 * band)));
      const Vec3d c{radius + 4 + 8 * unit(rng), radius + 4 + 8 * unit(rng), radius + 4 + 8 * unit(rng)};
      coords = shell_coords(c, radius, band, 0, int(2 * radius) + 20);
      break;
    }
    case Regime::volumetric: {
      // Leaf-aligned slab of leaves, each voxel active with probability 0.75.
      const size_t leaves = std::max<size_t>(1, size_t(std::ceil(double(voxels) / (0.75 * kLeafVoxels))));
      const int nx = std::max(1, int(std::cbrt(double(leaves))));
      const int ny = std::max(1, int(std::sqrt(double(leaves) / nx)));
      const int nz = int((leaves + size_t(nx * ny) - 1) / size_t(nx * ny));
      for (int i = 0; i < nx * kLeafDim; ++i)
        for (int j = 0; j < ny * kLeafDim; ++j)
          for (int k = 0; k < nz * kLeafDim; ++k)
            if (unit(rng) < 0.75) coords.push_back({i, j, k});
      break;
    }
  }
  return build_from_coords(coords).grid;
}

template <class T>
Tensor<T> random_features(size_t rows, size_t channels, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<T> t = Tensor<T>::rows(rows, channels);
  for (T& v : t.values()) v = T(dist(rng));
  return t;
}

template <class T>
ConvKernel<T> random_kernel(size_t c_out, size_t c_in, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(double(c_in) * kStencilSize);
  std::uniform_real_distribution<double> dist(-scale, scale);
  ConvKernel<T> k(c_out, c_in);
  for (T& v : k.weights.values()) v = T(dist(rng));
  return k;
}

template <class T>
Tensor<double> dense_conv_reference(const IndexGrid& grid_in, const Tensor<T>& features, const ConvKernel<T>& kernel,
                                    const IndexGrid& grid_out, int stride) {
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  if (features.num_rows() != grid_in.active_voxel_count() || features.row_size() != ci)
    throw InvalidArgument("dense_conv_reference: features do not match the input grid and kernel");
  Tensor<double> out = Tensor<double>::rows(grid_out.active_voxel_count(), co);
  if (grid_in.empty()) return out;
  const CoordBBox box = grid_in.active_bbox();
  const int64_t nx = int64_t(box.max.i) - box.min.i + 1, ny = int64_t(box.max.j) - box.min.j + 1,
                nz = int64_t(box.max.k) - box.min.k + 1;
  if (double(nx) * double(ny) * double(nz) * double(ci) > 2e8)
    throw InvalidArgument("dense_conv_reference: bounding box too large for a dense copy");
  std::vector<double> dense(size_t(nx * ny * nz) * ci, 0.0);
  const std::vector<Coord> in_coords = grid_in.active_coords();
  for (size_t n = 0; n < in_coords.size(); ++n) {
    const Coord d = in_coords[n] - box.min;
    const size_t at = size_t((int64_t(d.i) * ny + d.j) * nz + d.k) * ci;
    for (size_t c = 0; c < ci; ++c) dense[at + c] = double(features(n, c));
  }
  const std::vector<Coord> out_coords = grid_out.active_coords();
  parallel_for(out_coords.size(), 64, [&](size_t o) {
    double* dst = out.row(o);
    const Coord& c = out_coords[o];
    for (int off = 0; off < kStencilSize; ++off) {
      const Coord s = stencil_offset(off);
      const int64_t x = int64_t(c.i) * stride + s.i - box.min.i, y = int64_t(c.j) * stride + s.j - box.min.j,
                    z = int64_t(c.k) * stride + s.k - box.min.k;
      if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) continue;
      const double* src = dense.data() + size_t((x * ny + y) * nz + z) * ci;
      for (size_t a = 0; a < co; ++a) {
        double acc = 0.0;
        for (size_t b = 0; b < ci; ++b) acc += double(kernel.at(a, b, off)) * src[b];
        dst[a] += acc;
      }
    }
  });
  return out;
}

template <class T>
double relative_error(const Tensor<T>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw InvalidArgument("relative_error: shape mismatch");
  double num = 0.0, den = 0.0;
  for (size_t n = 0; n < b.size(); ++n) {
    num = std::max(num, std::abs(double(a.values()[n]) - b.values()[n]));
    den = std::max(den, std::abs(b.values()[n]));
  }
  if (den == 0.0) return num;
  return num / den;
}

std::vector<Ray> camera_rays(size_t width, size_t height, const Vec3d& eye, const Vec3d& target,
                             double fov_degrees) {
  if (width == 0 || height == 0) throw InvalidArgument("camera_rays: image dimensions must be >= 1");
  const Vec3d forward = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
  Vec3d up_hint{0, 1, 0};
  if (std::abs(forward[1]) > 0.999) up_hint = {0, 0, 1};
  const Vec3d right = normalized(cross(forward, up_hint));
  const Vec3d up = cross(right, forward);
  const double tan_half = std::tan(fov_degrees * M_PI / 360.0);
  const double aspect = double(width) / double(height);
  std::vector<Ray> rays(width * height);
  for (size_t y = 0; y < height; ++y)
    for (size_t x = 0; x < width; ++x) {
      const double u = (2.0 * (double(x) + 0.5) / double(width) - 1.0) * tan_half * aspect;
      const double v = (1.0 - 2.0 * (double(y) + 0.5) / double(height)) * tan_half;
      Ray& r = rays[y * width + x];
      r.origin = eye;
      r.direction = normalized({forward[0] + u * right[0] + v * up[0], forward[1] + u * right[1] + v * up[1],
                                forward[2] + u * right[2] + v * up[2]});
    }
  return rays;
}

Image render_levelset(const IndexGrid& grid, std::span<const double> phi, std::span<const Ray> rays, size_t width,
                      size_t height, std::vector<std::optional<LevelSetHit>>* hits) {
  if (rays.size() != width * height) throw InvalidArgument("render_levelset: need one ray per pixel");
  std::vector<std::optional<LevelSetHit>> found = intersect_levelset(grid, phi, rays);
  std::vector<size_t> hit_pixels;
  std::vector<double> positions;
  for (size_t p = 0; p < found.size(); ++p)
    if (found[p]) {
      hit_pixels.push_back(p);
      positions.insert(positions.end(), found[p]->position.begin(), found[p]->position.end());
    }
  Image image(width, height);
  if (!hit_pixels.empty()) {
    const GridBatch batch(std::vector<IndexGrid>{grid});
    const Tensor<double> features({phi.size(), 1}, std::vector<double>(phi.begin(), phi.end()));
    const Tensor<double> points({hit_pixels.size(), 3}, std::move(positions));
    const SampleWithGrad<double> g =
        sample_with_grad(batch, JaggedTensor<double>::from_list(std::span(&features, 1)),
                         JaggedTensor<double>::from_list(std::span(&points, 1)), InterpMode::trilinear);
    const Vec3d light = normalized({0.4, 0.7, 0.6});
    for (size_t h = 0; h < hit_pixels.size(); ++h) {
      const double* grad = g.gradients.data() + h * 3;
      const double len = std::sqrt(grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]);
      double shade = 0.15;
      if (len > 0) shade += 0.85 * std::max(0.0, (grad[0] * light[0] + grad[1] * light[1] + grad[2] * light[2]) / len);
      const auto v = uint8_t(std::lround(255.0 * std::min(1.0, shade)));
      uint8_t* px = image.rgb.data() + hit_pixels[h] * 3;
      px[0] = px[1] = px[2] = v;
    }
  }
  if (hits) *hits = std::move(found);
  return image;
}

Image render_occupancy(const IndexGrid& grid, std::span<const Ray> rays, size_t width, size_t height,
                       double density, double step) {
  if (rays.size() != width * height) throw InvalidArgument("render_occupancy: need one ray per pixel");
  const uint64_t n = grid.active_voxel_count();
  const std::vector<double> sigma(n, density);
  const Tensor<double> color({n, 3}, std::vector<double>(n * 3, 1.0));
  const std::vector<RenderResult> px = volume_render(grid, sigma, color, rays, step);
  Image image(width, height);
  for (size_t p = 0; p < px.size(); ++p)
    for (int c = 0; c < 3; ++c)
      image.rgb[p * 3 + size_t(c)] = uint8_t(std::lround(255.0 * std::clamp(px[p].rgb[size_t(c)], 0.0, 1.0)));
  return image;
}

std::vector<Ray> default_camera(size_t width, size_t height) {
  return camera_rays(width, height, {1.6, 1.3, 2.0}, {0.5, 0.5, 0.5}, 40.0);
}

uint64_t peak_memory_bytes() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ss(line.substr(6));
      uint64_t kb = 0;
      ss >> kb;
      return kb * 1024;
    }
  return 0;
}

template Tensor<float> random_features(size_t, size_t, uint64_t);
template Tensor<double> random_features(size_t, size_t, uint64_t);
template ConvKernel<float> random_kernel(size_t, size_t, uint64_t);
template ConvKernel<double> random_kernel(size_t, size_t, uint64_t);
template Tensor<double> dense_conv_reference(const IndexGrid&, const Tensor<float>&, const ConvKernel<float>&,
                                             const IndexGrid&, int);
template Tensor<double> dense_conv_reference(const IndexGrid&, const Tensor<double>&, const ConvKernel<double>&,
                                             const IndexGrid&, int);
template double relative_error(const Tensor<float>&, const Tensor<double>&);
template double relative_error(const Tensor<double>&, const Tensor<double>&);

}  // namespace fvdb
