#pragma once

// Seeded grids and rays shared by the raymarch tests and the acceptance run.

#include <cmath>
#include <random>
#include <vector>

#include "fvdb/build.hpp"
#include "fvdb/raymarch.hpp"

namespace fixtures {

using namespace fvdb;

// Clusters spread over several leaves, lower nodes and tiles. Voxel sizes
// are powers of two so face-aligned rays are exact in index space.
inline IndexGrid random_sparse_grid(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Coord> c;
  const int clusters = 1 + int(rng() % 6);
  for (int n = 0; n < clusters; ++n) {
    const int span = seed % 3 == 0 ? 6000 : 300;
    const Coord centre{int(rng() % span) - span / 2, int(rng() % span) - span / 2, int(rng() % span) - span / 2};
    const int size = 2 + int(rng() % 20), count = 1 + int(rng() % 400);
    for (int m = 0; m < count; ++m)
      c.push_back(centre + Coord{int(rng() % size), int(rng() % size), int(rng() % size)});
  }
  return build_from_coords(c, VoxelTransform{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}}).grid;
}

inline std::vector<Ray> random_rays(const IndexGrid& g, size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const CoordBBox box = g.active_bbox();
  const auto& xf = g.transform();
  const Vec3d lo = xf.voxel_center(box.min - Coord{3, 3, 3}), hi = xf.voxel_center(box.max + Coord{3, 3, 3});
  auto point = [&] {
    Vec3d p;
    for (int a = 0; a < 3; ++a) p[a] = lo[a] + u(rng) * (hi[a] - lo[a]);
    return p;
  };
  // Snaps to a voxel face (index-space integer) on `axis`.
  auto snap = [&](double w, int axis) {
    return std::round((w - xf.origin[axis]) / xf.voxel_size[axis] + 0.5) * xf.voxel_size[axis] + xf.origin[axis] -
           0.5 * xf.voxel_size[axis];
  };
  const std::vector<Coord> active = g.active_coords();
  // Most rays aim at a random point inside a random active voxel.
  auto aim = [&] {
    if (active.empty() || rng() % 4 == 0) return point();
    Vec3d p = xf.voxel_center(active[rng() % active.size()]);
    for (int a = 0; a < 3; ++a) p[a] += (u(rng) - 0.5) * xf.voxel_size[a];
    return p;
  };
  std::vector<Ray> rays(n);
  for (size_t r = 0; r < n; ++r) {
    Ray& ray = rays[r];
    ray.origin = point();
    const Vec3d target = aim();
    for (int a = 0; a < 3; ++a) ray.direction[a] = target[a] - ray.origin[a];
    switch (r % 6) {
      case 0:  // axis aligned through the target, sometimes on a face or edge
        for (int a = 0; a < 3; ++a)
          if (a != int(r / 6 % 3)) {
            ray.direction[a] = 0;
            ray.origin[a] = rng() % 2 ? snap(target[a], a) : target[a];
          }
        break;
      case 1: {  // diagonal through exact lattice points near the target
        const double back = double(rng() % 24);
        for (int a = 0; a < 3; ++a) {
          const double sign = rng() % 2 ? 1.0 : -1.0;
          ray.direction[a] = sign * xf.voxel_size[a];
          ray.origin[a] = snap(target[a], a) - back * ray.direction[a];
        }
        break;
      }
      case 2:  // a clipped parameter window
        ray.t0 = 0.2 + 0.3 * u(rng);
        ray.t1 = ray.t0 + 0.4 * u(rng) + 1e-3;
        break;
      default: break;
    }
  }
  return rays;
}

}  // namespace fixtures
