#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "fvdb/index_grid.hpp"
#include "fvdb/jagged.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// World-space ray; points are origin + t * direction for t in [t0, t1].
struct Ray {
  Vec3d origin{0, 0, 0};
  Vec3d direction{0, 0, 1};
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();

  bool valid() const;
  friend bool operator==(const Ray&, const Ray&) = default;
};

struct VoxelHit {
  uint64_t index = 0;  // 1-based grid index
  Coord coord;
  double t_enter = 0, t_exit = 0;
  friend bool operator==(const VoxelHit&, const VoxelHit&) = default;
};

struct RaySegment {
  double t_enter = 0, t_exit = 0;
  friend bool operator==(const RaySegment&, const RaySegment&) = default;
};

/// Cells visited per DDA level: 4096^3 root tiles, 128^3 and 8^3 node cells,
/// and single voxels.
struct TraversalCounters {
  uint64_t tile_cells = 0;
  uint64_t lower_cells = 0;
  uint64_t leaf_cells = 0;
  uint64_t voxel_cells = 0;
  uint64_t voxel_cells_outside_leaves = 0;

  TraversalCounters& operator+=(const TraversalCounters& o) {
    tile_cells += o.tile_cells;
    lower_cells += o.lower_cells;
    leaf_cells += o.leaf_cells;
    voxel_cells += o.voxel_cells;
    voxel_cells_outside_leaves += o.voxel_cells_outside_leaves;
    return *this;
  }
};

/// Ray in continuous index space where voxel c covers the half-open box
/// [c, c + 1). t is shared with the world ray.
struct IndexRay {
  Vec3d origin, direction;
  double t0, t1;
};

IndexRay to_index_ray(const VoxelTransform& transform, const Ray& ray);

/// Parameter at which the index-space ray crosses the axis plane x = plane.
inline double plane_t(double plane, double origin, double direction) { return (plane - origin) / direction; }

inline constexpr size_t kDefaultMaxHits = 2048;

/// Walks the grid with one DDA per tree level and calls visit(hit) for every
/// active voxel in ascending t; a false return stops the walk. Returns false
/// when stopped early.
template <class Visit>
bool hdda_traverse(const IndexGrid& grid, GridAccessor& acc, const Ray& ray, Visit&& visit,
                   TraversalCounters* counters = nullptr);

struct VoxelHits {
  JaggedTensor<VoxelHit> hits;   // one element per ray
  std::vector<uint8_t> truncated;  // 1 where max_hits cut the list short
  TraversalCounters counters;
};

/// Active voxels whose boxes meet each ray's [t0, t1] span, ascending in t.
VoxelHits hdda_voxels(const IndexGrid& grid, std::span<const Ray> rays, size_t max_hits = kDefaultMaxHits);
VoxelHits hdda_voxels(const IndexGrid& grid, const JaggedTensor<Ray>& rays, size_t max_hits = kDefaultMaxHits);

/// Maximal intervals of t covered by consecutive active voxels.
JaggedTensor<RaySegment> hdda_segments(const IndexGrid& grid, std::span<const Ray> rays);
JaggedTensor<RaySegment> hdda_segments(const IndexGrid& grid, const JaggedTensor<Ray>& rays);

struct LevelSetHit {
  double t = 0;
  Vec3d position{0, 0, 0};
};

/// First sign change of the trilinearly interpolated per-voxel scalar phi
/// along each ray, refined by 8 regula-falsi (bracketed secant) steps.
std::vector<std::optional<LevelSetHit>> intersect_levelset(const IndexGrid& grid, std::span<const double> phi,
                                                           std::span<const Ray> rays);

struct RenderResult {
  Vec3d rgb{0, 0, 0};
  double transmittance = 1.0;
  double depth = 0.0;
};

/// Emission-absorption compositing of per-voxel density [N] and colour
/// [N, 3], sampled every `step` (in t) inside the ray's active segments.
/// Density is per world-space length unit.
std::vector<RenderResult> volume_render(const IndexGrid& grid, std::span<const double> density,
                                        const Tensor<double>& color, std::span<const Ray> rays, double step);

}  // namespace fvdb

#include "fvdb/detail/hdda_impl.hpp"
