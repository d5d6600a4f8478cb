#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fvdb/index_grid.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// Counters and per-phase wall times (seconds) of one build.
struct BuildStats {
  uint64_t input_count = 0;
  uint64_t unique_count = 0;
  uint64_t upper_count = 0;
  uint64_t lower_count = 0;
  uint64_t leaf_count = 0;
  double tile_key_s = 0, tile_sort_s = 0, rle_s = 0, voxel_key_s = 0, voxel_sort_s = 0, count_s = 0,
         register_s = 0, total_s = 0;
};

struct BuildResult {
  IndexGrid grid;
  BuildStats stats;
};

using Triangle = std::array<uint32_t, 3>;

/// Sort/run-length-encode construction. Duplicates collapse; empty input
/// yields an empty grid. Throws InvalidArgument naming the first coordinate
/// outside +/-2^30.
BuildResult build_from_coords(std::span<const Coord> coords, const VoxelTransform& transform = {});

/// Quantizes world points to the nearest voxel centre, then builds.
BuildResult build_from_points(std::span<const Vec3d> points, const VoxelTransform& transform);

/// Voxels whose closed world-space box overlaps at least one triangle.
IndexGrid build_from_mesh(std::span<const Vec3d> vertices, std::span<const Triangle> triangles,
                          const VoxelTransform& transform);

/// Union of the [-radius, radius]^3 neighbourhoods of all active voxels.
IndexGrid dilate(const IndexGrid& grid, int radius);

/// Voxel c is active iff some voxel in [factor*c, factor*c + factor)^3 is.
IndexGrid coarsen(const IndexGrid& grid, int factor);

/// Every active voxel becomes its factor^3 children.
IndexGrid subdivide(const IndexGrid& grid, int factor);

VoxelTransform coarsened_transform(const VoxelTransform& t, int factor);
VoxelTransform subdivided_transform(const VoxelTransform& t, int factor);

/// Stable LSD radix sort on bits [0, key_bits) with 8-bit digits, parallel
/// over contiguous chunks. `payload` (optional) is permuted alongside.
void radix_sort(std::vector<uint64_t>& keys, std::vector<uint32_t>* payload, int key_bits = 64);

/// (value, run length) pairs of a sorted sequence.
std::vector<std::pair<uint64_t, uint64_t>> run_length_encode(std::span<const uint64_t> sorted);

/// Closed separating-axis test between a triangle and an axis-aligned box.
/// Degenerate triangles behave as segments or points.
bool triangle_box_overlap(const Vec3d& center, const Vec3d& half, const std::array<Vec3d, 3>& tri);

}  // namespace fvdb
