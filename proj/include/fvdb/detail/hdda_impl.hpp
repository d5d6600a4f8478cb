#pragma once

// Template body of hdda_traverse; included from raymarch.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace fvdb {
namespace detail {

inline constexpr std::array<int64_t, 4> kDdaCellSize{kUpperSpan, kLowerSpan, kLeafDim, 1};
inline constexpr std::array<int64_t, 3> kDdaFanOut{kUpperSpan / kLowerSpan, kLowerSpan / kLeafDim, kLeafDim};

template <class Visit>
class HddaWalker {
 public:
  HddaWalker(const IndexGrid& grid, GridAccessor& acc, const IndexRay& ray, Visit& visit,
             TraversalCounters* counters)
      : grid_(grid), acc_(acc), ray_(ray), visit_(visit), counters_(counters ? counters : &scratch_) {}

  bool run() {
    if (grid_.empty()) return true;
    const CoordBBox tiles = grid_.tile_bbox();
    double t_in = ray_.t0, t_end = ray_.t1;
    std::array<int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = tiles.min[a];
      hi[a] = tiles.max[a];
      const double p0 = double(lo[a] * kUpperSpan), p1 = double((hi[a] + 1) * kUpperSpan);
      const double o = ray_.origin[a], d = ray_.direction[a];
      if (d == 0.0) {
        if (o < p0 || o >= p1) return true;
        continue;
      }
      double ta = plane_t(p0, o, d), tb = plane_t(p1, o, d);
      if (d < 0) std::swap(ta, tb);
      t_in = std::max(t_in, ta);
      t_end = std::min(t_end, tb);
    }
    if (!(t_in < t_end)) return true;
    return walk(0, lo, hi, t_in, t_end);
  }

 private:
  // Cell at `size` granularity occupied by the ray just after parameter t,
  // consistent with plane_t so that every level agrees on boundaries.
  int64_t start_cell(int a, double t, int64_t size) const {
    const double o = ray_.origin[a], d = ray_.direction[a];
    const double s = double(size);
    if (d == 0.0) return int64_t(std::floor(o / s));
    int64_t c = int64_t(std::floor((o + t * d) / s));
    if (d > 0) {
      while (plane_t(double(c * size), o, d) > t) --c;
      while (plane_t(double((c + 1) * size), o, d) <= t) ++c;
    } else {
      while (plane_t(double((c + 1) * size), o, d) > t) ++c;
      while (plane_t(double(c * size), o, d) <= t) --c;
    }
    return c;
  }

  bool walk(int level, const std::array<int64_t, 3>& lo, const std::array<int64_t, 3>& hi, double t_in,
            double t_end) {
    const int64_t size = kDdaCellSize[size_t(level)];
    std::array<int64_t, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(start_cell(a, t_in, size), lo[a], hi[a]);
    double t = t_in;
    while (true) {
      std::array<double, 3> next{};
      double t_out = t_end;
      for (int a = 0; a < 3; ++a) {
        const double d = ray_.direction[a];
        next[a] = d > 0   ? plane_t(double((c[a] + 1) * size), ray_.origin[a], d)
                  : d < 0 ? plane_t(double(c[a] * size), ray_.origin[a], d)
                          : std::numeric_limits<double>::infinity();
        t_out = std::min(t_out, next[a]);
      }
      if (t < t_out && !visit_cell(level, c, t, t_out)) return false;
      if (t_out >= t_end) return true;
      for (int a = 0; a < 3; ++a) {
        if (next[a] != t_out) continue;
        c[a] += ray_.direction[a] > 0 ? 1 : -1;
        if (c[a] < lo[a] || c[a] > hi[a]) return true;
      }
      t = t_out;
    }
  }

  bool descend(int level, const std::array<int64_t, 3>& c, double t_in, double t_out) {
    const int64_t fan = kDdaFanOut[size_t(level)];
    std::array<int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = c[a] * fan;
      hi[a] = lo[a] + fan - 1;
    }
    return walk(level + 1, lo, hi, t_in, t_out);
  }

  bool visit_cell(int level, const std::array<int64_t, 3>& c, double t_in, double t_out) {
    const int64_t size = kDdaCellSize[size_t(level)];
    const Coord origin{int32_t(c[0] * size), int32_t(c[1] * size), int32_t(c[2] * size)};
    switch (level) {
      case 0:
        ++counters_->tile_cells;
        return acc_.probe_upper(origin) ? descend(0, c, t_in, t_out) : true;
      case 1:
        ++counters_->lower_cells;
        return acc_.probe_lower(origin) ? descend(1, c, t_in, t_out) : true;
      case 2:
        ++counters_->leaf_cells;
        leaf_ = acc_.probe_leaf(origin);
        return leaf_ ? descend(2, c, t_in, t_out) : true;
      default: {
        ++counters_->voxel_cells;
        if (!leaf_ || (origin & ~(kLeafDim - 1)) != leaf_->origin) {
          ++counters_->voxel_cells_outside_leaves;
          return true;
        }
        const uint64_t index = leaf_->get_value(origin);
        return index ? visit_(VoxelHit{index, origin, t_in, t_out}) : true;
      }
    }
  }

  const IndexGrid& grid_;
  GridAccessor& acc_;
  const IndexRay& ray_;
  Visit& visit_;
  TraversalCounters scratch_;
  TraversalCounters* counters_;
  const LeafTopology* leaf_ = nullptr;
};

}  // namespace detail

template <class Visit>
bool hdda_traverse(const IndexGrid& grid, GridAccessor& acc, const Ray& ray, Visit&& visit,
                   TraversalCounters* counters) {
  const IndexRay r = to_index_ray(grid.transform(), ray);
  detail::HddaWalker<std::remove_reference_t<Visit>> walker(grid, acc, r, visit, counters);
  return walker.run();
}

}  // namespace fvdb
