#include "fvdb/build.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "fvdb/keys.hpp"
#include "fvdb/parallel.hpp"

namespace fvdb {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point& t) {
  const auto now = Clock::now();
  const double s = std::chrono::duration<double>(now - t).count();
  t = now;
  return s;
}

constexpr size_t kGrain = 1 << 14;

// Index of the first element failing `bad`, or n.
template <class Bad>
size_t first_bad(size_t n, Bad&& bad) {
  std::vector<size_t> found(chunk_count(n, kGrain), n);
  parallel_chunks(n, kGrain, [&](size_t b, size_t e, size_t c) {
    for (size_t i = b; i < e; ++i)
      if (bad(i)) {
        found[c] = i;
        return;
      }
  });
  return found.empty() ? n : *std::min_element(found.begin(), found.end());
}

void sort_run(std::vector<uint64_t>& keys, size_t begin, size_t end) {
  std::sort(keys.begin() + std::ptrdiff_t(begin), keys.begin() + std::ptrdiff_t(end));
}

}  // namespace

void radix_sort(std::vector<uint64_t>& keys, std::vector<uint32_t>* payload, int key_bits) {
  const size_t n = keys.size();
  if (n < 2) return;
  if (payload && payload->size() != n) throw InvalidArgument("radix_sort: payload size mismatch");

  std::vector<uint64_t> keys_tmp(n);
  std::vector<uint32_t> payload_tmp(payload ? n : 0);
  const size_t chunks = chunk_count(n, kGrain);
  std::vector<std::array<size_t, 256>> hist(chunks);

  for (int shift = 0; shift < key_bits; shift += 8) {
    parallel_chunks(n, kGrain, [&](size_t b, size_t e, size_t c) {
      auto& h = hist[c];
      h.fill(0);
      for (size_t i = b; i < e; ++i) ++h[(keys[i] >> shift) & 255];
    });
    // A digit shared by every key leaves the order unchanged.
    bool trivial = false;
    for (size_t d = 0; d < 256 && !trivial; ++d) {
      size_t total = 0;
      for (const auto& h : hist) total += h[d];
      if (total == n) trivial = true;
      else if (total != 0) break;
    }
    if (trivial) continue;

    size_t running = 0;
    for (size_t d = 0; d < 256; ++d) {
      for (auto& h : hist) {
        const size_t count = h[d];
        h[d] = running;
        running += count;
      }
    }
    parallel_chunks(n, kGrain, [&](size_t b, size_t e, size_t c) {
      auto& h = hist[c];
      for (size_t i = b; i < e; ++i) {
        const size_t dst = h[(keys[i] >> shift) & 255]++;
        keys_tmp[dst] = keys[i];
        if (payload) payload_tmp[dst] = (*payload)[i];
      }
    });
    keys.swap(keys_tmp);
    if (payload) payload->swap(payload_tmp);
  }
}

std::vector<std::pair<uint64_t, uint64_t>> run_length_encode(std::span<const uint64_t> sorted) {
  std::vector<std::pair<uint64_t, uint64_t>> runs;
  for (size_t i = 0; i < sorted.size();) {
    size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    runs.emplace_back(sorted[i], j - i);
    i = j;
  }
  return runs;
}

BuildResult build_from_coords(std::span<const Coord> coords, const VoxelTransform& transform) {
  if (!transform.valid()) throw InvalidArgument("build_from_coords: voxel size must be positive and finite");
  BuildResult result;
  BuildStats& stats = result.stats;
  const auto start = Clock::now();
  auto t = start;
  const size_t n = coords.size();
  stats.input_count = n;
  if (n == 0) {
    IndexGrid::Parts parts;
    parts.transform = transform;
    result.grid = IndexGrid(std::move(parts));
    return result;
  }
  if (n > UINT32_MAX) throw InvalidArgument("build_from_coords: more than 2^32 coordinates");

  const size_t bad = first_bad(n, [&](size_t i) { return !in_range(coords[i]); });
  if (bad != n)
    throw InvalidArgument("build_from_coords: coordinate " + to_string(coords[bad]) + " at position " +
                          std::to_string(bad) + " exceeds +/-2^30");

  // Tile keys, sorted together with the input permutation.
  std::vector<uint64_t> tile_keys(n);
  std::vector<uint32_t> perm(n);
  parallel_for(n, kGrain, [&](size_t i) {
    tile_keys[i] = TileKey::encode(coords[i]);
    perm[i] = uint32_t(i);
  });
  stats.tile_key_s = seconds_since(t);
  radix_sort(tile_keys, &perm, 63);
  stats.tile_sort_s = seconds_since(t);

  // Run-length encode: run M spans [run_begin[M], run_begin[M+1]).
  std::vector<size_t> run_begin;
  std::vector<uint64_t> run_key;
  for (size_t i = 0; i < n; ++i) {
    if (i == 0 || tile_keys[i] != tile_keys[i - 1]) {
      run_begin.push_back(i);
      run_key.push_back(tile_keys[i]);
    }
  }
  const size_t runs = run_begin.size();
  run_begin.push_back(n);
  if (runs > VoxelKey::kMaxRuns) throw InvalidArgument("build_from_coords: more than 2^28 root tiles");
  stats.rle_s = seconds_since(t);

  std::vector<uint64_t> voxel_keys(n);
  parallel_for(runs, 64, [&](size_t m) {
    for (size_t e = run_begin[m]; e < run_begin[m + 1]; ++e) voxel_keys[e] = VoxelKey::encode(m, coords[perm[e]]);
  });
  perm = {};
  tile_keys = {};
  stats.voxel_key_s = seconds_since(t);

  // Runs share the high bits, so sorting each run independently sorts the
  // whole array. Large runs use the parallel radix sort on the low 36 bits.
  constexpr size_t kLargeRun = 1 << 16;
  parallel_for(runs, 64, [&](size_t m) {
    if (run_begin[m + 1] - run_begin[m] < kLargeRun) sort_run(voxel_keys, run_begin[m], run_begin[m + 1]);
  });
  for (size_t m = 0; m < runs; ++m) {
    const size_t len = run_begin[m + 1] - run_begin[m];
    if (len < kLargeRun) continue;
    std::vector<uint64_t> part(voxel_keys.begin() + std::ptrdiff_t(run_begin[m]),
                               voxel_keys.begin() + std::ptrdiff_t(run_begin[m + 1]));
    radix_sort(part, nullptr, 36);
    std::copy(part.begin(), part.end(), voxel_keys.begin() + std::ptrdiff_t(run_begin[m]));
  }
  voxel_keys.erase(std::unique(voxel_keys.begin(), voxel_keys.end()), voxel_keys.end());
  const size_t unique = voxel_keys.size();
  stats.voxel_sort_s = seconds_since(t);

  // Node counts from unique key prefixes, and the start of every node.
  std::vector<size_t> leaf_begin, lower_begin;
  for (size_t v = 0; v < unique; ++v) {
    if (v == 0 || (voxel_keys[v] >> 9) != (voxel_keys[v - 1] >> 9)) leaf_begin.push_back(v);
    if (v == 0 || (voxel_keys[v] >> 21) != (voxel_keys[v - 1] >> 21)) lower_begin.push_back(v);
  }
  stats.unique_count = unique;
  stats.upper_count = runs;
  stats.lower_count = lower_begin.size();
  stats.leaf_count = leaf_begin.size();
  stats.count_s = seconds_since(t);

  IndexGrid::Parts parts;
  parts.transform = transform;
  parts.root.resize(runs);
  parts.uppers.resize(runs);
  parts.lowers.resize(lower_begin.size());
  parts.leaves.resize(leaf_begin.size());

  for (size_t m = 0; m < runs; ++m) {
    parts.root[m] = {run_key[m], uint32_t(m)};
    parts.uppers[m].origin = TileKey::decode(run_key[m]);
  }

  // Lower nodes register into uppers; leaves register into lowers. Children
  // of a node are contiguous because keys are sorted.
  for (size_t l = 0; l < lower_begin.size(); ++l) {
    const uint64_t key = voxel_keys[lower_begin[l]];
    UpperNode& upper = parts.uppers[VoxelKey::run(key)];
    const uint32_t off = VoxelKey::upper(key);
    if (upper.child_mask.stored_words().empty()) upper.first_child = uint32_t(l);
    upper.child_mask.set(off);
    const Coord local = decode_local_offset(off, kUpperLog2);
    parts.lowers[l].origin = upper.origin + Coord{local.i * kLowerSpan, local.j * kLowerSpan, local.k * kLowerSpan};
  }
  size_t lower_index = 0;
  for (size_t f = 0; f < leaf_begin.size(); ++f) {
    const size_t v = leaf_begin[f];
    while (lower_index + 1 < lower_begin.size() && lower_begin[lower_index + 1] <= v) ++lower_index;
    LowerNode& lower = parts.lowers[lower_index];
    const uint32_t off = VoxelKey::lower(voxel_keys[v]);
    if (lower.child_mask.stored_words().empty()) lower.first_child = uint32_t(f);
    lower.child_mask.set(off);
    const Coord local = decode_local_offset(off, kLowerLog2);
    parts.leaves[f].origin = lower.origin + Coord{local.i * kLeafDim, local.j * kLeafDim, local.k * kLeafDim};
  }
  parallel_for(runs, 1024, [&](size_t m) { parts.uppers[m].child_mask.finalize(); });
  parallel_for(parts.lowers.size(), 1024, [&](size_t l) { parts.lowers[l].child_mask.finalize(); });

  // Active voxels into leaf bit masks, then value offsets by exclusive scan.
  const size_t leaves = leaf_begin.size();
  leaf_begin.push_back(unique);
  parallel_for(leaves, 1024, [&](size_t f) {
    LeafTopology& leaf = parts.leaves[f];
    for (size_t v = leaf_begin[f]; v < leaf_begin[f + 1]; ++v) leaf.set_active(VoxelKey::leaf(voxel_keys[v]));
    leaf.prefix_sum = LeafTopology::compute_prefix_sum(leaf.bit_mask);
  });
  uint64_t offset = 1;
  for (size_t f = 0; f < leaves; ++f) {
    parts.leaves[f].value_offset = offset;
    offset += leaf_begin[f + 1] - leaf_begin[f];
  }
  result.grid = IndexGrid(std::move(parts));
  stats.register_s = seconds_since(t);
  stats.total_s = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

BuildResult build_from_points(std::span<const Vec3d> points, const VoxelTransform& transform) {
  if (!transform.valid()) throw InvalidArgument("build_from_points: voxel size must be positive and finite");
  const size_t n = points.size();
  std::vector<Coord> coords(n);
  const size_t bad = first_bad(n, [&](size_t i) {
    const Vec3d x = transform.world_to_index(points[i]);
    for (int a = 0; a < 3; ++a) {
      const double q = std::floor(x[a] + 0.5);
      if (!std::isfinite(q) || std::abs(q) > double(kCoordLimit)) return true;
    }
    coords[i] = transform.quantize(points[i]);
    return false;
  });
  if (bad != n) {
    const auto& p = points[bad];
    throw InvalidArgument("build_from_points: point " + std::to_string(bad) + " (" + std::to_string(p[0]) + ", " +
                          std::to_string(p[1]) + ", " + std::to_string(p[2]) +
                          ") is non-finite or outside the index range");
  }
  return build_from_coords(coords, transform);
}

bool triangle_box_overlap(const Vec3d& center, const Vec3d& half, const std::array<Vec3d, 3>& tri) {
  auto sub = [](const Vec3d& a, const Vec3d& b) { return Vec3d{a[0] - b[0], a[1] - b[1], a[2] - b[2]}; };
  auto cross = [](const Vec3d& a, const Vec3d& b) {
    return Vec3d{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  };
  auto dot = [](const Vec3d& a, const Vec3d& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; };

  const std::array<Vec3d, 3> v{sub(tri[0], center), sub(tri[1], center), sub(tri[2], center)};
  auto separated = [&](const Vec3d& axis) {
    if (axis[0] == 0.0 && axis[1] == 0.0 && axis[2] == 0.0) return false;
    const double p0 = dot(v[0], axis), p1 = dot(v[1], axis), p2 = dot(v[2], axis);
    const double r = half[0] * std::abs(axis[0]) + half[1] * std::abs(axis[1]) + half[2] * std::abs(axis[2]);
    return std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r;
  };

  const std::array<Vec3d, 3> box_axes{Vec3d{1, 0, 0}, Vec3d{0, 1, 0}, Vec3d{0, 0, 1}};
  for (const auto& a : box_axes)
    if (separated(a)) return false;
  const std::array<Vec3d, 3> edges{sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])};
  if (separated(cross(edges[0], edges[1]))) return false;
  for (const auto& e : edges)
    for (const auto& a : box_axes)
      if (separated(cross(e, a))) return false;
  return true;
}

IndexGrid build_from_mesh(std::span<const Vec3d> vertices, std::span<const Triangle> triangles,
                          const VoxelTransform& transform) {
  if (!transform.valid()) throw InvalidArgument("build_from_mesh: voxel size must be positive and finite");
  for (size_t t = 0; t < triangles.size(); ++t)
    for (uint32_t v : triangles[t])
      if (v >= vertices.size())
        throw InvalidArgument("build_from_mesh: triangle " + std::to_string(t) + " references vertex " +
                              std::to_string(v) + " of " + std::to_string(vertices.size()));
  for (size_t v = 0; v < vertices.size(); ++v)
    for (double x : vertices[v])
      if (!std::isfinite(x)) throw InvalidArgument("build_from_mesh: vertex " + std::to_string(v) + " is non-finite");

  // Overlap is tested in index space, where every voxel is a unit box
  // centred on its integer coordinate.
  const size_t chunks = chunk_count(triangles.size(), 64);
  std::vector<std::vector<Coord>> found(chunks);
  parallel_chunks(triangles.size(), 64, [&](size_t b, size_t e, size_t c) {
    auto& out = found[c];
    for (size_t t = b; t < e; ++t) {
      const std::array<Vec3d, 3> tri{transform.world_to_index(vertices[triangles[t][0]]),
                                     transform.world_to_index(vertices[triangles[t][1]]),
                                     transform.world_to_index(vertices[triangles[t][2]])};
      Coord lo, hi;
      for (int a = 0; a < 3; ++a) {
        const double mn = std::min({tri[0][a], tri[1][a], tri[2][a]});
        const double mx = std::max({tri[0][a], tri[1][a], tri[2][a]});
        if (std::abs(mn) > kCoordLimit || std::abs(mx) > kCoordLimit)
          throw InvalidArgument("build_from_mesh: triangle " + std::to_string(t) + " lies outside the index range");
        lo[a] = int32_t(std::ceil(mn - 0.5));
        hi[a] = int32_t(std::floor(mx + 0.5));
      }
      for (int32_t i = lo.i; i <= hi.i; ++i)
        for (int32_t j = lo.j; j <= hi.j; ++j)
          for (int32_t k = lo.k; k <= hi.k; ++k)
            if (triangle_box_overlap({double(i), double(j), double(k)}, {0.5, 0.5, 0.5}, tri))
              out.push_back({i, j, k});
    }
  });
  std::vector<Coord> coords;
  for (auto& f : found) coords.insert(coords.end(), f.begin(), f.end());
  return build_from_coords(coords, transform).grid;
}

IndexGrid dilate(const IndexGrid& grid, int radius) {
  if (radius < 1) throw InvalidArgument("dilate: radius must be >= 1");
  const std::vector<Coord> active = grid.active_coords();
  const int32_t side = 2 * radius + 1;
  const size_t per = size_t(side) * side * side;
  std::vector<Coord> coords(active.size() * per);
  parallel_for(active.size(), 1024, [&](size_t a) {
    size_t o = a * per;
    for (int32_t di = -radius; di <= radius; ++di)
      for (int32_t dj = -radius; dj <= radius; ++dj)
        for (int32_t dk = -radius; dk <= radius; ++dk) coords[o++] = active[a] + Coord{di, dj, dk};
  });
  IndexGrid out = build_from_coords(coords, grid.transform()).grid;
  out.set_name(grid.name());
  return out;
}

VoxelTransform coarsened_transform(const VoxelTransform& t, int factor) {
  VoxelTransform out = t;
  for (int a = 0; a < 3; ++a) {
    out.voxel_size[a] = t.voxel_size[a] * factor;
    out.origin[a] = t.origin[a] + t.voxel_size[a] * (factor - 1) * 0.5;
  }
  return out;
}

VoxelTransform subdivided_transform(const VoxelTransform& t, int factor) {
  VoxelTransform out = t;
  for (int a = 0; a < 3; ++a) {
    out.voxel_size[a] = t.voxel_size[a] / factor;
    out.origin[a] = t.origin[a] - out.voxel_size[a] * (factor - 1) * 0.5;
  }
  return out;
}

IndexGrid coarsen(const IndexGrid& grid, int factor) {
  if (factor < 1) throw InvalidArgument("coarsen: factor must be >= 1");
  std::vector<Coord> coords = grid.active_coords();
  parallel_for(coords.size(), kGrain, [&](size_t n) {
    Coord& c = coords[n];
    c = {floor_div(c.i, factor), floor_div(c.j, factor), floor_div(c.k, factor)};
  });
  IndexGrid out = build_from_coords(coords, factor == 1 ? grid.transform() : coarsened_transform(grid.transform(), factor)).grid;
  out.set_name(grid.name());
  return out;
}

IndexGrid subdivide(const IndexGrid& grid, int factor) {
  if (factor < 1) throw InvalidArgument("subdivide: factor must be >= 1");
  const std::vector<Coord> active = grid.active_coords();
  if (!active.empty()) {
    const CoordBBox box = grid.active_bbox();
    for (int a = 0; a < 3; ++a)
      if (int64_t(box.min[a]) * factor < -kCoordLimit || (int64_t(box.max[a]) + 1) * factor - 1 > kCoordLimit)
        throw InvalidArgument("subdivide: result exceeds the +/-2^30 coordinate range");
  }
  const size_t per = size_t(factor) * factor * factor;
  std::vector<Coord> coords(active.size() * per);
  parallel_for(active.size(), 1024, [&](size_t a) {
    const Coord base{active[a].i * factor, active[a].j * factor, active[a].k * factor};
    size_t o = a * per;
    for (int32_t i = 0; i < factor; ++i)
      for (int32_t j = 0; j < factor; ++j)
        for (int32_t k = 0; k < factor; ++k) coords[o++] = base + Coord{i, j, k};
  });
  IndexGrid out =
      build_from_coords(coords, factor == 1 ? grid.transform() : subdivided_transform(grid.transform(), factor)).grid;
  out.set_name(grid.name());
  return out;
}

}  // namespace fvdb
