#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "fvdb/build.hpp"
#include "fvdb/io.hpp"
#include "fvdb/parallel.hpp"
#include "fvdb/workloads.hpp"
#include "oracles.hpp"

using namespace fvdb;

namespace {

std::vector<Coord> coords_of(const IndexGrid& g) { return oracle::as_set(g.active_coords()); }

void check_against_oracle(const std::vector<Coord>& coords) {
  const BuildResult r = build_from_coords(coords);
  const std::vector<Coord> expect = oracle::sorted_unique(coords);
  const oracle::NodeCounts n = oracle::node_counts(coords);
  REQUIRE(r.grid.active_coords() == expect);
  CHECK(r.grid.counts().upper == n.upper);
  CHECK(r.grid.counts().lower == n.lower);
  CHECK(r.grid.counts().leaf == n.leaf);
  CHECK(r.grid.active_voxel_count() == n.voxels);
  CHECK(r.stats.input_count == coords.size());
  CHECK(r.stats.unique_count == n.voxels);
  CHECK(r.stats.unique_count <= r.stats.input_count);
}

}  // namespace

TEST_CASE("single coordinate builds one node per level") {
  const std::vector<Coord> c{{0, 0, 0}};
  const GridCounts& n = build_from_coords(c).grid.counts();
  CHECK(n.upper == 1);
  CHECK(n.lower == 1);
  CHECK(n.leaf == 1);
  CHECK(n.active_voxels == 1);
}

TEST_CASE("coordinates in distinct tiles get distinct nodes") {
  const std::vector<Coord> c{{0, 0, 0}, {4096, 0, 0}};
  const GridCounts& n = build_from_coords(c).grid.counts();
  CHECK(n.upper == 2);
  CHECK(n.lower == 2);
  CHECK(n.leaf == 2);
}

TEST_CASE("random builds match the sort-unique oracle") {
  for (uint64_t seed = 0; seed < 4; ++seed) {
    check_against_oracle(random_coords(1000, 1 << 20, seed));
    check_against_oracle(random_coords(20000, 200, seed));     // dense, many duplicates
    check_against_oracle(random_coords(5000, 1 << 30, seed));  // full coordinate range
  }
}

TEST_CASE("large tile runs take the radix path and still match the oracle") {
  // Over 65536 voxels share a single tile.
  check_against_oracle(random_coords(100000, 2000, 21));
}

TEST_CASE("builds are independent of input order and thread count") {
  std::vector<Coord> coords = random_coords(30000, 3000, 8);
  const std::vector<uint8_t> ref = serialize_grid(build_from_coords(coords).grid);
  std::mt19937 rng(1);
  std::shuffle(coords.begin(), coords.end(), rng);
  const size_t saved = thread_count();
  for (size_t t : {1, 3, 8}) {
    set_thread_count(t);
    CHECK(serialize_grid(build_from_coords(coords).grid) == ref);
  }
  set_thread_count(saved);
}

TEST_CASE("out-of-range coordinates are rejected by name") {
  std::vector<Coord> coords{{0, 0, 0}, {1, (1 << 30) + 1, 0}};
  try {
    build_from_coords(coords);
    FAIL("expected a throw");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("1073741825") != std::string::npos);
  }
  coords[1] = {-(1 << 30), 1 << 30, 0};
  CHECK_NOTHROW(build_from_coords(coords));
}

TEST_CASE("build_from_points quantizes to the nearest voxel centre") {
  VoxelTransform xf{{0.1, 0.1, 0.1}, {1.0, 2.0, 3.0}};
  const std::vector<Vec3d> centre{xf.voxel_center({3, 4, 5})};
  CHECK(build_from_points(centre, xf).grid.active_coords() == std::vector<Coord>{{3, 4, 5}});
  const std::vector<Vec3d> near{{1.0 + 0.1 * 0.49, 2.0, 3.0}};
  CHECK(build_from_points(near, xf).grid.active_coords() == std::vector<Coord>{{0, 0, 0}});

  const std::vector<Vec3d> pts = normal_points(20000, 0.3, 5);
  std::vector<Coord> q;
  for (const auto& p : pts)
    q.push_back({int(std::floor((p[0] - 1.0) / 0.1 + 0.5)), int(std::floor((p[1] - 2.0) / 0.1 + 0.5)),
                 int(std::floor((p[2] - 3.0) / 0.1 + 0.5))});
  const IndexGrid g = build_from_points(pts, xf).grid;
  CHECK(g.active_coords() == oracle::sorted_unique(q));
  CHECK(g.transform() == xf);
}

TEST_CASE("non-finite points are rejected with their index") {
  std::vector<Vec3d> pts{{0, 0, 0}, {1, 1, 1}, {0, NAN, 0}};
  try {
    build_from_points(pts, {});
    FAIL("expected a throw");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("triangle_box_overlap agrees with polygon clipping") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  int overlaps = 0;
  for (int n = 0; n < 20000; ++n) {
    std::array<Vec3d, 3> tri;
    for (auto& v : tri) v = {u(rng), u(rng), u(rng)};
    if (n % 5 == 0) tri[2] = tri[1];  // segment
    if (n % 7 == 0) tri[1] = tri[2] = tri[0];  // point
    const Vec3d lo{-0.5, -0.5, -0.5}, hi{0.5, 0.5, 0.5};
    const bool expect = oracle::triangle_box_clip(lo, hi, tri);
    overlaps += expect;
    REQUIRE(triangle_box_overlap({0, 0, 0}, {0.5, 0.5, 0.5}, tri) == expect);
  }
  CHECK(overlaps > 1000);
}

namespace {

std::vector<Coord> brute_force_mesh(const std::vector<Vec3d>& v, const std::vector<Triangle>& tris,
                                    const VoxelTransform& xf, int lo, int hi) {
  std::vector<Coord> out;
  for (int i = lo; i <= hi; ++i)
    for (int j = lo; j <= hi; ++j)
      for (int k = lo; k <= hi; ++k) {
        const Vec3d c = xf.voxel_center({i, j, k});
        const Vec3d bmin{c[0] - xf.voxel_size[0] / 2, c[1] - xf.voxel_size[1] / 2, c[2] - xf.voxel_size[2] / 2};
        const Vec3d bmax{c[0] + xf.voxel_size[0] / 2, c[1] + xf.voxel_size[1] / 2, c[2] + xf.voxel_size[2] / 2};
        for (const auto& t : tris)
          if (oracle::triangle_box_clip(bmin, bmax, {v[t[0]], v[t[1]], v[t[2]]})) {
            out.push_back({i, j, k});
            break;
          }
      }
  return oracle::as_set(out);
}

}  // namespace

TEST_CASE("a triangle inside one voxel activates exactly that voxel") {
  const std::vector<Vec3d> v{{0.1, 0.1, 0.1}, {0.3, 0.1, 0.1}, {0.1, 0.3, 0.2}};
  const std::vector<Triangle> t{{0, 1, 2}};
  VoxelTransform xf{{1, 1, 1}, {0, 0, 0}};
  CHECK(build_from_mesh(v, t, xf).active_coords() == std::vector<Coord>{{0, 0, 0}});
}

TEST_CASE("unit square at voxel size 0.25 matches the brute-force scan") {
  const std::vector<Vec3d> v{{0, 0, 0.3}, {1, 0, 0.3}, {1, 1, 0.3}, {0, 1, 0.3}};
  const std::vector<Triangle> t{{0, 1, 2}, {0, 2, 3}};
  VoxelTransform xf{{0.25, 0.25, 0.25}, {0.125, 0.125, 0.125}};
  const IndexGrid g = build_from_mesh(v, t, xf);
  const auto expect = brute_force_mesh(v, t, xf, -3, 7);
  CHECK(coords_of(g) == expect);
  // One voxel thick; the square edges lie on voxel faces, so the closed test
  // adds the touching ring on both sides: 4x4 inside plus 20 around = 6x6.
  CHECK(g.active_voxel_count() == 36);
}

TEST_CASE("closed cube surface matches the brute-force scan with a hollow interior") {
  std::vector<Vec3d> v;
  for (int n = 0; n < 8; ++n) v.push_back({0.13 + 0.81 * (n & 1), 0.11 + 0.83 * ((n >> 1) & 1), 0.07 + 0.9 * (n >> 2)});
  const std::vector<Triangle> t{{0, 1, 3}, {0, 3, 2}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                                {2, 3, 7}, {2, 7, 6}, {0, 2, 6}, {0, 6, 4}, {1, 3, 7}, {1, 7, 5}};
  VoxelTransform xf{{0.1, 0.1, 0.1}, {0.0, 0.0, 0.0}};
  const IndexGrid g = build_from_mesh(v, t, xf);
  CHECK(coords_of(g) == brute_force_mesh(v, t, xf, -2, 12));
  CHECK(g.coord_to_index(xf.quantize({0.5, 0.5, 0.5})) == 0);
}

TEST_CASE("degenerate triangles are kept as segments and points") {
  const std::vector<Vec3d> v{{0.5, 0.5, 0.5}, {2.5, 0.5, 0.5}};
  const std::vector<Triangle> t{{0, 1, 1}, {0, 0, 0}};
  VoxelTransform xf{{1, 1, 1}, {0.5, 0.5, 0.5}};
  const IndexGrid g = build_from_mesh(v, t, xf);
  CHECK(coords_of(g) == brute_force_mesh(v, t, xf, -2, 5));
  CHECK(g.coord_to_index({1, 0, 0}) != 0);
  const std::vector<Triangle> bad{{0, 1, 2}};
  CHECK_THROWS_AS(build_from_mesh(v, bad, xf), InvalidArgument);
}

TEST_CASE("dilate matches the neighbourhood union") {
  const std::vector<Coord> one{{0, 0, 0}};
  CHECK(dilate(build_from_coords(one).grid, 1).active_voxel_count() == 27);
  const std::vector<Coord> two{{0, 0, 0}, {5, 0, 0}};
  CHECK(dilate(build_from_coords(two).grid, 1).active_voxel_count() == 54);

  const std::vector<Coord> coords = random_coords(1000, 30, 6);
  const IndexGrid g = build_from_coords(coords).grid;
  std::set<Coord> expect;
  for (const Coord& c : coords)
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j)
        for (int k = -2; k <= 2; ++k) expect.insert(c + Coord{i, j, k});
  CHECK(coords_of(dilate(g, 2)) == std::vector<Coord>(expect.begin(), expect.end()));
  CHECK_THROWS_AS(dilate(g, 0), InvalidArgument);
}

TEST_CASE("coarsen uses floor division and subdivide inverts it") {
  const std::vector<Coord> c{{-1, 0, 0}, {0, 0, 0}};
  const IndexGrid g = build_from_coords(c).grid;
  CHECK(coords_of(coarsen(g, 2)) == std::vector<Coord>{{-1, 0, 0}, {0, 0, 0}});
  CHECK(coords_of(coarsen(g, 1)) == coords_of(g));
  CHECK(coords_of(subdivide(g, 1)) == coords_of(g));

  for (int f : {2, 3, 4}) {
    const IndexGrid r = build_from_coords(random_coords(2000, 1000, uint64_t(f))).grid;
    const IndexGrid s = subdivide(r, f);
    CHECK(s.active_voxel_count() == r.active_voxel_count() * uint64_t(f * f * f));
    CHECK(coords_of(coarsen(s, f)) == coords_of(r));

    std::set<Coord> expect;
    for (const Coord& x : r.active_coords()) expect.insert({floor_div(x.i, f), floor_div(x.j, f), floor_div(x.k, f)});
    CHECK(coords_of(coarsen(r, f)) == std::vector<Coord>(expect.begin(), expect.end()));
  }
  CHECK_THROWS_AS(coarsen(g, 0), InvalidArgument);
  CHECK_THROWS_AS(subdivide(g, 0), InvalidArgument);
  const std::vector<Coord> far{{1 << 29, 0, 0}};
  CHECK_THROWS_AS(subdivide(build_from_coords(far).grid, 4), InvalidArgument);
}

TEST_CASE("coarsened and subdivided transforms keep voxel centres aligned") {
  VoxelTransform xf{{0.5, 0.5, 0.5}, {1, 2, 3}};
  const VoxelTransform c = coarsened_transform(xf, 2);
  // Coarse voxel 0 covers fine voxels 0 and 1, so its centre is their midpoint.
  CHECK(c.voxel_center({0, 0, 0})[0] == doctest::Approx(1.25));
  CHECK(c.voxel_size[0] == 1.0);
  const VoxelTransform s = subdivided_transform(xf, 2);
  CHECK(s.voxel_center({0, 0, 0})[0] == doctest::Approx(0.875));
  CHECK(s.voxel_center({1, 0, 0})[0] == doctest::Approx(1.125));
  CHECK(coarsened_transform(subdivided_transform(xf, 3), 3).origin[1] == doctest::Approx(2));
}

TEST_CASE("radix_sort is a stable sort with payload") {
  std::mt19937_64 rng(12);
  for (int bits : {8, 20, 36, 64}) {
    std::vector<uint64_t> keys(70000);
    for (auto& k : keys) k = bits == 64 ? rng() : rng() & ((uint64_t(1) << bits) - 1);
    for (size_t n = 0; n < keys.size(); n += 3) keys[n] = keys[n / 2];  // duplicates
    std::vector<uint32_t> payload(keys.size());
    std::iota(payload.begin(), payload.end(), 0u);
    std::vector<std::pair<uint64_t, uint32_t>> expect;
    for (size_t n = 0; n < keys.size(); ++n) expect.emplace_back(keys[n], uint32_t(n));
    std::stable_sort(expect.begin(), expect.end(), [](auto& a, auto& b) { return a.first < b.first; });
    radix_sort(keys, &payload, bits);
    for (size_t n = 0; n < keys.size(); ++n) {
      REQUIRE(keys[n] == expect[n].first);
      REQUIRE(payload[n] == expect[n].second);
    }
  }
}

TEST_CASE("run_length_encode groups equal values") {
  const std::vector<uint64_t> v{1, 1, 1, 4, 9, 9};
  const auto runs = run_length_encode(v);
  REQUIRE(runs.size() == 3);
  CHECK(runs[0] == std::pair<uint64_t, uint64_t>{1, 3});
  CHECK(runs[1] == std::pair<uint64_t, uint64_t>{4, 1});
  CHECK(runs[2] == std::pair<uint64_t, uint64_t>{9, 2});
  CHECK(run_length_encode(std::vector<uint64_t>{}).empty());
}
