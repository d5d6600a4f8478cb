#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fvdb/build.hpp"
#include "fvdb/parallel.hpp"
#include "fvdb/raymarch.hpp"
#include "fvdb/workloads.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fvdb;

namespace {

// Voxel i covers world [i, i + 1) on every axis.
const VoxelTransform kUnit{{1, 1, 1}, {0.5, 0.5, 0.5}};

IndexGrid dense_leaf() {
  std::vector<Coord> c;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 8; ++k) c.push_back({i, j, k});
  return build_from_coords(c, kUnit).grid;
}

}  // namespace

TEST_CASE("dense leaf: an axis ray hits the eight voxels in order") {
  const IndexGrid g = dense_leaf();
  const std::vector<Ray> rays{{{-1, 0.5, 0.5}, {1, 0, 0}}};
  const VoxelHits h = hdda_voxels(g, rays);
  REQUIRE(h.hits.rows_in(0) == 8);
  for (int n = 0; n < 8; ++n) {
    const VoxelHit& hit = h.hits.data()[n];
    CHECK(hit.coord == Coord{n, 0, 0});
    CHECK(hit.index == g.coord_to_index({n, 0, 0}));
    CHECK(hit.t_enter == double(n + 1));
    CHECK(hit.t_exit == double(n + 2));
  }
  CHECK(h.truncated[0] == 0);
  const auto seg = hdda_segments(g, rays);
  REQUIRE(seg.rows_in(0) == 1);
  CHECK(seg.data()[0] == RaySegment{1, 9});
}

TEST_CASE("rays missing the grid produce no hits") {
  const IndexGrid g = dense_leaf();
  const std::vector<Ray> rays{{{-1, 20, 0.5}, {1, 0, 0}}, {{-1, 0.5, 0.5}, {-1, 0, 0}}, {{0.5, 0.5, 0.5}, {0, 0, 1}, 0, 0.1}};
  const VoxelHits h = hdda_voxels(g, rays);
  CHECK(h.hits.rows_in(0) == 0);
  CHECK(h.hits.rows_in(1) == 0);
  CHECK(h.hits.rows_in(2) == 1);  // starts inside voxel (0,0,0)
  CHECK(hdda_voxels(IndexGrid(), rays).hits.total_rows() == 0);
}

TEST_CASE("a ray on a shared face belongs to the greater voxel") {
  const IndexGrid g = dense_leaf();
  const std::vector<Ray> rays{{{-1, 1, 0.5}, {1, 0, 0}}, {{-1, 8, 0.5}, {1, 0, 0}}, {{-1, 0, 0}, {1, 0, 0}}};
  const VoxelHits h = hdda_voxels(g, rays);
  REQUIRE(h.hits.rows_in(0) == 8);
  CHECK(h.hits.data()[0].coord == Coord{0, 1, 0});
  CHECK(h.hits.rows_in(1) == 0);  // y = 8 lies past the leaf
  CHECK(h.hits.rows_in(2) == 8);
}

TEST_CASE("hdda_voxels equals the brute-force traversal on random grids") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const IndexGrid g = fixtures::random_sparse_grid(seed);
    const std::vector<Ray> rays = fixtures::random_rays(g, 100, seed + 100);
    const VoxelHits h = hdda_voxels(g, rays, 100000);
    for (size_t r = 0; r < rays.size(); ++r) {
      const auto expect = oracle::brute_force_hits(g, rays[r]);
      REQUIRE(h.hits.rows_in(r) == expect.size());
      const VoxelHit* got = h.hits.data() + h.hits.first_row(r);
      for (size_t n = 0; n < expect.size(); ++n) REQUIRE(got[n] == expect[n]);
    }
    CHECK(h.counters.voxel_cells_outside_leaves == 0);
  }
}

TEST_CASE("voxel-level steps stay inside active leaves and never exceed a flat DDA") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const IndexGrid g = fixtures::random_sparse_grid(seed + 50);
    GridAccessor acc(g);
    for (const Ray& ray : fixtures::random_rays(g, 50, seed)) {
      TraversalCounters c;
      hdda_traverse(g, acc, ray, [](const VoxelHit&) { return true; }, &c);
      CHECK(c.voxel_cells_outside_leaves == 0);
      CHECK(c.voxel_cells <= oracle::single_level_steps(g, ray, 8));
    }
  }
}

TEST_CASE("leapfrogging a 4096-voxel gap") {
  std::vector<Coord> c;
  for (int i = 0; i < 8; ++i) c.push_back({i, 3, 3});
  for (int i = 4104; i < 4112; ++i) c.push_back({i, 3, 3});  // gap of 4096 voxels
  const IndexGrid g = build_from_coords(c, kUnit).grid;
  const std::vector<Ray> rays{{{-10, 3.5, 3.5}, {1, 0, 0}}};
  const VoxelHits h = hdda_voxels(g, rays);
  CHECK(h.hits.rows_in(0) == 16);
  CHECK(h.counters.leaf_cells <= 4096 / 8 + 2);
  CHECK(h.counters.voxel_cells == 16);
  CHECK(h.counters.voxel_cells_outside_leaves == 0);
}

TEST_CASE("hit lists are monotone and scale with the direction") {
  const IndexGrid g = fixtures::random_sparse_grid(3);
  std::vector<Ray> rays = fixtures::random_rays(g, 60, 9);
  std::vector<Ray> scaled = rays;
  for (Ray& r : scaled) {
    for (double& d : r.direction) d *= 2.0;
    r.t0 /= 2.0;
    r.t1 /= 2.0;
  }
  const VoxelHits a = hdda_voxels(g, rays), b = hdda_voxels(g, scaled);
  REQUIRE(a.hits.joffsets() == b.hits.joffsets());
  for (size_t r = 0; r < rays.size(); ++r) {
    const VoxelHit* ha = a.hits.data() + a.hits.first_row(r);
    const VoxelHit* hb = b.hits.data() + b.hits.first_row(r);
    for (size_t n = 0; n < a.hits.rows_in(r); ++n) {
      CHECK(ha[n].t_enter < ha[n].t_exit);
      if (n) CHECK(ha[n - 1].t_exit <= ha[n].t_enter);
      CHECK(ha[n].coord == hb[n].coord);
      CHECK(hb[n].t_enter == ha[n].t_enter / 2.0);
    }
  }
}

TEST_CASE("max_hits truncates and flags the ray") {
  const IndexGrid g = dense_leaf();
  const std::vector<Ray> rays{{{-1, 0.5, 0.5}, {1, 0, 0}}, {{-1, 20, 0.5}, {1, 0, 0}}};
  const VoxelHits h = hdda_voxels(g, rays, 3);
  CHECK(h.hits.rows_in(0) == 3);
  CHECK(h.truncated == std::vector<uint8_t>{1, 0});
  CHECK_THROWS_AS(hdda_voxels(g, rays, 0), InvalidArgument);
}

TEST_CASE("invalid rays are rejected") {
  const IndexGrid g = dense_leaf();
  const std::vector<std::vector<Ray>> bad{{{{0, 0, 0}, {0, 0, 0}}},
                                          {{{NAN, 0, 0}, {1, 0, 0}}},
                                          {{{0, 0, 0}, {1, 0, 0}, -1.0, 2.0}},
                                          {{{0, 0, 0}, {1, 0, 0}, 2.0, 1.0}}};
  for (const auto& r : bad) CHECK_THROWS_AS(hdda_voxels(g, r), InvalidArgument);
}

TEST_CASE("segments merge adjacent hits and split at gaps") {
  const std::vector<Coord> c{{0, 0, 0}, {1, 0, 0}, {4, 0, 0}};
  const IndexGrid g = build_from_coords(c, kUnit).grid;
  const std::vector<Ray> rays{{{-1, 0.5, 0.5}, {1, 0, 0}}};
  const auto seg = hdda_segments(g, rays);
  REQUIRE(seg.rows_in(0) == 2);
  CHECK(seg.data()[0] == RaySegment{1, 3});
  CHECK(seg.data()[1] == RaySegment{5, 6});

  for (uint64_t seed = 0; seed < 5; ++seed) {
    const IndexGrid r = fixtures::random_sparse_grid(seed + 7);
    const std::vector<Ray> rs = fixtures::random_rays(r, 50, seed);
    const auto s = hdda_segments(r, rs);
    for (size_t n = 0; n < rs.size(); ++n) {
      std::vector<RaySegment> expect;
      for (const auto& h : oracle::brute_force_hits(r, rs[n])) {
        if (!expect.empty() && expect.back().t_exit == h.t_enter) expect.back().t_exit = h.t_exit;
        else expect.push_back({h.t_enter, h.t_exit});
      }
      REQUIRE(s.rows_in(n) == expect.size());
      for (size_t m = 0; m < expect.size(); ++m) CHECK(s.data()[s.first_row(n) + m] == expect[m]);
    }
  }
}

TEST_CASE("level set of a sphere shell") {
  const SphereShell s = make_sphere_shell(64);
  const double h = 1.0 / 64;
  // Axis ray through the centre: first crossing at centre.x - radius.
  const std::vector<Ray> rays{{{-0.5, 0.5, 0.5}, {1, 0, 0}},
                              {{-0.5, 0.5 + s.radius + 3 * h, 0.5}, {1, 0, 0}}};  // grazes outside the shell
  const auto hits = intersect_levelset(s.grid, s.phi, rays);
  REQUIRE(hits[0].has_value());
  CHECK(std::abs(hits[0]->t - (1.0 - s.radius)) <= 0.5 * h);
  CHECK(hits[0]->position[0] == doctest::Approx(-0.5 + hits[0]->t));
  CHECK_FALSE(hits[1].has_value());

  std::vector<double> positive(s.phi.size(), 1.0);
  CHECK_FALSE(intersect_levelset(s.grid, positive, rays)[0].has_value());
  CHECK_THROWS_AS(intersect_levelset(s.grid, std::vector<double>(3, 1.0), rays), InvalidArgument);
}

TEST_CASE("volume rendering: zero, opaque and constant density") {
  std::vector<Coord> c;
  for (int i = 0; i < 40; ++i) c.push_back({i, 0, 0});
  const IndexGrid g = build_from_coords(c, kUnit).grid;
  const std::vector<Ray> rays{{{-2, 0.5, 0.5}, {1, 0, 0}}};
  Tensor<double> color = Tensor<double>::rows(40, 3);
  for (size_t n = 0; n < 40; ++n) color(n, 0) = 0.2, color(n, 1) = 0.5, color(n, 2) = 0.9;

  const auto zero = volume_render(g, std::vector<double>(40, 0.0), color, rays, 0.5);
  CHECK(zero[0].transmittance == 1.0);
  CHECK(zero[0].rgb == Vec3d{0, 0, 0});

  const auto opaque = volume_render(g, std::vector<double>(40, 1e6), color, rays, 0.5);
  CHECK(opaque[0].transmittance < 1e-12);
  CHECK(opaque[0].rgb[0] == doctest::Approx(0.2));
  CHECK(opaque[0].rgb[2] == doctest::Approx(0.9));
  CHECK(opaque[0].depth == doctest::Approx(2.25));  // first sample midpoint

  const double sigma = 0.05, length = 40;
  const auto thin = volume_render(g, std::vector<double>(40, sigma), color, rays, length / 100);
  CHECK(std::abs(thin[0].transmittance - std::exp(-sigma * length)) < 1e-3);
  CHECK(thin[0].rgb[1] == doctest::Approx(0.5 * (1 - thin[0].transmittance)));

  CHECK_THROWS_AS(volume_render(g, std::vector<double>(40, 0.0), color, rays, 0.0), InvalidArgument);
  CHECK_THROWS_AS(volume_render(g, std::vector<double>(3, 0.0), color, rays, 1.0), InvalidArgument);
}

TEST_CASE("raymarch results do not depend on the thread count") {
  const IndexGrid g = fixtures::random_sparse_grid(4);
  const std::vector<Ray> rays = fixtures::random_rays(g, 300, 1);
  const size_t saved = thread_count();
  set_thread_count(1);
  const VoxelHits ref = hdda_voxels(g, rays);
  set_thread_count(4);
  const VoxelHits other = hdda_voxels(g, rays);
  set_thread_count(saved);
  CHECK(ref.hits == other.hits);
  CHECK(ref.counters.voxel_cells == other.counters.voxel_cells);
}
