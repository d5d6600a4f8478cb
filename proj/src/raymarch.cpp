#include "fvdb/raymarch.hpp"

#include <cmath>
#include <string>

#include "fvdb/interp.hpp"
#include "fvdb/parallel.hpp"

namespace fvdb {
namespace {

constexpr size_t kRayGrain = 16;

void check_rays(std::span<const Ray> rays, const char* op) {
  for (size_t r = 0; r < rays.size(); ++r)
    if (!rays[r].valid()) throw InvalidArgument(std::string(op) + ": ray " + std::to_string(r) + " is invalid");
}

template <class T>
JaggedTensor<T> assemble(std::vector<std::vector<T>>& per_ray) {
  size_t total = 0;
  std::vector<int64_t> counts(per_ray.size());
  for (size_t r = 0; r < per_ray.size(); ++r) {
    counts[r] = int64_t(per_ray[r].size());
    total += per_ray[r].size();
  }
  std::vector<T> data;
  data.reserve(total);
  for (auto& v : per_ray) data.insert(data.end(), v.begin(), v.end());
  if (per_ray.empty()) counts.push_back(0);
  return JaggedTensor<T>::from_counts(Tensor<T>({total}, std::move(data)), counts);
}

double norm(const Vec3d& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3d point_on(const Ray& ray, double t) {
  return {ray.origin[0] + t * ray.direction[0], ray.origin[1] + t * ray.direction[1],
          ray.origin[2] + t * ray.direction[2]};
}

double sample_phi(GridAccessor& acc, const VoxelTransform& xf, std::span<const double> phi, const Vec3d& p) {
  Stencil st;
  if (!interpolation_stencil(xf.world_to_index(p), InterpMode::trilinear, st)) return 0.0;
  double v = 0.0;
  for (int s = 0; s < st.size; ++s)
    if (const uint64_t idx = acc.coord_to_index(st.coords[s])) v += st.weights[s] * phi[idx - 1];
  return v;
}

}  // namespace

bool Ray::valid() const {
  bool nonzero = false;
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(origin[a]) || !std::isfinite(direction[a])) return false;
    nonzero = nonzero || direction[a] != 0.0;
  }
  return nonzero && t0 >= 0.0 && t0 < t1 && !std::isnan(t1);
}

IndexRay to_index_ray(const VoxelTransform& xf, const Ray& ray) {
  IndexRay r{};
  for (int a = 0; a < 3; ++a) {
    r.origin[a] = (ray.origin[a] - xf.origin[a]) / xf.voxel_size[a] + 0.5;
    r.direction[a] = ray.direction[a] / xf.voxel_size[a];
  }
  r.t0 = ray.t0;
  r.t1 = ray.t1;
  return r;
}

VoxelHits hdda_voxels(const IndexGrid& grid, std::span<const Ray> rays, size_t max_hits) {
  check_rays(rays, "hdda_voxels");
  if (max_hits == 0) throw InvalidArgument("hdda_voxels: max_hits must be positive");
  std::vector<std::vector<VoxelHit>> per_ray(rays.size());
  VoxelHits out;
  out.truncated.assign(rays.size(), 0);
  std::vector<TraversalCounters> chunk_counters(chunk_count(rays.size(), kRayGrain));
  parallel_chunks(rays.size(), kRayGrain, [&](size_t b, size_t e, size_t c) {
    GridAccessor acc(grid);
    for (size_t r = b; r < e; ++r) {
      auto& hits = per_ray[r];
      hdda_traverse(
          grid, acc, rays[r],
          [&](const VoxelHit& h) {
            if (hits.size() == max_hits) {
              out.truncated[r] = 1;
              return false;
            }
            hits.push_back(h);
            return true;
          },
          &chunk_counters[c]);
    }
  });
  for (const auto& c : chunk_counters) out.counters += c;
  out.hits = assemble(per_ray);
  return out;
}

VoxelHits hdda_voxels(const IndexGrid& grid, const JaggedTensor<Ray>& rays, size_t max_hits) {
  return hdda_voxels(grid, std::span<const Ray>(rays.data(), rays.total_rows()), max_hits);
}

JaggedTensor<RaySegment> hdda_segments(const IndexGrid& grid, std::span<const Ray> rays) {
  check_rays(rays, "hdda_segments");
  std::vector<std::vector<RaySegment>> per_ray(rays.size());
  parallel_chunks(rays.size(), kRayGrain, [&](size_t b, size_t e, size_t) {
    GridAccessor acc(grid);
    for (size_t r = b; r < e; ++r) {
      auto& segs = per_ray[r];
      hdda_traverse(grid, acc, rays[r], [&](const VoxelHit& h) {
        if (!segs.empty() && segs.back().t_exit == h.t_enter) segs.back().t_exit = h.t_exit;
        else segs.push_back({h.t_enter, h.t_exit});
        return true;
      });
    }
  });
  return assemble(per_ray);
}

JaggedTensor<RaySegment> hdda_segments(const IndexGrid& grid, const JaggedTensor<Ray>& rays) {
  return hdda_segments(grid, std::span<const Ray>(rays.data(), rays.total_rows()));
}

std::vector<std::optional<LevelSetHit>> intersect_levelset(const IndexGrid& grid, std::span<const double> phi,
                                                           std::span<const Ray> rays) {
  check_rays(rays, "intersect_levelset");
  if (phi.size() != grid.active_voxel_count())
    throw InvalidArgument("intersect_levelset: expected " + std::to_string(grid.active_voxel_count()) +
                          " phi values, got " + std::to_string(phi.size()));
  const VoxelTransform& xf = grid.transform();
  std::vector<std::optional<LevelSetHit>> out(rays.size());
  parallel_chunks(rays.size(), kRayGrain, [&](size_t b, size_t e, size_t) {
    GridAccessor walk_acc(grid), sample_acc(grid);
    for (size_t r = b; r < e; ++r) {
      const Ray& ray = rays[r];
      auto phi_at = [&](double t) { return sample_phi(sample_acc, xf, phi, point_on(ray, t)); };
      hdda_traverse(grid, walk_acc, ray, [&](const VoxelHit& h) {
        double ta = h.t_enter, tb = h.t_exit;
        double pa = phi_at(ta), pb = phi_at(tb);
        if ((pa > 0) == (pb > 0)) return true;
        for (int it = 0; it < 8; ++it) {
          const double t = ta - pa * (tb - ta) / (pb - pa);
          const double p = phi_at(t);
          if ((p > 0) == (pa > 0)) {
            ta = t;
            pa = p;
          } else {
            tb = t;
            pb = p;
          }
        }
        const double t = pb == pa ? ta : ta - pa * (tb - ta) / (pb - pa);
        out[r] = LevelSetHit{t, point_on(ray, t)};
        return false;
      });
    }
  });
  return out;
}

std::vector<RenderResult> volume_render(const IndexGrid& grid, std::span<const double> density,
                                        const Tensor<double>& color, std::span<const Ray> rays, double step) {
  check_rays(rays, "volume_render");
  if (!(step > 0.0) || !std::isfinite(step)) throw InvalidArgument("volume_render: step must be positive");
  const size_t n = grid.active_voxel_count();
  if (density.size() != n || color.num_rows() != n || color.row_size() != 3)
    throw InvalidArgument("volume_render: expected density [" + std::to_string(n) + "] and color [" +
                          std::to_string(n) + ", 3]");
  const JaggedTensor<RaySegment> segments = hdda_segments(grid, rays);
  const VoxelTransform& xf = grid.transform();
  std::vector<RenderResult> out(rays.size());
  parallel_chunks(rays.size(), kRayGrain, [&](size_t b, size_t e, size_t) {
    GridAccessor acc(grid);
    for (size_t r = b; r < e; ++r) {
      const Ray& ray = rays[r];
      const double speed = norm(ray.direction);
      RenderResult& res = out[r];
      const RaySegment* seg = segments.data() + segments.first_row(r);
      for (size_t s = 0; s < segments.rows_in(r) && res.transmittance > 0.0; ++s) {
        for (double t = seg[s].t_enter; t < seg[s].t_exit; t += step) {
          const double dt = std::min(step, seg[s].t_exit - t);
          const double tm = t + 0.5 * dt;
          const uint64_t idx = acc.coord_to_index(xf.quantize(point_on(ray, tm)));
          if (!idx) continue;
          const double alpha = 1.0 - std::exp(-density[idx - 1] * dt * speed);
          const double w = res.transmittance * alpha;
          for (int c = 0; c < 3; ++c) res.rgb[c] += w * color(idx - 1, size_t(c));
          res.depth += w * tm;
          res.transmittance *= 1.0 - alpha;
        }
      }
    }
  });
  return out;
}

}  // namespace fvdb
