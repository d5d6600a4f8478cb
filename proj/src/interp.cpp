#include "fvdb/interp.hpp"

#include <cmath>
#include <string>

#include "fvdb/parallel.hpp"

namespace fvdb {
namespace {

constexpr size_t kPointGrain = 2048;

struct Axis {
  int32_t base = 0;
  int count = 0;
  std::array<double, 3> w{}, dw{};
};

bool axis_weights(double x, InterpMode mode, Axis& a) {
  if (!std::isfinite(x) || std::abs(x) > double(kCoordLimit) - 2) return false;
  if (mode == InterpMode::trilinear) {
    const double b = std::floor(x), f = x - b;
    a.base = int32_t(b);
    a.count = 2;
    a.w = {1.0 - f, f, 0.0};
    a.dw = {-1.0, 1.0, 0.0};
  } else {
    const double n = std::floor(x + 0.5), d = x - n;
    a.base = int32_t(n) - 1;
    a.count = 3;
    a.w = {0.5 * (0.5 - d) * (0.5 - d), 0.75 - d * d, 0.5 * (0.5 + d) * (0.5 + d)};
    a.dw = {-(0.5 - d), -2.0 * d, 0.5 + d};
  }
  return true;
}

template <class T>
void check_features(const GridBatch& batch, const JaggedTensor<T>& features, const char* op) {
  if (features.jdata().rank() != 2 || features.row_size() == 0)
    throw InvalidArgument(std::string(op) + ": features must have shape [B, -1, C] with C >= 1");
  if (features.total_rows() != batch.total_voxels() || features.joffsets() != batch.voxel_joffsets())
    throw InvalidArgument(std::string(op) + ": expected " + std::to_string(batch.total_voxels()) +
                          " feature rows split per grid, got " + std::to_string(features.total_rows()));
}

template <class T>
void check_points(const GridBatch& batch, const JaggedTensor<T>& points, const char* op) {
  if (points.jdata().rank() != 2 || points.row_size() != 3)
    throw InvalidArgument(std::string(op) + ": points must have shape [B, -1, 3]");
  if (points.num_tensors() != batch.size())
    throw InvalidArgument(std::string(op) + ": expected " + std::to_string(batch.size()) +
                          " point sets, got " + std::to_string(points.num_tensors()));
}

Vec3d point_at(const double* p) { return {p[0], p[1], p[2]}; }
Vec3d point_at(const float* p) { return {double(p[0]), double(p[1]), double(p[2])}; }

// Runs fn(batch_element, point_row, stencil, accessor) for every point.
template <class T, class Fn>
void for_each_point(const GridBatch& batch, const JaggedTensor<T>& points, InterpMode mode, Fn&& fn) {
  for (size_t b = 0; b < batch.size(); ++b) {
    const IndexGrid& grid = batch.grid(b);
    const size_t first = points.first_row(b);
    parallel_chunks(points.rows_in(b), kPointGrain, [&](size_t lo, size_t hi, size_t) {
      GridAccessor acc(grid);
      Stencil st;
      for (size_t r = first + lo; r < first + hi; ++r) {
        const Vec3d x = grid.transform().world_to_index(point_at(points.jdata().row(r)));
        if (!interpolation_stencil(x, mode, st)) continue;
        fn(b, r, st, acc);
      }
    });
  }
}

template <class T>
JaggedTensor<T> make_like_points(const JaggedTensor<T>& points, std::vector<size_t> trailing) {
  std::vector<size_t> shape{points.total_rows()};
  shape.insert(shape.end(), trailing.begin(), trailing.end());
  return JaggedTensor<T>::from_parts(Tensor<T>(shape), points.joffsets());
}

}  // namespace

bool interpolation_stencil(const Vec3d& index_pos, InterpMode mode, Stencil& out) {
  Axis ax[3];
  out.size = 0;
  for (int a = 0; a < 3; ++a)
    if (!axis_weights(index_pos[a], mode, ax[a])) return false;
  for (int i = 0; i < ax[0].count; ++i)
    for (int j = 0; j < ax[1].count; ++j)
      for (int k = 0; k < ax[2].count; ++k) {
        const int s = out.size++;
        out.coords[s] = {ax[0].base + i, ax[1].base + j, ax[2].base + k};
        out.weights[s] = ax[0].w[i] * ax[1].w[j] * ax[2].w[k];
        out.gradients[s] = {ax[0].dw[i] * ax[1].w[j] * ax[2].w[k], ax[0].w[i] * ax[1].dw[j] * ax[2].w[k],
                            ax[0].w[i] * ax[1].w[j] * ax[2].dw[k]};
      }
  return true;
}

template <class T>
JaggedTensor<T> sample(const GridBatch& batch, const JaggedTensor<T>& features, const JaggedTensor<T>& points,
                       InterpMode mode) {
  check_features(batch, features, "sample");
  check_points(batch, points, "sample");
  const size_t channels = features.row_size();
  JaggedTensor<T> out = make_like_points(points, {channels});
  T* dst = out.data();
  for_each_point(batch, points, mode, [&](size_t b, size_t r, const Stencil& st, GridAccessor& acc) {
    const size_t base = features.first_row(b);
    T* o = dst + r * channels;
    for (int s = 0; s < st.size; ++s) {
      const uint64_t idx = acc.coord_to_index(st.coords[s]);
      if (!idx) continue;
      const T w = T(st.weights[s]);
      const T* f = features.jdata().row(base + idx - 1);
      for (size_t c = 0; c < channels; ++c) o[c] += w * f[c];
    }
  });
  return out;
}

template <class T>
SampleWithGrad<T> sample_with_grad(const GridBatch& batch, const JaggedTensor<T>& features,
                                   const JaggedTensor<T>& points, InterpMode mode) {
  check_features(batch, features, "sample_with_grad");
  check_points(batch, points, "sample_with_grad");
  const size_t channels = features.row_size();
  SampleWithGrad<T> out{make_like_points(points, {channels}), make_like_points(points, {channels, 3})};
  T* values = out.values.data();
  T* grads = out.gradients.data();
  for_each_point(batch, points, mode, [&](size_t b, size_t r, const Stencil& st, GridAccessor& acc) {
    const size_t base = features.first_row(b);
    const Vec3d& vs = batch.grid(b).transform().voxel_size;
    T* o = values + r * channels;
    T* g = grads + r * channels * 3;
    for (int s = 0; s < st.size; ++s) {
      const uint64_t idx = acc.coord_to_index(st.coords[s]);
      if (!idx) continue;
      const T w = T(st.weights[s]);
      const T gx = T(st.gradients[s][0] / vs[0]), gy = T(st.gradients[s][1] / vs[1]),
              gz = T(st.gradients[s][2] / vs[2]);
      const T* f = features.jdata().row(base + idx - 1);
      for (size_t c = 0; c < channels; ++c) {
        o[c] += w * f[c];
        g[3 * c + 0] += gx * f[c];
        g[3 * c + 1] += gy * f[c];
        g[3 * c + 2] += gz * f[c];
      }
    }
  });
  return out;
}

template <class T>
JaggedTensor<T> splat(const GridBatch& batch, const JaggedTensor<T>& points, const JaggedTensor<T>& point_features,
                      InterpMode mode) {
  check_points(batch, points, "splat");
  if (point_features.jdata().rank() != 2 || point_features.row_size() == 0)
    throw InvalidArgument("splat: point features must have shape [B, -1, C] with C >= 1");
  if (point_features.joffsets() != points.joffsets())
    throw InvalidArgument("splat: expected " + std::to_string(points.total_rows()) +
                          " point feature rows aligned with points, got " +
                          std::to_string(point_features.total_rows()));
  const size_t channels = point_features.row_size();
  const int support = mode == InterpMode::trilinear ? 8 : 27;
  const size_t n_points = points.total_rows();
  const size_t n_voxels = batch.total_voxels();

  // Contribution (point r, slot s) lives at r * support + s; dest 0 = none.
  std::vector<uint64_t> dest(n_points * support, 0);
  std::vector<double> weight(n_points * support, 0.0);
  for_each_point(batch, points, mode, [&](size_t b, size_t r, const Stencil& st, GridAccessor& acc) {
    const uint64_t base = uint64_t(batch.voxel_joffsets()[b][0]);
    for (int s = 0; s < st.size; ++s) {
      const uint64_t idx = acc.coord_to_index(st.coords[s]);
      if (!idx) continue;
      dest[r * support + s] = base + idx;
      weight[r * support + s] = st.weights[s];
    }
  });

  // Bin contributions by destination voxel, keeping (point, slot) order.
  std::vector<uint64_t> start(n_voxels + 2, 0);
  for (uint64_t d : dest)
    if (d) ++start[d + 1];
  for (size_t v = 1; v < start.size(); ++v) start[v] += start[v - 1];
  std::vector<uint64_t> order(start[n_voxels + 1]);
  {
    std::vector<uint64_t> fill(start.begin(), start.end() - 1);
    for (size_t c = 0; c < dest.size(); ++c)
      if (dest[c]) order[fill[dest[c]]++] = c;
  }

  std::vector<size_t> shape{n_voxels, channels};
  JaggedTensor<T> out = JaggedTensor<T>::from_parts(Tensor<T>(shape), batch.voxel_joffsets());
  T* dst = out.data();
  parallel_for(n_voxels, 1024, [&](size_t v) {
    T* o = dst + v * channels;
    for (uint64_t e = start[v + 1]; e < start[v + 2]; ++e) {
      const uint64_t c = order[e];
      const T w = T(weight[c]);
      const T* f = point_features.jdata().row(c / support);
      for (size_t ch = 0; ch < channels; ++ch) o[ch] += w * f[ch];
    }
  });
  return out;
}

template JaggedTensor<float> sample(const GridBatch&, const JaggedTensor<float>&, const JaggedTensor<float>&,
                                    InterpMode);
template JaggedTensor<double> sample(const GridBatch&, const JaggedTensor<double>&, const JaggedTensor<double>&,
                                     InterpMode);
template SampleWithGrad<float> sample_with_grad(const GridBatch&, const JaggedTensor<float>&,
                                                const JaggedTensor<float>&, InterpMode);
template SampleWithGrad<double> sample_with_grad(const GridBatch&, const JaggedTensor<double>&,
                                                 const JaggedTensor<double>&, InterpMode);
template JaggedTensor<float> splat(const GridBatch&, const JaggedTensor<float>&, const JaggedTensor<float>&,
                                   InterpMode);
template JaggedTensor<double> splat(const GridBatch&, const JaggedTensor<double>&, const JaggedTensor<double>&,
                                    InterpMode);

}  // namespace fvdb
