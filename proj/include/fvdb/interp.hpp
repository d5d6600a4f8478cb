#pragma once

#include <array>

#include "fvdb/jagged.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// trilinear: 2^3 support, piecewise linear.
/// bezier: 3^3 support using the quadratic B-spline kernel (C1, weights sum
/// to one), the usual choice for grid transfer operators.
enum class InterpMode { trilinear, bezier };

/// Support voxels, weights and index-space weight gradients at a continuous
/// index position (voxel centres sit on integers).
struct Stencil {
  std::array<Coord, 27> coords;
  std::array<double, 27> weights;
  std::array<Vec3d, 27> gradients;
  int size = 0;
};

/// Returns false (and an empty stencil) for non-finite or out-of-range positions.
bool interpolation_stencil(const Vec3d& index_pos, InterpMode mode, Stencil& out);

/// Interpolates per-voxel features [B, -1, C] at world points [B, -1, 3].
/// Inactive support voxels contribute zero.
template <class T>
JaggedTensor<T> sample(const GridBatch& batch, const JaggedTensor<T>& features, const JaggedTensor<T>& points,
                       InterpMode mode);

template <class T>
struct SampleWithGrad {
  JaggedTensor<T> values;     // [B, -1, C]
  JaggedTensor<T> gradients;  // [B, -1, C, 3], d value / d world position
};

template <class T>
SampleWithGrad<T> sample_with_grad(const GridBatch& batch, const JaggedTensor<T>& features,
                                   const JaggedTensor<T>& points, InterpMode mode);

/// Adjoint of sample with respect to features: every voxel receives the
/// weighted sum of point features. Reduction is ordered by point then
/// stencil slot, so results do not depend on the thread count.
template <class T>
JaggedTensor<T> splat(const GridBatch& batch, const JaggedTensor<T>& points, const JaggedTensor<T>& point_features,
                      InterpMode mode);

}  // namespace fvdb
