#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fvdb/index_grid.hpp"
#include "fvdb/jagged.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// Stencil offsets are ordered lexicographically in (di, dj, dk), each in
/// {-1, 0, 1}; offset 13 is the centre.
constexpr int stencil_index(int di, int dj, int dk) { return (di + 1) * 9 + (dj + 1) * 3 + (dk + 1); }
constexpr Coord stencil_offset(int n) { return {n / 9 - 1, (n / 3) % 3 - 1, n % 3 - 1}; }
inline constexpr int kStencilSize = 27;
inline constexpr int kCenterOffset = 13;

/// Weights [C_out, C_in, 3, 3, 3].
template <class T>
struct ConvKernel {
  Tensor<T> weights;

  ConvKernel() = default;
  ConvKernel(size_t c_out, size_t c_in) : weights({c_out, c_in, 3, 3, 3}) {}

  size_t c_out() const { return weights.shape()[0]; }
  size_t c_in() const { return weights.shape()[1]; }
  T& at(size_t co, size_t ci, int offset) { return weights.values()[(co * c_in() + ci) * kStencilSize + size_t(offset)]; }
  T at(size_t co, size_t ci, int offset) const {
    return weights.values()[(co * c_in() + ci) * kStencilSize + size_t(offset)];
  }
};

/// Per stencil offset, the (input row, output row) pairs it links, sorted by
/// output row. Rows are 0-based.
struct KernelMap {
  std::array<std::vector<std::pair<uint32_t, uint32_t>>, kStencilSize> pairs;
  int stride = 1;
  uint64_t num_inputs = 0, num_outputs = 0;

  size_t total_pairs() const {
    size_t n = 0;
    for (const auto& p : pairs) n += p.size();
    return n;
  }
};

/// Links every active output o and offset d with the input at
/// stride * coord(o) + d. Stride 1 needs matching transforms; stride 2 needs
/// the output transform to be the 2x coarsening of the input's.
KernelMap build_kernel_map(const IndexGrid& grid_in, const IndexGrid& grid_out, int stride);

enum class ConvVariant { igemm, leaf, brick, lggs };

std::string to_string(ConvVariant v);
std::optional<ConvVariant> parse_conv_variant(const std::string& name);

/// Instrumentation for the blocked variants.
struct ConvCounters {
  uint64_t executed_macs = 0;     // multiply-accumulates actually issued
  uint64_t useful_macs = 0;       // pairs * C_in * C_out
  uint64_t padded_rows = 0;       // LGGS rows added to reach a multiple of 16
  uint64_t max_padded_rows = 0;   // worst (block, offset) padding
  uint64_t blocks = 0;            // leaves, bricks or 64-output blocks processed

  ConvCounters& operator+=(const ConvCounters& o) {
    executed_macs += o.executed_macs;
    useful_macs += o.useful_macs;
    padded_rows += o.padded_rows;
    max_padded_rows = std::max(max_padded_rows, o.max_padded_rows);
    blocks += o.blocks;
    return *this;
  }
};

inline constexpr size_t kLggsBlock = 64;
inline constexpr size_t kLggsPad = 16;

/// out[o] = sum over offsets and linked pairs of W[:, :, offset] * in[i].
/// leaf, brick and lggs support stride 1 only; igemm handles stride 2.
template <class T>
Tensor<T> conv(const IndexGrid& grid_in, const Tensor<T>& features, const ConvKernel<T>& kernel,
               const IndexGrid& grid_out, ConvVariant variant, int stride = 1, ConvCounters* counters = nullptr);

/// igemm or lggs over a prebuilt kernel map (stride taken from the map).
template <class T>
Tensor<T> conv(const KernelMap& kmap, const Tensor<T>& features, const ConvKernel<T>& kernel, ConvVariant variant,
               ConvCounters* counters = nullptr);

/// Applies conv per batch element; features are [B, -1, C_in] over grids_in.
template <class T>
JaggedTensor<T> conv(const GridBatch& grids_in, const JaggedTensor<T>& features, const ConvKernel<T>& kernel,
                     const GridBatch& grids_out, ConvVariant variant, int stride = 1);

template <class T>
struct ConvGrads {
  Tensor<T> grad_in;
  ConvKernel<T> grad_kernel;
};

/// Backward pass of the gather-GEMM-scatter convolution.
template <class T>
ConvGrads<T> conv_backward(const KernelMap& kmap, const Tensor<T>& grad_out, const Tensor<T>& features_in,
                           const ConvKernel<T>& kernel);

/// Mean fraction of the 512 voxels active per leaf.
double mean_leaf_occupancy(const IndexGrid& grid);

/// Advisory strategy choice from leaf occupancy and channel depth.
ConvVariant choose_variant(const IndexGrid& grid, size_t c_in, size_t c_out);

enum class PoolMode { max, avg };

template <class T>
struct Pooled {
  IndexGrid grid;
  Tensor<T> features;
};

/// Coarsens by `factor`; each coarse row reduces its active fine children
/// (avg divides by the active child count).
template <class T>
Pooled<T> pool(const IndexGrid& grid, const Tensor<T>& features, int factor, PoolMode mode);

template <class T>
JaggedTensor<T> pool(const GridBatch& batch, const JaggedTensor<T>& features, int factor, PoolMode mode,
                     std::vector<IndexGrid>* coarse_grids = nullptr);

/// Each fine voxel copies the row of its floor-division parent in `coarse`.
/// Throws naming the first fine voxel without an active parent.
template <class T>
Tensor<T> upsample_nearest(const IndexGrid& coarse, const Tensor<T>& features, int factor, const IndexGrid& fine);

}  // namespace fvdb
