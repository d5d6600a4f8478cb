#include "fvdb/conv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fvdb/build.hpp"
#include "fvdb/parallel.hpp"

namespace fvdb {
namespace {

// C[m, :] += A[m, :] * B for A [rows, k] (row stride lda) and B [k, n].
template <class T>
void gemm_accumulate(const T* a, size_t lda, size_t rows, size_t k, const T* b, size_t n, T* c, size_t ldc) {
  for (size_t m = 0; m < rows; ++m) {
    const T* arow = a + m * lda;
    T* crow = c + m * ldc;
    for (size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Per-offset [C_in, C_out] matrices.
template <class T>
std::vector<T> transpose_weights(const ConvKernel<T>& kernel) {
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  std::vector<T> wt(size_t(kStencilSize) * ci * co);
  for (int off = 0; off < kStencilSize; ++off)
    for (size_t i = 0; i < ci; ++i)
      for (size_t o = 0; o < co; ++o) wt[(size_t(off) * ci + i) * co + o] = kernel.at(o, i, off);
  return wt;
}

template <class T>
void check_kernel(const ConvKernel<T>& kernel, size_t c_in, const char* op) {
  if (kernel.weights.rank() != 5 || kernel.weights.shape()[2] != 3 || kernel.weights.shape()[3] != 3 ||
      kernel.weights.shape()[4] != 3)
    throw InvalidArgument(std::string(op) + ": kernel must have shape [C_out, C_in, 3, 3, 3]");
  if (kernel.c_in() != c_in)
    throw InvalidArgument(std::string(op) + ": kernel expects " + std::to_string(kernel.c_in()) +
                          " input channels, features have " + std::to_string(c_in));
  for (T w : kernel.weights.values())
    if (!std::isfinite(double(w))) throw InvalidArgument(std::string(op) + ": kernel weights must be finite");
}

template <class T>
void check_rows(const Tensor<T>& features, uint64_t rows, const char* op) {
  if (features.rank() != 2 || features.num_rows() != rows)
    throw InvalidArgument(std::string(op) + ": expected features [" + std::to_string(rows) + ", C], got " +
                          std::to_string(features.num_rows()) + " rows");
}

template <class T>
Tensor<T> conv_igemm(const KernelMap& kmap, const Tensor<T>& features, const ConvKernel<T>& kernel,
                     ConvCounters& counters) {
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  const std::vector<T> wt = transpose_weights(kernel);
  Tensor<T> out = Tensor<T>::rows(kmap.num_outputs, co);
  constexpr size_t kChunk = 1024;
  for (int off = 0; off < kStencilSize; ++off) {
    const auto& pairs = kmap.pairs[size_t(off)];
    const T* w = wt.data() + size_t(off) * ci * co;
    // Outputs are unique within one offset, so chunks scatter disjointly.
    parallel_for((pairs.size() + kChunk - 1) / kChunk, 1, [&](size_t chunk) {
      const size_t begin = chunk * kChunk, end = std::min(pairs.size(), begin + kChunk);
      const size_t rows = end - begin;
      std::vector<T> gathered(rows * ci), product(rows * co, T(0));
      for (size_t r = 0; r < rows; ++r)
        std::copy_n(features.row(pairs[begin + r].first), ci, gathered.data() + r * ci);
      gemm_accumulate(gathered.data(), ci, rows, ci, w, co, product.data(), co);
      for (size_t r = 0; r < rows; ++r) {
        T* dst = out.row(pairs[begin + r].second);
        const T* src = product.data() + r * co;
        for (size_t j = 0; j < co; ++j) dst[j] += src[j];
      }
    });
    counters.executed_macs += pairs.size() * ci * co;
  }
  counters.useful_macs += kmap.total_pairs() * ci * co;
  counters.blocks += kStencilSize;
  return out;
}

template <class T>
Tensor<T> conv_lggs(const KernelMap& kmap, const Tensor<T>& features, const ConvKernel<T>& kernel,
                    ConvCounters& counters) {
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  const std::vector<T> wt = transpose_weights(kernel);
  Tensor<T> out = Tensor<T>::rows(kmap.num_outputs, co);
  const size_t blocks = (kmap.num_outputs + kLggsBlock - 1) / kLggsBlock;
  std::vector<ConvCounters> chunk_counters(chunk_count(blocks, 4));
  parallel_chunks(blocks, 4, [&](size_t b0, size_t b1, size_t chunk) {
    ConvCounters& cnt = chunk_counters[chunk];
    std::vector<T> accum(kLggsBlock * co), gathered, product;
    // Per offset, the first pair not yet consumed; blocks advance in order.
    std::array<size_t, kStencilSize> cursor{};
    for (int off = 0; off < kStencilSize; ++off) {
      const auto& pairs = kmap.pairs[size_t(off)];
      cursor[size_t(off)] = size_t(std::lower_bound(pairs.begin(), pairs.end(), uint32_t(b0 * kLggsBlock),
                                                    [](const auto& p, uint32_t o) { return p.second < o; }) -
                                   pairs.begin());
    }
    for (size_t blk = b0; blk < b1; ++blk) {
      const uint32_t first = uint32_t(blk * kLggsBlock);
      const uint32_t last = uint32_t(std::min<uint64_t>(kmap.num_outputs, first + kLggsBlock));
      std::fill(accum.begin(), accum.end(), T(0));
      for (int off = 0; off < kStencilSize; ++off) {
        const auto& pairs = kmap.pairs[size_t(off)];
        size_t& pos = cursor[size_t(off)];
        const size_t begin = pos;
        while (pos < pairs.size() && pairs[pos].second < last) ++pos;
        const size_t n = pos - begin;
        if (n == 0) continue;
        const size_t padded = (n + kLggsPad - 1) / kLggsPad * kLggsPad;
        gathered.assign(padded * ci, T(0));
        product.assign(padded * co, T(0));
        for (size_t r = 0; r < n; ++r) std::copy_n(features.row(pairs[begin + r].first), ci, gathered.data() + r * ci);
        gemm_accumulate(gathered.data(), ci, padded, ci, wt.data() + size_t(off) * ci * co, co, product.data(), co);
        for (size_t r = 0; r < n; ++r) {
          T* dst = accum.data() + size_t(pairs[begin + r].second - first) * co;
          const T* src = product.data() + r * co;
          for (size_t j = 0; j < co; ++j) dst[j] += src[j];
        }
        cnt.executed_macs += padded * ci * co;
        cnt.useful_macs += n * ci * co;
        cnt.padded_rows += padded - n;
        cnt.max_padded_rows = std::max<uint64_t>(cnt.max_padded_rows, padded - n);
      }
      std::copy_n(accum.data(), size_t(last - first) * co, out.row(first));
      ++cnt.blocks;
    }
  });
  for (const auto& c : chunk_counters) counters += c;
  return out;
}

// Fills a dense window [dims] with input rows; window voxel (a, b, c) holds
// the input at `origin` + (a, b, c). Missing voxels stay zero.
template <class T>
void densify(GridAccessor& acc, const Tensor<T>& features, const Coord& origin, const std::array<int, 3>& dims,
             T* window) {
  const size_t ci = features.row_size();
  std::fill(window, window + size_t(dims[0]) * dims[1] * dims[2] * ci, T(0));
  for (int a = 0; a < dims[0]; ++a)
    for (int b = 0; b < dims[1]; ++b)
      for (int c = 0; c < dims[2]; ++c) {
        const uint64_t idx = acc.coord_to_index(origin + Coord{a, b, c});
        if (idx) std::copy_n(features.row(idx - 1), ci, window + ((size_t(a) * dims[1] + b) * dims[2] + c) * ci);
      }
}

// Dense 3^3 convolution of a window (halo 1 on every side) into an output
// block of `out_dims`, one contiguous k-run at a time. Runs whose
// `run_active` entry is zero are skipped and left at zero. Returns the
// number of runs computed.
template <class T>
size_t dense_block(const T* window, const std::array<int, 3>& win_dims, const std::array<int, 3>& out_dims,
                   const uint8_t* run_active, const std::vector<T>& wt, size_t ci, size_t co, T* out) {
  std::fill(out, out + size_t(out_dims[0]) * out_dims[1] * out_dims[2] * co, T(0));
  size_t runs = 0;
  for (int a = 0; a < out_dims[0]; ++a)
    for (int b = 0; b < out_dims[1]; ++b) runs += run_active[a * out_dims[1] + b] != 0;
  for (int off = 0; off < kStencilSize; ++off) {
    const Coord d = stencil_offset(off);
    const T* w = wt.data() + size_t(off) * ci * co;
    for (int a = 0; a < out_dims[0]; ++a)
      for (int b = 0; b < out_dims[1]; ++b) {
        if (!run_active[a * out_dims[1] + b]) continue;
        const size_t src = ((size_t(a + 1 + d.i) * win_dims[1] + size_t(b + 1 + d.j)) * win_dims[2] + size_t(1 + d.k)) * ci;
        const size_t dst = (size_t(a) * out_dims[1] + b) * out_dims[2] * co;
        gemm_accumulate(window + src, ci, size_t(out_dims[2]), ci, w, co, out + dst, co);
      }
  }
  return runs;
}

template <class T>
Tensor<T> conv_leaf(const IndexGrid& grid_in, const Tensor<T>& features, const ConvKernel<T>& kernel,
                    const IndexGrid& grid_out, ConvCounters& counters) {
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  const std::vector<T> wt = transpose_weights(kernel);
  Tensor<T> out = Tensor<T>::rows(grid_out.active_voxel_count(), co);
  const auto leaves = grid_out.leaves();
  constexpr std::array<int, 3> kWin{kLeafDim + 2, kLeafDim + 2, kLeafDim + 2};
  constexpr std::array<int, 3> kOut{kLeafDim, kLeafDim, kLeafDim};
  std::vector<ConvCounters> chunk_counters(chunk_count(leaves.size(), 1));
  parallel_chunks(leaves.size(), 1, [&](size_t l0, size_t l1, size_t chunk) {
    GridAccessor acc(grid_in);
    std::vector<T> window(size_t(kWin[0]) * kWin[1] * kWin[2] * ci), dense(size_t(kLeafVoxels) * co);
    for (size_t l = l0; l < l1; ++l) {
      const LeafTopology& leaf = leaves[l];
      // Byte b of mask word a holds the k-run (a, b).
      std::array<uint8_t, kLeafDim * kLeafDim> runs;
      for (int a = 0; a < kLeafDim; ++a)
        for (int b = 0; b < kLeafDim; ++b) runs[size_t(a * kLeafDim + b)] = uint8_t(leaf.bit_mask[size_t(a)] >> (8 * b));
      densify(acc, features, leaf.origin - Coord{1, 1, 1}, kWin, window.data());
      const size_t computed = dense_block(window.data(), kWin, kOut, runs.data(), wt, ci, co, dense.data());
      // Active voxels of a leaf occupy a contiguous index range.
      T* dst = out.row(leaf.value_offset - 1);
      for (uint32_t m = 0; m < kLeafVoxels; ++m)
        if (leaf.is_active(m)) {
          std::copy_n(dense.data() + size_t(m) * co, co, dst);
          dst += co;
        }
      chunk_counters[chunk].executed_macs += uint64_t(computed) * kLeafDim * kStencilSize * ci * co;
      ++chunk_counters[chunk].blocks;
    }
  });
  for (const auto& c : chunk_counters) counters += c;
  return out;
}

template <class T>
Tensor<T> conv_brick(const IndexGrid& grid_in, const Tensor<T>& features, const ConvKernel<T>& kernel,
                     const IndexGrid& grid_out, ConvCounters& counters) {
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  const std::vector<T> wt = transpose_weights(kernel);
  Tensor<T> out = Tensor<T>::rows(grid_out.active_voxel_count(), co);
  constexpr std::array<int, 3> kBrick{4, 2, 2};
  constexpr std::array<int, 3> kWin{kBrick[0] + 2, kBrick[1] + 2, kBrick[2] + 2};
  constexpr int kBrickVoxels = kBrick[0] * kBrick[1] * kBrick[2];
  const auto leaves = grid_out.leaves();
  std::vector<ConvCounters> chunk_counters(chunk_count(leaves.size(), 1));
  parallel_chunks(leaves.size(), 1, [&](size_t l0, size_t l1, size_t chunk) {
    GridAccessor acc(grid_in);
    std::vector<T> window(size_t(kWin[0]) * kWin[1] * kWin[2] * ci), dense(size_t(kBrickVoxels) * co);
    for (size_t l = l0; l < l1; ++l) {
      const LeafTopology& leaf = leaves[l];
      for (int bi = 0; bi < kLeafDim; bi += kBrick[0])
        for (int bj = 0; bj < kLeafDim; bj += kBrick[1])
          for (int bk = 0; bk < kLeafDim; bk += kBrick[2]) {
            std::array<uint8_t, kBrick[0] * kBrick[1]> runs{};
            bool any = false;
            for (int a = 0; a < kBrick[0]; ++a)
              for (int b = 0; b < kBrick[1]; ++b)
                for (int c = 0; c < kBrick[2]; ++c)
                  if (leaf.is_active(leaf_offset({bi + a, bj + b, bk + c}))) runs[size_t(a * kBrick[1] + b)] = any = true;
            if (!any) continue;
            const Coord origin = leaf.origin + Coord{bi, bj, bk};
            densify(acc, features, origin - Coord{1, 1, 1}, kWin, window.data());
            const size_t computed = dense_block(window.data(), kWin, kBrick, runs.data(), wt, ci, co, dense.data());
            for (int a = 0; a < kBrick[0]; ++a)
              for (int b = 0; b < kBrick[1]; ++b)
                for (int c = 0; c < kBrick[2]; ++c) {
                  const uint64_t idx = leaf.index_of(leaf_offset({bi + a, bj + b, bk + c}));
                  if (idx)
                    std::copy_n(dense.data() + (size_t(a * kBrick[1] + b) * kBrick[2] + size_t(c)) * co, co,
                                out.row(idx - 1));
                }
            chunk_counters[chunk].executed_macs += uint64_t(computed) * kBrick[2] * kStencilSize * ci * co;
            ++chunk_counters[chunk].blocks;
          }
    }
  });
  for (const auto& c : chunk_counters) counters += c;
  return out;
}

}  // namespace

std::string to_string(ConvVariant v) {
  switch (v) {
    case ConvVariant::igemm: return "igemm";
    case ConvVariant::leaf: return "leaf";
    case ConvVariant::brick: return "brick";
    case ConvVariant::lggs: return "lggs";
  }
  return "unknown";
}

std::optional<ConvVariant> parse_conv_variant(const std::string& name) {
  for (ConvVariant v : {ConvVariant::igemm, ConvVariant::leaf, ConvVariant::brick, ConvVariant::lggs})
    if (to_string(v) == name) return v;
  return std::nullopt;
}

KernelMap build_kernel_map(const IndexGrid& grid_in, const IndexGrid& grid_out, int stride) {
  if (stride != 1 && stride != 2) throw InvalidArgument("build_kernel_map: stride must be 1 or 2");
  const VoxelTransform expected =
      stride == 1 ? grid_in.transform() : coarsened_transform(grid_in.transform(), stride);
  if (!(grid_out.transform() == expected))
    throw InvalidArgument("build_kernel_map: output grid transform is inconsistent with the input grid at stride " +
                          std::to_string(stride));
  KernelMap kmap;
  kmap.stride = stride;
  kmap.num_inputs = grid_in.active_voxel_count();
  kmap.num_outputs = grid_out.active_voxel_count();
  if (kmap.num_inputs >= UINT32_MAX || kmap.num_outputs >= UINT32_MAX)
    throw InvalidArgument("build_kernel_map: grids larger than 2^32 voxels are not supported");

  const std::vector<Coord> out_coords = grid_out.active_coords();
  const size_t chunks = chunk_count(out_coords.size(), 4096);
  std::vector<std::array<std::vector<std::pair<uint32_t, uint32_t>>, kStencilSize>> partial(chunks);
  parallel_chunks(out_coords.size(), 4096, [&](size_t b, size_t e, size_t c) {
    GridAccessor acc(grid_in);
    auto& lists = partial[c];
    for (size_t o = b; o < e; ++o) {
      const Coord base{out_coords[o].i * stride, out_coords[o].j * stride, out_coords[o].k * stride};
      for (int off = 0; off < kStencilSize; ++off)
        if (const uint64_t idx = acc.coord_to_index(base + stencil_offset(off)))
          lists[size_t(off)].emplace_back(uint32_t(idx - 1), uint32_t(o));
    }
  });
  for (int off = 0; off < kStencilSize; ++off) {
    auto& dst = kmap.pairs[size_t(off)];
    for (const auto& p : partial) dst.insert(dst.end(), p[size_t(off)].begin(), p[size_t(off)].end());
  }
  return kmap;
}

template <class T>
Tensor<T> conv(const KernelMap& kmap, const Tensor<T>& features, const ConvKernel<T>& kernel, ConvVariant variant,
               ConvCounters* counters) {
  check_rows(features, kmap.num_inputs, "conv");
  check_kernel(kernel, features.row_size(), "conv");
  ConvCounters local;
  ConvCounters& cnt = counters ? *counters : local;
  switch (variant) {
    case ConvVariant::igemm: return conv_igemm(kmap, features, kernel, cnt);
    case ConvVariant::lggs:
      if (kmap.stride != 1) throw InvalidArgument("conv: lggs supports stride 1 only");
      return conv_lggs(kmap, features, kernel, cnt);
    default: throw InvalidArgument("conv: " + to_string(variant) + " does not run from a kernel map");
  }
}

template <class T>
Tensor<T> conv(const IndexGrid& grid_in, const Tensor<T>& features, const ConvKernel<T>& kernel,
               const IndexGrid& grid_out, ConvVariant variant, int stride, ConvCounters* counters) {
  if (stride != 1 && stride != 2) throw InvalidArgument("conv: stride must be 1 or 2");
  if (stride != 1 && variant != ConvVariant::igemm)
    throw InvalidArgument("conv: " + to_string(variant) + " supports stride 1 only");
  check_rows(features, grid_in.active_voxel_count(), "conv");
  check_kernel(kernel, features.row_size(), "conv");
  ConvCounters local;
  ConvCounters& cnt = counters ? *counters : local;
  switch (variant) {
    case ConvVariant::leaf:
    case ConvVariant::brick: {
      if (!(grid_out.transform() == grid_in.transform()))
        throw InvalidArgument("conv: output grid transform is inconsistent with the input grid");
      Tensor<T> out = variant == ConvVariant::leaf ? conv_leaf(grid_in, features, kernel, grid_out, cnt)
                                                   : conv_brick(grid_in, features, kernel, grid_out, cnt);
      // Useful work is defined by the kernel map; count it without building one.
      uint64_t pairs = 0;
      GridAccessor acc(grid_in);
      for (const Coord& c : grid_out.active_coords())
        for (int off = 0; off < kStencilSize; ++off) pairs += acc.coord_to_index(c + stencil_offset(off)) ? 1 : 0;
      cnt.useful_macs += pairs * kernel.c_in() * kernel.c_out();
      return out;
    }
    default: return conv(build_kernel_map(grid_in, grid_out, stride), features, kernel, variant, &cnt);
  }
}

template <class T>
JaggedTensor<T> conv(const GridBatch& grids_in, const JaggedTensor<T>& features, const ConvKernel<T>& kernel,
                     const GridBatch& grids_out, ConvVariant variant, int stride) {
  if (grids_in.size() != grids_out.size()) throw InvalidArgument("conv: input and output batches differ in size");
  if (features.joffsets() != grids_in.voxel_joffsets())
    throw InvalidArgument("conv: features are not split per input grid");
  std::vector<Tensor<T>> parts;
  const auto inputs = features.unbind();
  for (size_t b = 0; b < grids_in.size(); ++b)
    parts.push_back(conv(grids_in.grid(b), inputs[b], kernel, grids_out.grid(b), variant, stride));
  return JaggedTensor<T>::from_list(parts);
}

template <class T>
ConvGrads<T> conv_backward(const KernelMap& kmap, const Tensor<T>& grad_out, const Tensor<T>& features_in,
                           const ConvKernel<T>& kernel) {
  check_rows(features_in, kmap.num_inputs, "conv_backward");
  check_kernel(kernel, features_in.row_size(), "conv_backward");
  check_rows(grad_out, kmap.num_outputs, "conv_backward");
  if (grad_out.row_size() != kernel.c_out())
    throw InvalidArgument("conv_backward: grad_out has " + std::to_string(grad_out.row_size()) +
                          " channels, kernel produces " + std::to_string(kernel.c_out()));
  const size_t ci = kernel.c_in(), co = kernel.c_out();
  ConvGrads<T> g{Tensor<T>::rows(kmap.num_inputs, ci), ConvKernel<T>(co, ci)};

  // grad_in: transposed pair lists with the channel-transposed kernel.
  for (int off = 0; off < kStencilSize; ++off) {
    const auto& pairs = kmap.pairs[size_t(off)];
    parallel_for(pairs.size(), 1024, [&](size_t p) {
      const T* go = grad_out.row(pairs[p].second);
      T* gi = g.grad_in.row(pairs[p].first);
      for (size_t o = 0; o < co; ++o) {
        const T v = go[o];
        for (size_t i = 0; i < ci; ++i) gi[i] += kernel.at(o, i, off) * v;
      }
    });
  }
  // grad_kernel: sum of outer products per offset.
  parallel_for(kStencilSize, 1, [&](size_t off) {
    for (const auto& [in, outr] : kmap.pairs[off]) {
      const T* go = grad_out.row(outr);
      const T* x = features_in.row(in);
      for (size_t o = 0; o < co; ++o)
        for (size_t i = 0; i < ci; ++i) g.grad_kernel.at(o, i, int(off)) += go[o] * x[i];
    }
  });
  return g;
}

double mean_leaf_occupancy(const IndexGrid& grid) {
  if (grid.leaves().empty()) return 0.0;
  return double(grid.active_voxel_count()) / (double(grid.leaves().size()) * kLeafVoxels);
}

ConvVariant choose_variant(const IndexGrid& grid, size_t c_in, size_t c_out) {
  const double occupancy = mean_leaf_occupancy(grid);
  const size_t depth = std::max(c_in, c_out);
  if (occupancy >= 0.2 && depth <= 16) return ConvVariant::leaf;
  if (occupancy > 0.4 && depth >= 32) return ConvVariant::brick;
  if (occupancy < 0.2 && depth >= 64) return ConvVariant::lggs;
  return ConvVariant::igemm;
}

template <class T>
Pooled<T> pool(const IndexGrid& grid, const Tensor<T>& features, int factor, PoolMode mode) {
  if (factor < 1) throw InvalidArgument("pool: factor must be >= 1");
  check_rows(features, grid.active_voxel_count(), "pool");
  Pooled<T> out{coarsen(grid, factor), {}};
  const size_t channels = features.row_size();
  const size_t n_coarse = out.grid.active_voxel_count();

  // Fine rows grouped by coarse parent, in fine index order.
  const std::vector<Coord> fine = grid.active_coords();
  std::vector<uint64_t> parent(fine.size());
  parallel_chunks(fine.size(), 4096, [&](size_t b, size_t e, size_t) {
    GridAccessor acc(out.grid);
    for (size_t f = b; f < e; ++f)
      parent[f] = acc.coord_to_index(
                      {floor_div(fine[f].i, factor), floor_div(fine[f].j, factor), floor_div(fine[f].k, factor)}) -
                  1;
  });
  std::vector<uint64_t> start(n_coarse + 1, 0), order(fine.size());
  for (uint64_t p : parent) ++start[p + 1];
  for (size_t c = 0; c < n_coarse; ++c) start[c + 1] += start[c];
  {
    std::vector<uint64_t> fill(start.begin(), start.end() - 1);
    for (size_t f = 0; f < fine.size(); ++f) order[fill[parent[f]]++] = f;
  }

  out.features = Tensor<T>::rows(n_coarse, channels);
  parallel_for(n_coarse, 1024, [&](size_t c) {
    T* dst = out.features.row(c);
    const uint64_t b = start[c], e = start[c + 1];
    if (mode == PoolMode::max) {
      std::fill(dst, dst + channels, -std::numeric_limits<T>::infinity());
      for (uint64_t n = b; n < e; ++n) {
        const T* src = features.row(order[n]);
        for (size_t ch = 0; ch < channels; ++ch) dst[ch] = std::max(dst[ch], src[ch]);
      }
    } else {
      for (uint64_t n = b; n < e; ++n) {
        const T* src = features.row(order[n]);
        for (size_t ch = 0; ch < channels; ++ch) dst[ch] += src[ch];
      }
      const T inv = T(1) / T(e - b);
      for (size_t ch = 0; ch < channels; ++ch) dst[ch] *= inv;
    }
  });
  return out;
}

template <class T>
JaggedTensor<T> pool(const GridBatch& batch, const JaggedTensor<T>& features, int factor, PoolMode mode,
                     std::vector<IndexGrid>* coarse_grids) {
  if (features.joffsets() != batch.voxel_joffsets()) throw InvalidArgument("pool: features are not split per grid");
  std::vector<Tensor<T>> parts;
  const auto inputs = features.unbind();
  for (size_t b = 0; b < batch.size(); ++b) {
    Pooled<T> p = pool(batch.grid(b), inputs[b], factor, mode);
    parts.push_back(std::move(p.features));
    if (coarse_grids) coarse_grids->push_back(std::move(p.grid));
  }
  return JaggedTensor<T>::from_list(parts);
}

template <class T>
Tensor<T> upsample_nearest(const IndexGrid& coarse, const Tensor<T>& features, int factor, const IndexGrid& fine) {
  if (factor < 1) throw InvalidArgument("upsample_nearest: factor must be >= 1");
  check_rows(features, coarse.active_voxel_count(), "upsample_nearest");
  const size_t channels = features.row_size();
  const std::vector<Coord> coords = fine.active_coords();
  Tensor<T> out = Tensor<T>::rows(coords.size(), channels);
  std::vector<size_t> orphan(chunk_count(coords.size(), 4096), coords.size());
  parallel_chunks(coords.size(), 4096, [&](size_t b, size_t e, size_t chunk) {
    GridAccessor acc(coarse);
    for (size_t f = b; f < e; ++f) {
      const Coord& c = coords[f];
      const uint64_t idx = acc.coord_to_index({floor_div(c.i, factor), floor_div(c.j, factor), floor_div(c.k, factor)});
      if (!idx) {
        orphan[chunk] = std::min(orphan[chunk], f);
        continue;
      }
      std::copy_n(features.row(idx - 1), channels, out.row(f));
    }
  });
  const size_t first = orphan.empty() ? coords.size() : *std::min_element(orphan.begin(), orphan.end());
  if (first != coords.size())
    throw InvalidArgument("upsample_nearest: fine voxel " + to_string(coords[first]) +
                          " has no active parent in the coarse grid");
  return out;
}

#define FVDB_INSTANTIATE_CONV(T)                                                                                  \
  template Tensor<T> conv(const IndexGrid&, const Tensor<T>&, const ConvKernel<T>&, const IndexGrid&, ConvVariant, \
                          int, ConvCounters*);                                                                    \
  template Tensor<T> conv(const KernelMap&, const Tensor<T>&, const ConvKernel<T>&, ConvVariant, ConvCounters*);  \
  template JaggedTensor<T> conv(const GridBatch&, const JaggedTensor<T>&, const ConvKernel<T>&, const GridBatch&, \
                                ConvVariant, int);                                                                \
  template ConvGrads<T> conv_backward(const KernelMap&, const Tensor<T>&, const Tensor<T>&, const ConvKernel<T>&); \
  template Pooled<T> pool(const IndexGrid&, const Tensor<T>&, int, PoolMode);                                     \
  template JaggedTensor<T> pool(const GridBatch&, const JaggedTensor<T>&, int, PoolMode, std::vector<IndexGrid>*); \
  template Tensor<T> upsample_nearest(const IndexGrid&, const Tensor<T>&, int, const IndexGrid&);

FVDB_INSTANTIATE_CONV(float)
FVDB_INSTANTIATE_CONV(double)

}  // namespace fvdb
