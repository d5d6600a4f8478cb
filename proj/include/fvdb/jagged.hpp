#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fvdb/index_grid.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// Per-element [start, end) row ranges.
using JOffsets = std::vector<std::array<int64_t, 2>>;

/// A batch of arrays with a variable first dimension, stored as their row
/// concatenation (jdata) plus per-element row ranges (joffsets) and a batch
/// id for every row (jidx). Shapes are written [B, -1, C] in docs, where -1
/// marks the jagged dimension.
template <class T>
class JaggedTensor {
 public:
  JaggedTensor() = default;

  /// Concatenates `tensors` along their first axis. Every element must have
  /// the same trailing shape; zero-row elements are allowed.
  static JaggedTensor from_list(std::span<const Tensor<T>> tensors) {
    if (tensors.empty()) throw InvalidArgument("jagged_from_list: need at least one tensor");
    const auto trailing = tensors[0].trailing_shape();
    if (tensors[0].rank() == 0) throw InvalidArgument("jagged_from_list: element 0 has rank 0");
    size_t rows = 0;
    for (size_t b = 0; b < tensors.size(); ++b) {
      if (tensors[b].rank() == 0 || tensors[b].trailing_shape() != trailing)
        throw InvalidArgument("jagged_from_list: element " + std::to_string(b) +
                              " has a trailing shape different from element 0");
      rows += tensors[b].num_rows();
    }
    std::vector<size_t> shape{rows};
    shape.insert(shape.end(), trailing.begin(), trailing.end());
    JaggedTensor out;
    out.jdata_ = Tensor<T>(shape);
    out.joffsets_.reserve(tensors.size());
    out.jidx_.reserve(rows);
    size_t row = 0, pos = 0;
    for (size_t b = 0; b < tensors.size(); ++b) {
      const auto& t = tensors[b];
      std::copy(t.values().begin(), t.values().end(), out.jdata_.values().begin() + std::ptrdiff_t(pos));
      pos += t.size();
      out.joffsets_.push_back({int64_t(row), int64_t(row + t.num_rows())});
      out.jidx_.insert(out.jidx_.end(), t.num_rows(), int32_t(b));
      row += t.num_rows();
    }
    return out;
  }

  /// Wraps already-concatenated rows given per-element row counts.
  static JaggedTensor from_counts(Tensor<T> jdata, std::span<const int64_t> counts) {
    JOffsets offsets;
    int64_t row = 0;
    for (int64_t c : counts) {
      if (c < 0) throw InvalidArgument("JaggedTensor: negative element row count");
      offsets.push_back({row, row + c});
      row += c;
    }
    return from_parts(std::move(jdata), std::move(offsets));
  }

  /// Wraps rows with explicit offsets; jidx is derived. Throws when the
  /// offsets do not tile [0, rows) in ascending order.
  static JaggedTensor from_parts(Tensor<T> jdata, JOffsets offsets) {
    if (jdata.rank() == 0) throw InvalidArgument("JaggedTensor: jdata must have rank >= 1");
    if (offsets.empty()) throw InvalidArgument("JaggedTensor: need at least one element");
    JaggedTensor out;
    out.jdata_ = std::move(jdata);
    out.joffsets_ = std::move(offsets);
    int64_t expect = 0;
    for (size_t b = 0; b < out.joffsets_.size(); ++b) {
      const auto [s, e] = out.joffsets_[b];
      if (s != expect || e < s)
        throw InvalidArgument("JaggedTensor: joffsets row " + std::to_string(b) + " does not continue the tiling");
      out.jidx_.insert(out.jidx_.end(), size_t(e - s), int32_t(b));
      expect = e;
    }
    if (size_t(expect) != out.jdata_.num_rows())
      throw InvalidArgument("JaggedTensor: joffsets cover " + std::to_string(expect) + " rows but jdata has " +
                            std::to_string(out.jdata_.num_rows()));
    return out;
  }

  std::vector<Tensor<T>> unbind() const {
    std::vector<Tensor<T>> out;
    out.reserve(joffsets_.size());
    const auto trailing = jdata_.trailing_shape();
    const size_t width = jdata_.row_size();
    for (const auto& [s, e] : joffsets_) {
      std::vector<size_t> shape{size_t(e - s)};
      shape.insert(shape.end(), trailing.begin(), trailing.end());
      std::vector<T> values(jdata_.values().begin() + std::ptrdiff_t(size_t(s) * width),
                            jdata_.values().begin() + std::ptrdiff_t(size_t(e) * width));
      out.emplace_back(std::move(shape), std::move(values));
    }
    return out;
  }

  size_t num_tensors() const { return joffsets_.size(); }
  size_t total_rows() const { return jdata_.num_rows(); }
  size_t row_size() const { return jdata_.row_size(); }
  size_t rows_in(size_t b) const { return size_t(joffsets_[b][1] - joffsets_[b][0]); }
  size_t first_row(size_t b) const { return size_t(joffsets_[b][0]); }

  const Tensor<T>& jdata() const { return jdata_; }
  /// Mutable rows; the shape and offsets stay fixed.
  T* data() { return jdata_.data(); }
  const T* data() const { return jdata_.data(); }
  const JOffsets& joffsets() const { return joffsets_; }
  const std::vector<int32_t>& jidx() const { return jidx_; }

  /// Checks the tiling, jidx and shape invariants; throws std::logic_error.
  void validate() const {
    if (joffsets_.empty()) throw std::logic_error("JaggedTensor: no elements");
    int64_t expect = 0;
    for (const auto& [s, e] : joffsets_) {
      if (s != expect || e < s) throw std::logic_error("JaggedTensor: joffsets do not tile the rows");
      expect = e;
    }
    if (size_t(expect) != jdata_.num_rows() || jidx_.size() != jdata_.num_rows())
      throw std::logic_error("JaggedTensor: row count mismatch");
    for (size_t b = 0; b < joffsets_.size(); ++b)
      for (int64_t r = joffsets_[b][0]; r < joffsets_[b][1]; ++r)
        if (jidx_[size_t(r)] != int32_t(b)) throw std::logic_error("JaggedTensor: jidx disagrees with joffsets");
  }

  friend bool operator==(const JaggedTensor&, const JaggedTensor&) = default;

 private:
  Tensor<T> jdata_;
  JOffsets joffsets_;
  std::vector<int32_t> jidx_;
};

template <class T>
JaggedTensor<T> jagged_from_list(std::span<const Tensor<T>> tensors) {
  return JaggedTensor<T>::from_list(tensors);
}

template <class T>
std::vector<Tensor<T>> jagged_unbind(const JaggedTensor<T>& jt) {
  return jt.unbind();
}

/// Ordered batch of grids. Per-voxel features of the batch are the row
/// concatenation of each grid's features; voxel_joffsets()[b] is the row
/// range of grid b.
class GridBatch {
 public:
  explicit GridBatch(std::vector<IndexGrid> grids) : grids_(std::move(grids)) {
    if (grids_.empty()) throw InvalidArgument("grid_batch: need at least one grid");
    int64_t row = 0;
    for (const auto& g : grids_) {
      const int64_t n = int64_t(g.active_voxel_count());
      voxel_joffsets_.push_back({row, row + n});
      row += n;
    }
  }

  size_t size() const { return grids_.size(); }
  const IndexGrid& grid(size_t b) const { return grids_[b]; }
  const std::vector<IndexGrid>& grids() const { return grids_; }
  const JOffsets& voxel_joffsets() const { return voxel_joffsets_; }
  uint64_t total_voxels() const { return uint64_t(voxel_joffsets_.back()[1]); }

  std::vector<int32_t> voxel_jidx() const {
    std::vector<int32_t> out;
    out.reserve(total_voxels());
    for (size_t b = 0; b < grids_.size(); ++b) out.insert(out.end(), grids_[b].active_voxel_count(), int32_t(b));
    return out;
  }

  /// Wraps per-voxel rows (one per active voxel across the batch).
  template <class T>
  JaggedTensor<T> jagged_features(Tensor<T> rows) const {
    if (rows.num_rows() != total_voxels())
      throw InvalidArgument("GridBatch: expected " + std::to_string(total_voxels()) + " feature rows, got " +
                            std::to_string(rows.num_rows()));
    return JaggedTensor<T>::from_parts(std::move(rows), voxel_joffsets_);
  }

 private:
  std::vector<IndexGrid> grids_;
  JOffsets voxel_joffsets_;
};

inline GridBatch grid_batch(std::vector<IndexGrid> grids) { return GridBatch(std::move(grids)); }

}  // namespace fvdb
