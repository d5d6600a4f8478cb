#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fvdb/keys.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// Topology of an 8^3 leaf. Indices are 1-based; 0 addresses the background.
struct LeafTopology {
  Coord origin;               // multiple of 8, not serialized (implied by the parent)
  uint64_t value_offset = 1;  // global index of the first active voxel
  uint64_t prefix_sum = 0;    // seven 9-bit cumulative popcounts of words 0..6
  std::array<uint64_t, 8> bit_mask{};

  bool is_active(uint32_t n) const { return (bit_mask[n >> 6] >> (n & 63)) & 1; }
  void set_active(uint32_t n) { bit_mask[n >> 6] |= uint64_t(1) << (n & 63); }

  uint32_t active_count() const {
    uint32_t n = 0;
    for (uint64_t w : bit_mask) n += uint32_t(std::popcount(w));
    return n;
  }

  /// Packs the cumulative popcounts of words 0..t into 9-bit field t.
  static uint64_t compute_prefix_sum(const std::array<uint64_t, 8>& mask) {
    uint64_t packed = 0, sum = 0;
    for (int t = 0; t < 7; ++t) {
      sum += uint64_t(std::popcount(mask[t]));
      packed |= sum << (9 * t);
    }
    return packed;
  }

  /// Global index of local voxel offset m, or 0 when inactive.
  uint64_t index_of(uint32_t m) const {
    uint32_t n = m >> 6;
    const uint64_t w = bit_mask[n], mask = uint64_t(1) << (m & 63);
    if ((w & mask) == 0) return 0;
    const uint64_t sum = n-- ? (prefix_sum >> (9 * n)) & 511 : 0;
    return sum + value_offset + uint64_t(std::popcount(w & (mask - 1)));
  }

  uint64_t get_value(const Coord& c) const { return index_of(leaf_offset(c)); }
};

/// Bit mask over 2^(3*Log2Dim) children with O(1) rank. Only non-zero
/// 64-bit words are stored, flagged by a summary bitmap, so a node with few
/// children costs a few dozen bytes instead of the dense 512 B / 4 KB.
template <int Log2Dim>
class ChildMask {
 public:
  static constexpr uint32_t kSize = 1u << (3 * Log2Dim);
  static constexpr uint32_t kWords = kSize / 64;
  static constexpr uint32_t kSummaryWords = (kWords + 63) / 64;

  struct Word {
    uint64_t bits = 0;
    uint32_t rank = 0;  // set bits in all preceding words
  };

  bool test(uint32_t n) const {
    const uint32_t w = n >> 6;
    if (!has_word(w)) return false;
    return (words_[slot(w)].bits >> (n & 63)) & 1;
  }

  /// Sets bit n. Appending in ascending order is O(1); finalize() must run
  /// before rank()/count() are used.
  void set(uint32_t n) {
    const uint32_t w = n >> 6, s = slot(w);
    if (!has_word(w)) {
      words_.insert(words_.begin() + s, Word{});
      summary_[w >> 6] |= uint64_t(1) << (w & 63);
    }
    words_[s].bits |= uint64_t(1) << (n & 63);
  }

  /// Number of set bits strictly below n.
  uint32_t rank(uint32_t n) const {
    const uint32_t w = n >> 6, s = slot(w);
    if (has_word(w)) return words_[s].rank + uint32_t(std::popcount(words_[s].bits & ((uint64_t(1) << (n & 63)) - 1)));
    return s < words_.size() ? words_[s].rank : count();
  }

  uint32_t count() const {
    return words_.empty() ? 0 : words_.back().rank + uint32_t(std::popcount(words_.back().bits));
  }

  void finalize() {
    uint32_t sum = 0;
    for (auto& word : words_) {
      word.rank = sum;
      sum += uint32_t(std::popcount(word.bits));
    }
  }

  /// Dense word w (zero when absent).
  uint64_t word(uint32_t w) const { return has_word(w) ? words_[slot(w)].bits : 0; }
  const std::array<uint64_t, kSummaryWords>& summary() const { return summary_; }
  const std::vector<Word>& stored_words() const { return words_; }

  template <class Fn>
  void for_each_set(Fn&& fn) const {
    size_t s = 0;
    for (uint32_t sw = 0; sw < kSummaryWords; ++sw) {
      for (uint64_t present = summary_[sw]; present; present &= present - 1) {
        const uint32_t w = sw * 64 + uint32_t(std::countr_zero(present));
        for (uint64_t bits = words_[s].bits; bits; bits &= bits - 1) fn(w * 64 + uint32_t(std::countr_zero(bits)));
        ++s;
      }
    }
  }

 private:
  bool has_word(uint32_t w) const { return (summary_[w >> 6] >> (w & 63)) & 1; }

  /// Number of stored words preceding dense word w.
  uint32_t slot(uint32_t w) const {
    uint32_t s = 0;
    for (uint32_t sw = 0; sw < (w >> 6); ++sw) s += uint32_t(std::popcount(summary_[sw]));
    return s + uint32_t(std::popcount(summary_[w >> 6] & ((uint64_t(1) << (w & 63)) - 1)));
  }

  std::array<uint64_t, kSummaryWords> summary_{};
  std::vector<Word> words_;
};

struct LowerNode {
  Coord origin;  // multiple of 128
  ChildMask<kLowerLog2> child_mask;
  uint32_t first_child = 0;  // leaves are stored contiguously in offset order

  uint32_t child_index(uint32_t n) const { return first_child + child_mask.rank(n); }
};

struct UpperNode {
  Coord origin;  // multiple of 4096
  ChildMask<kUpperLog2> child_mask;
  uint32_t first_child = 0;

  uint32_t child_index(uint32_t n) const { return first_child + child_mask.rank(n); }
};

struct RootEntry {
  uint64_t key = 0;  // TileKey
  uint32_t upper = 0;
};

struct GridCounts {
  uint64_t upper = 0, lower = 0, leaf = 0, active_voxels = 0;
  friend bool operator==(const GridCounts&, const GridCounts&) = default;
};

struct CoordBBox {
  Coord min, max;  // inclusive
};

/// Sparse [Map,5,4,3] tree that stores topology only and maps active
/// coordinates to a contiguous 1-based index range. Immutable once built.
class IndexGrid {
 public:
  struct Parts {
    std::vector<RootEntry> root;  // ascending key order
    std::vector<UpperNode> uppers;
    std::vector<LowerNode> lowers;
    std::vector<LeafTopology> leaves;
    VoxelTransform transform;
    std::string name;
  };

  IndexGrid() = default;
  /// Takes ownership of node arrays whose masks and offsets are already
  /// consistent; recomputes counts and checks structural invariants.
  explicit IndexGrid(Parts parts);

  const GridCounts& counts() const { return counts_; }
  uint64_t active_voxel_count() const { return counts_.active_voxels; }
  bool empty() const { return counts_.active_voxels == 0; }

  const VoxelTransform& transform() const { return transform_; }
  void set_transform(const VoxelTransform& t);
  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  std::span<const RootEntry> root() const { return root_; }
  std::span<const UpperNode> uppers() const { return uppers_; }
  std::span<const LowerNode> lowers() const { return lowers_; }
  std::span<const LeafTopology> leaves() const { return leaves_; }

  const UpperNode* probe_upper(const Coord& c) const;
  const LowerNode* probe_lower(const Coord& c) const;
  const LeafTopology* probe_leaf(const Coord& c) const;

  /// From-root lookup: 1-based index, 0 when inactive.
  uint64_t coord_to_index(const Coord& c) const;

  /// Active coordinates in index order: result[n] has index n + 1.
  std::vector<Coord> active_coords() const;

  /// Bounding box of active voxels; only meaningful when !empty().
  CoordBBox active_bbox() const;

  /// Bounding box of root tiles in units of 4096 voxels.
  const CoordBBox& tile_bbox() const { return tile_bbox_; }

  /// Throws std::logic_error describing the first violated invariant.
  void validate() const;

 private:
  std::vector<RootEntry> root_;
  std::vector<UpperNode> uppers_;
  std::vector<LowerNode> lowers_;
  std::vector<LeafTopology> leaves_;
  GridCounts counts_;
  CoordBBox tile_bbox_;
  VoxelTransform transform_;
  std::string name_;
};

/// Read accessor that caches the last visited node at each level, so
/// coherent query streams rarely reach the root. One per thread.
class GridAccessor {
 public:
  explicit GridAccessor(const IndexGrid& grid) : grid_(&grid) {}

  uint64_t coord_to_index(const Coord& c);
  const LeafTopology* probe_leaf(const Coord& c);
  const LowerNode* probe_lower(const Coord& c);
  const UpperNode* probe_upper(const Coord& c);

  const IndexGrid& grid() const { return *grid_; }

 private:
  static constexpr int32_t kNone = INT32_MIN;

  const IndexGrid* grid_;
  Coord leaf_key_{kNone, kNone, kNone}, lower_key_{kNone, kNone, kNone}, upper_key_{kNone, kNone, kNone};
  const LeafTopology* leaf_ = nullptr;
  const LowerNode* lower_ = nullptr;
  const UpperNode* upper_ = nullptr;
};

}  // namespace fvdb
