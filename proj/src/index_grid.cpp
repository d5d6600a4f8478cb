#include "fvdb/index_grid.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fvdb/parallel.hpp"

namespace fvdb {

std::string to_string(const Coord& c) {
  std::ostringstream os;
  os << c;
  return os.str();
}

IndexGrid::IndexGrid(Parts parts)
    : root_(std::move(parts.root)),
      uppers_(std::move(parts.uppers)),
      lowers_(std::move(parts.lowers)),
      leaves_(std::move(parts.leaves)),
      transform_(parts.transform),
      name_(std::move(parts.name)) {
  if (!transform_.valid()) throw InvalidArgument("IndexGrid: voxel size must be positive and finite");
  counts_.upper = uppers_.size();
  counts_.lower = lowers_.size();
  counts_.leaf = leaves_.size();
  uint64_t voxels = 0;
  for (const auto& leaf : leaves_) voxels += leaf.active_count();
  counts_.active_voxels = voxels;
  if (!uppers_.empty()) {
    constexpr int32_t lo = std::numeric_limits<int32_t>::lowest(), hi = std::numeric_limits<int32_t>::max();
    tile_bbox_ = {{hi, hi, hi}, {lo, lo, lo}};
    for (const auto& upper : uppers_)
      for (int a = 0; a < 3; ++a) {
        tile_bbox_.min[a] = std::min(tile_bbox_.min[a], upper.origin[a] / kUpperSpan);
        tile_bbox_.max[a] = std::max(tile_bbox_.max[a], upper.origin[a] / kUpperSpan);
      }
  }
  validate();
}

void IndexGrid::set_transform(const VoxelTransform& t) {
  if (!t.valid()) throw InvalidArgument("IndexGrid: voxel size must be positive and finite");
  transform_ = t;
}

const UpperNode* IndexGrid::probe_upper(const Coord& c) const {
  const uint64_t key = TileKey::encode(c);
  auto it = std::lower_bound(root_.begin(), root_.end(), key,
                             [](const RootEntry& e, uint64_t k) { return e.key < k; });
  if (it == root_.end() || it->key != key) return nullptr;
  return &uppers_[it->upper];
}

const LowerNode* IndexGrid::probe_lower(const Coord& c) const {
  const UpperNode* upper = probe_upper(c);
  if (!upper) return nullptr;
  const uint32_t n = upper_offset(c);
  return upper->child_mask.test(n) ? &lowers_[upper->child_index(n)] : nullptr;
}

const LeafTopology* IndexGrid::probe_leaf(const Coord& c) const {
  const LowerNode* lower = probe_lower(c);
  if (!lower) return nullptr;
  const uint32_t n = lower_offset(c);
  return lower->child_mask.test(n) ? &leaves_[lower->child_index(n)] : nullptr;
}

uint64_t IndexGrid::coord_to_index(const Coord& c) const {
  const LeafTopology* leaf = probe_leaf(c);
  return leaf ? leaf->get_value(c) : 0;
}

std::vector<Coord> IndexGrid::active_coords() const {
  std::vector<Coord> out(counts_.active_voxels);
  parallel_for(leaves_.size(), 256, [&](size_t l) {
    const LeafTopology& leaf = leaves_[l];
    size_t pos = leaf.value_offset - 1;
    for (uint32_t w = 0; w < 8; ++w) {
      for (uint64_t bits = leaf.bit_mask[w]; bits; bits &= bits - 1) {
        const uint32_t m = w * 64 + uint32_t(std::countr_zero(bits));
        out[pos++] = leaf.origin + decode_local_offset(m, kLeafLog2);
      }
    }
  });
  return out;
}

CoordBBox IndexGrid::active_bbox() const {
  constexpr int32_t lo = std::numeric_limits<int32_t>::lowest(), hi = std::numeric_limits<int32_t>::max();
  CoordBBox box{{hi, hi, hi}, {lo, lo, lo}};
  for (const auto& leaf : leaves_) {
    for (uint32_t m = 0; m < kLeafVoxels; ++m) {
      if (!leaf.is_active(m)) continue;
      const Coord c = leaf.origin + decode_local_offset(m, kLeafLog2);
      for (int a = 0; a < 3; ++a) {
        box.min[a] = std::min(box.min[a], c[a]);
        box.max[a] = std::max(box.max[a], c[a]);
      }
    }
  }
  return box;
}

void IndexGrid::validate() const {
  auto fail = [](const std::string& what) { throw std::logic_error("IndexGrid invariant violated: " + what); };

  for (size_t r = 0; r < root_.size(); ++r) {
    if (r > 0 && root_[r - 1].key >= root_[r].key) fail("root keys not strictly ascending");
    if (root_[r].upper >= uppers_.size()) fail("root entry references missing upper node");
    if (TileKey::encode(uppers_[root_[r].upper].origin) != root_[r].key) fail("root key does not match upper origin");
  }
  if (root_.size() != uppers_.size()) fail("root size differs from upper node count");

  uint64_t expected_lower = 0;
  for (const auto& upper : uppers_) {
    if ((upper.origin & (kUpperSpan - 1)) != Coord{}) fail("upper origin not aligned to 4096");
    if (upper.first_child != expected_lower) fail("upper children not contiguous");
    const uint32_t n = upper.child_mask.count();
    if (n == 0) fail("empty upper node");
    uint32_t rank = 0;
    bool ok = true;
    upper.child_mask.for_each_set([&](uint32_t off) {
      const size_t idx = upper.first_child + rank++;
      if (idx >= lowers_.size() ||
          lowers_[idx].origin != upper.origin + Coord{decode_local_offset(off, kUpperLog2).i * kLowerSpan,
                                                      decode_local_offset(off, kUpperLog2).j * kLowerSpan,
                                                      decode_local_offset(off, kUpperLog2).k * kLowerSpan})
        ok = false;
    });
    if (!ok) fail("lower node origin inconsistent with parent offset");
    expected_lower += n;
  }
  if (expected_lower != lowers_.size()) fail("lower node count differs from upper child masks");

  uint64_t expected_leaf = 0;
  for (const auto& lower : lowers_) {
    if (lower.first_child != expected_leaf) fail("lower children not contiguous");
    const uint32_t n = lower.child_mask.count();
    if (n == 0) fail("empty lower node");
    uint32_t rank = 0;
    bool ok = true;
    lower.child_mask.for_each_set([&](uint32_t off) {
      const size_t idx = lower.first_child + rank++;
      const Coord local = decode_local_offset(off, kLowerLog2);
      if (idx >= leaves_.size() ||
          leaves_[idx].origin != lower.origin + Coord{local.i * kLeafDim, local.j * kLeafDim, local.k * kLeafDim})
        ok = false;
    });
    if (!ok) fail("leaf origin inconsistent with parent offset");
    expected_leaf += n;
  }
  if (expected_leaf != leaves_.size()) fail("leaf count differs from lower child masks");

  uint64_t next = 1;
  for (const auto& leaf : leaves_) {
    const uint32_t n = leaf.active_count();
    if (n == 0) fail("empty leaf");
    if (leaf.value_offset != next) fail("leaf value offsets are not an exclusive prefix sum + 1");
    if (leaf.prefix_sum != LeafTopology::compute_prefix_sum(leaf.bit_mask)) fail("leaf prefix sum stale");
    next += n;
  }
}

const UpperNode* GridAccessor::probe_upper(const Coord& c) {
  const Coord key = c & ~(kUpperSpan - 1);
  if (key != upper_key_) {
    upper_key_ = key;
    upper_ = grid_->probe_upper(c);
  }
  return upper_;
}

const LowerNode* GridAccessor::probe_lower(const Coord& c) {
  const Coord key = c & ~(kLowerSpan - 1);
  if (key != lower_key_) {
    lower_key_ = key;
    const UpperNode* upper = probe_upper(c);
    lower_ = nullptr;
    if (upper) {
      const uint32_t n = upper_offset(c);
      if (upper->child_mask.test(n)) lower_ = &grid_->lowers()[upper->child_index(n)];
    }
  }
  return lower_;
}

const LeafTopology* GridAccessor::probe_leaf(const Coord& c) {
  const Coord key = c & ~(kLeafDim - 1);
  if (key != leaf_key_) {
    leaf_key_ = key;
    const LowerNode* lower = probe_lower(c);
    leaf_ = nullptr;
    if (lower) {
      const uint32_t n = lower_offset(c);
      if (lower->child_mask.test(n)) leaf_ = &grid_->leaves()[lower->child_index(n)];
    }
  }
  return leaf_;
}

uint64_t GridAccessor::coord_to_index(const Coord& c) {
  const LeafTopology* leaf = probe_leaf(c);
  return leaf ? leaf->get_value(c) : 0;
}

}  // namespace fvdb
