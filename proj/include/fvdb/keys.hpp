#pragma once

#include <cstdint>

#include "fvdb/types.hpp"

namespace fvdb {

// Tree configuration [Map,5,4,3]: 32^3 upper, 16^3 lower and 8^3 leaf nodes.
inline constexpr int kLeafLog2 = 3;
inline constexpr int kLowerLog2 = 4;
inline constexpr int kUpperLog2 = 5;
inline constexpr int32_t kLeafDim = 1 << kLeafLog2;                                   // 8
inline constexpr int32_t kLowerSpan = 1 << (kLeafLog2 + kLowerLog2);                  // 128
inline constexpr int32_t kUpperSpan = 1 << (kLeafLog2 + kLowerLog2 + kUpperLog2);     // 4096
inline constexpr uint32_t kLeafVoxels = 1u << (3 * kLeafLog2);                        // 512
inline constexpr uint32_t kLowerChildren = 1u << (3 * kLowerLog2);                    // 4096
inline constexpr uint32_t kUpperChildren = 1u << (3 * kUpperLog2);                    // 32768

enum class NodeLevel { leaf, lower, upper };

constexpr uint32_t leaf_offset(const Coord& c) {
  return uint32_t((c.i & 7) << 6 | (c.j & 7) << 3 | (c.k & 7));
}
constexpr uint32_t lower_offset(const Coord& c) {
  auto a = [](int32_t n) { return (n & 127) >> 3; };
  return uint32_t(a(c.i) << 8 | a(c.j) << 4 | a(c.k));
}
constexpr uint32_t upper_offset(const Coord& c) {
  auto a = [](int32_t n) { return (n & 4095) >> 7; };
  return uint32_t(a(c.i) << 10 | a(c.j) << 5 | a(c.k));
}

constexpr uint32_t node_local_offset(NodeLevel level, const Coord& c) {
  switch (level) {
    case NodeLevel::leaf: return leaf_offset(c);
    case NodeLevel::lower: return lower_offset(c);
    case NodeLevel::upper: return upper_offset(c);
  }
  return 0;
}

/// Local coordinate (in child units) of a linear offset inside a node with
/// 2^log2 children per axis.
constexpr Coord decode_local_offset(uint32_t n, int log2) {
  const uint32_t m = (1u << log2) - 1;
  return {int32_t((n >> (2 * log2)) & m), int32_t((n >> log2) & m), int32_t(n & m)};
}

/// Root-table key: three 21-bit fields holding each coordinate shifted right
/// by 12 (two's-complement truncated), k in the low bits.
struct TileKey {
  static constexpr uint64_t kFieldMask = (uint64_t(1) << 21) - 1;

  static constexpr uint64_t encode(const Coord& c) {
    return (uint64_t(int64_t(c.k >> 12)) & kFieldMask) | (uint64_t(int64_t(c.j >> 12)) & kFieldMask) << 21 |
           (uint64_t(int64_t(c.i >> 12)) & kFieldMask) << 42;
  }

  /// Origin (multiple of 4096) of the root child addressed by `key`.
  static constexpr Coord decode(uint64_t key) {
    auto field = [](uint64_t v) {
      int64_t f = int64_t(v & kFieldMask);
      if (f & (int64_t(1) << 20)) f -= int64_t(1) << 21;
      return int32_t(f * kUpperSpan);
    };
    return {field(key >> 42), field(key >> 21), field(key)};
  }
};

/// Per-voxel sort key: tile run index M in bits 36+, then upper, lower and
/// leaf local offsets.
struct VoxelKey {
  static constexpr uint64_t kMaxRuns = uint64_t(1) << 28;

  static constexpr uint64_t encode(uint64_t run, const Coord& c) {
    return run << 36 | uint64_t(upper_offset(c)) << 21 | uint64_t(lower_offset(c)) << 9 | leaf_offset(c);
  }
  static constexpr uint64_t run(uint64_t key) { return key >> 36; }
  static constexpr uint32_t upper(uint64_t key) { return uint32_t(key >> 21) & (kUpperChildren - 1); }
  static constexpr uint32_t lower(uint64_t key) { return uint32_t(key >> 9) & (kLowerChildren - 1); }
  static constexpr uint32_t leaf(uint64_t key) { return uint32_t(key) & (kLeafVoxels - 1); }
};

}  // namespace fvdb
