#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fvdb/index_grid.hpp"
#include "fvdb/keys.hpp"

using namespace fvdb;

TEST_CASE("node_local_offset matches the hand-evaluated bit arithmetic") {
  CHECK(node_local_offset(NodeLevel::leaf, {0, 0, 0}) == 0);
  CHECK(node_local_offset(NodeLevel::leaf, {7, 7, 7}) == 511);
  CHECK(node_local_offset(NodeLevel::leaf, {1, 2, 3}) == 83);
  CHECK(node_local_offset(NodeLevel::lower, {8, 0, 0}) == 256);
  CHECK(node_local_offset(NodeLevel::upper, {128, 0, 0}) == 1024);
  CHECK(node_local_offset(NodeLevel::lower, {127, 127, 127}) == 4095);
  CHECK(node_local_offset(NodeLevel::upper, {4095, 4095, 4095}) == 32767);
}

TEST_CASE("offsets of negative coordinates use two's-complement wrap") {
  // -1 is the last voxel of the node whose origin is -8, -128, -4096.
  CHECK(leaf_offset({-1, -1, -1}) == 511);
  CHECK(lower_offset({-8, 0, 0}) == (15u << 8));
  CHECK(upper_offset({0, 0, -128}) == 31);
}

TEST_CASE("decode_local_offset inverts each level's offset") {
  for (uint32_t n = 0; n < kLeafVoxels; ++n) CHECK(leaf_offset(decode_local_offset(n, kLeafLog2)) == n);
  for (uint32_t n = 0; n < kLowerChildren; n += 7) {
    const Coord l = decode_local_offset(n, kLowerLog2);
    CHECK(lower_offset({l.i * 8, l.j * 8, l.k * 8}) == n);
  }
  for (uint32_t n = 0; n < kUpperChildren; n += 97) {
    const Coord l = decode_local_offset(n, kUpperLog2);
    CHECK(upper_offset({l.i * 128, l.j * 128, l.k * 128}) == n);
  }
}

TEST_CASE("TileKey packs 21-bit fields and decodes to the tile origin") {
  CHECK(TileKey::encode({0, 0, 0}) == 0);
  CHECK(TileKey::encode({0, 0, 4096}) == 1);
  CHECK(TileKey::encode({0, 4096, 0}) == (uint64_t(1) << 21));
  CHECK(TileKey::encode({4096, 0, 0}) == (uint64_t(1) << 42));
  CHECK(TileKey::encode({0, 0, -1}) == TileKey::kFieldMask);

  std::mt19937 rng(7);
  std::uniform_int_distribution<int32_t> dist(-(1 << 30), 1 << 30);
  for (int n = 0; n < 2000; ++n) {
    const Coord c{dist(rng), dist(rng), dist(rng)};
    const Coord origin = TileKey::decode(TileKey::encode(c));
    CHECK(origin == (c & ~(kUpperSpan - 1)));
    CHECK((TileKey::encode(c) >> 63) == 0);
  }
}

TEST_CASE("VoxelKey fields round-trip") {
  const Coord c{4095 + 8192, 130, -3};
  const uint64_t key = VoxelKey::encode(12345, c);
  CHECK(VoxelKey::run(key) == 12345);
  CHECK(VoxelKey::upper(key) == upper_offset(c));
  CHECK(VoxelKey::lower(key) == lower_offset(c));
  CHECK(VoxelKey::leaf(key) == leaf_offset(c));
  CHECK(VoxelKey::run(VoxelKey::encode(VoxelKey::kMaxRuns - 1, c)) == VoxelKey::kMaxRuns - 1);
}

TEST_CASE("leaf prefix sum packs seven 9-bit cumulative popcounts") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    LeafTopology leaf;
    for (auto& w : leaf.bit_mask) w = trial % 3 == 0 ? ~uint64_t(0) : rng() & rng();
    leaf.prefix_sum = LeafTopology::compute_prefix_sum(leaf.bit_mask);
    uint64_t sum = 0;
    for (int t = 0; t < 7; ++t) {
      sum += uint64_t(std::popcount(leaf.bit_mask[size_t(t)]));
      CHECK(((leaf.prefix_sum >> (9 * t)) & 511) == sum);
    }
  }
}

TEST_CASE("index_of returns background for inactive bits and ranks active ones") {
  LeafTopology leaf;
  leaf.value_offset = 10;
  // Bit 0 of word 1 active but bit 1 of word 1 inactive: a precedence slip
  // in the mask test would treat the inactive bit as active.
  leaf.set_active(64);
  leaf.set_active(3);
  leaf.set_active(511);
  leaf.prefix_sum = LeafTopology::compute_prefix_sum(leaf.bit_mask);
  CHECK(leaf.index_of(65) == 0);
  CHECK(leaf.index_of(0) == 0);
  CHECK(leaf.index_of(3) == 10);
  CHECK(leaf.index_of(64) == 11);
  CHECK(leaf.index_of(511) == 12);
  uint64_t expect = 10;
  for (uint32_t m = 0; m < kLeafVoxels; ++m)
    if (leaf.is_active(m)) CHECK(leaf.index_of(m) == expect++);
}

TEST_CASE("sparse ChildMask agrees with a dense bitset") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<bool> dense(kUpperChildren, false);
    ChildMask<kUpperLog2> mask;
    std::uniform_int_distribution<uint32_t> pos(0, kUpperChildren - 1);
    const int n = trial == 0 ? 0 : int(rng() % 3000);
    for (int s = 0; s < n; ++s) {
      const uint32_t b = trial % 2 ? pos(rng) % 4096 : pos(rng);  // clustered or spread
      dense[b] = true;
      mask.set(b);
    }
    mask.finalize();
    uint32_t rank = 0;
    std::vector<uint32_t> listed;
    mask.for_each_set([&](uint32_t b) { listed.push_back(b); });
    size_t next = 0;
    for (uint32_t b = 0; b < kUpperChildren; ++b) {
      REQUIRE(mask.test(b) == dense[b]);
      REQUIRE(mask.rank(b) == rank);
      if (dense[b]) {
        REQUIRE(next < listed.size());
        CHECK(listed[next++] == b);
        ++rank;
      }
    }
    CHECK(mask.count() == rank);
    CHECK(next == listed.size());
    for (const auto& w : mask.stored_words()) CHECK(w.bits != 0);
  }
}
