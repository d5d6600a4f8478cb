#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "fvdb/build.hpp"
#include "fvdb/io.hpp"
#include "fvdb/workloads.hpp"
#include "oracles.hpp"

using namespace fvdb;

namespace {

template <class T>
T read_at(const std::vector<uint8_t>& b, size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  return v;
}

template <class T>
void write_at(std::vector<uint8_t>& b, size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

uint64_t error_offset(const std::vector<uint8_t>& bytes) {
  try {
    deserialize_grid(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected a FormatError");
  return 0;
}

void same_grid(const IndexGrid& a, const IndexGrid& b) {
  CHECK(a.active_coords() == b.active_coords());
  CHECK(a.transform() == b.transform());
  CHECK(a.name() == b.name());
  CHECK(a.leaves().size() == b.leaves().size());
  CHECK(a.lowers().size() == b.lowers().size());
  CHECK(a.uppers().size() == b.uppers().size());
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("fvdb_io_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("single-voxel grid has the documented byte layout") {
  const IndexGrid g = build_from_coords(std::vector<Coord>{{0, 0, 0}}, {{0.5, 0.5, 0.5}, {1, 2, 3}}).grid;
  const auto b = serialize_grid(g);
  REQUIRE(b.size() == 96 + 88 + 32 + 80);
  CHECK(std::memcmp(b.data(), "FVDBIDX1", 8) == 0);
  CHECK(read_at<uint32_t>(b, 8) == 1);
  CHECK(read_at<uint64_t>(b, 12) == 1);  // uppers
  CHECK(read_at<uint64_t>(b, 20) == 1);  // lowers
  CHECK(read_at<uint64_t>(b, 28) == 1);  // leaves
  CHECK(read_at<uint64_t>(b, 36) == 1);  // voxels
  CHECK(read_at<double>(b, 44) == 0.5);
  CHECK(read_at<double>(b, 68) == 1.0);
  CHECK(read_at<double>(b, 84) == 3.0);
  CHECK(read_at<uint32_t>(b, 92) == 0);  // name length
  // Upper record: origin, one stored word, summary bit 0, word with bit 0.
  CHECK(read_at<int32_t>(b, 96) == 0);
  CHECK(read_at<uint32_t>(b, 108) == 1);
  CHECK(read_at<uint64_t>(b, 112) == 1);
  CHECK(read_at<uint64_t>(b, 176) == 1);
  // Lower record.
  CHECK(read_at<uint32_t>(b, 196) == 1);
  CHECK(read_at<uint64_t>(b, 200) == 1);
  CHECK(read_at<uint64_t>(b, 208) == 1);
  // Leaf record: 80 bytes.
  CHECK(read_at<uint64_t>(b, 216) == 1);
  CHECK(read_at<uint64_t>(b, 224) == LeafTopology::compute_prefix_sum({1, 0, 0, 0, 0, 0, 0, 0}));
  CHECK(read_at<uint64_t>(b, 232) == 1);
  for (size_t w = 1; w < 8; ++w) CHECK(read_at<uint64_t>(b, 232 + 8 * w) == 0);
}

TEST_CASE("names are stored and padded to 8 bytes") {
  IndexGrid g = build_from_coords(std::vector<Coord>{{5, -3, 9}}).grid;
  g.set_name("abc");
  const auto b = serialize_grid(g);
  CHECK(read_at<uint32_t>(b, 92) == 3);
  CHECK(b.size() == 296 + 8);
  CHECK(deserialize_grid(b).name() == "abc");
}

TEST_CASE("each leaf adds 80 bytes") {
  std::vector<Coord> c{{0, 0, 0}};
  const size_t base = serialize_grid(build_from_coords(c).grid).size();
  c.push_back({0, 0, 8});  // same lower node, same mask word
  CHECK(serialize_grid(build_from_coords(c).grid).size() == base + kLeafRecordBytes);
}

TEST_CASE("round trip preserves random grids exactly") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const size_t n = seed < 10 ? 1 + seed * 7 : (seed < 25 ? 5000 : 100000);
    IndexGrid g = build_from_coords(random_coords(n, seed % 2 ? 50 : 1 << 20, seed),
                                    {{0.1 + 0.01 * double(seed), 0.2, 0.3}, {-1.5, 0, 2}})
                      .grid;
    g.set_name("grid_" + std::to_string(seed));
    const auto bytes = serialize_grid(g);
    const IndexGrid back = deserialize_grid(bytes);
    same_grid(g, back);
    CHECK(serialize_grid(back) == bytes);
  }
}

TEST_CASE("empty grid round trips") {
  const IndexGrid g;
  const auto b = serialize_grid(g);
  CHECK(b.size() == 96);
  CHECK(deserialize_grid(b).active_voxel_count() == 0);
}

TEST_CASE("save and load through the filesystem") {
  TempDir dir;
  const IndexGrid g = make_sphere_shell(48).grid;
  const auto path = dir.path / "shell.fvdb";
  const uint64_t written = save_grid(g, path);
  CHECK(written == std::filesystem::file_size(path));
  same_grid(g, load_grid(path));
  CHECK_THROWS_AS(load_grid(dir.path / "missing.fvdb"), IoError);
}

TEST_CASE("malformed files report the offending offset") {
  const IndexGrid g = build_from_coords(random_coords(300, 100, 1)).grid;
  const auto good = serialize_grid(g);

  auto bad = good;
  bad[0] = 'X';
  CHECK(error_offset(bad) == 0);

  bad = good;
  write_at<uint32_t>(bad, 8, 2);
  CHECK(error_offset(bad) == 8);

  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(deserialize_grid(bad), FormatError);

  // Every strict prefix is rejected without reading past the end.
  for (size_t len = 0; len < good.size(); ++len) {
    const std::vector<uint8_t> cut(good.begin(), good.begin() + std::ptrdiff_t(len));
    CHECK(error_offset(cut) <= len);
  }

  // Absurd counts fail before any allocation.
  bad = good;
  write_at<uint64_t>(bad, 28, uint64_t(1) << 60);
  CHECK_THROWS_AS(deserialize_grid(bad), FormatError);
}

TEST_CASE("corrupted bytes never yield an invalid grid") {
  const auto good = serialize_grid(build_from_coords(random_coords(2000, 60, 3)).grid);
  std::mt19937_64 rng(5);
  int rejected = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    auto bad = good;
    const int flips = 1 + int(rng() % 3);
    for (int f = 0; f < flips; ++f) bad[rng() % bad.size()] ^= uint8_t(1u << (rng() % 8));
    try {
      const IndexGrid g = deserialize_grid(bad);
      g.validate();
    } catch (const FormatError&) {
      ++rejected;
    }
  }
  CHECK(rejected > 2500);
}

TEST_CASE("xyz point files") {
  const auto p = parse_points("# scan\n1 2 3\n\n  -0.5\t4e2 7 # trailing\n");
  REQUIRE(p.size() == 2);
  CHECK(p[1] == Vec3d{-0.5, 400, 7});
  try {
    parse_points("1 2 3\n4 5\n");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 2);
  }
  CHECK_THROWS_AS(parse_points("1 2 x\n"), FormatError);
  CHECK_THROWS_AS(parse_points("1 2 nan\n"), FormatError);
}

TEST_CASE("ascii PLY with extra properties") {
  const std::string ply =
      "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float intensity\nproperty float x\n"
      "property float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n"
      "9 1 2 3\n9 4 5 6\n";
  const auto p = parse_points(ply);
  REQUIRE(p.size() == 2);
  CHECK(p[0] == Vec3d{1, 2, 3});
  CHECK(p[1] == Vec3d{4, 5, 6});
  CHECK_THROWS_AS(parse_points("ply\nformat binary_little_endian 1.0\nend_header\n"), FormatError);
  CHECK_THROWS_AS(parse_points("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                               "property float z\nend_header\n1 2 3\n"),
                  FormatError);
}

TEST_CASE("OBJ meshes") {
  const Mesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\nf -1 -2 -3\n");
  CHECK(m.vertices.size() == 4);
  REQUIRE(m.triangles.size() == 3);
  CHECK(m.triangles[0] == Triangle{0, 1, 2});
  CHECK(m.triangles[1] == Triangle{0, 2, 3});
  CHECK(m.triangles[2] == Triangle{3, 2, 1});
  try {
    parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4);
  }
  CHECK_THROWS_AS(parse_obj("v 0 0\n"), FormatError);
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nf 1 1\n"), FormatError);
}

TEST_CASE("PPM encoding") {
  Image red(1, 1);
  red.pixel(0, 0)[0] = 255;
  const auto r = encode_ppm(red);
  CHECK(r.size() == 14);
  CHECK(r == std::vector<uint8_t>{'P', '6', '\n', '1', ' ', '1', '\n', '2', '5', '5', '\n', 255, 0, 0});

  Image img(2, 2);
  for (size_t n = 0; n < 12; ++n) img.rgb[n] = uint8_t(n * 20);
  const std::string header = "P6\n2 2\n255\n";
  std::vector<uint8_t> expect(header.begin(), header.end());
  for (size_t n = 0; n < 12; ++n) expect.push_back(uint8_t(n * 20));
  CHECK(encode_ppm(img) == expect);

  CHECK_THROWS_AS(encode_ppm(Image(0, 4)), InvalidArgument);
  Image broken(2, 2);
  broken.rgb.pop_back();
  CHECK_THROWS_AS(encode_ppm(broken), InvalidArgument);

  TempDir dir;
  write_ppm(img, dir.path / "x.ppm");
  const std::string back = read_file(dir.path / "x.ppm");
  CHECK(std::vector<uint8_t>(back.begin(), back.end()) == expect);
  CHECK_THROWS_AS(write_ppm(img, dir.path / "no" / "such" / "dir.ppm"), IoError);
}
