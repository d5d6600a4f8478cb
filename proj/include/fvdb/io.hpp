#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fvdb/build.hpp"
#include "fvdb/index_grid.hpp"
#include "fvdb/types.hpp"

namespace fvdb {

/// Malformed grid file or text input. `offset` is the byte offset for binary
/// files and the 1-based line number for text files.
class FormatError : public InvalidArgument {
 public:
  FormatError(const std::string& what, uint64_t offset) : InvalidArgument(what), offset_(offset) {}
  uint64_t offset() const { return offset_; }

 private:
  uint64_t offset_;
};

/// Open, read or write failure on the filesystem.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kGridMagic[8] = {'F', 'V', 'D', 'B', 'I', 'D', 'X', '1'};
inline constexpr uint32_t kGridVersion = 1;
inline constexpr size_t kLeafRecordBytes = 80;

/// Little-endian layout:
///   header  magic[8] version:u32 counts:u64x4 (upper, lower, leaf, voxels)
///           voxel_size:f64x3 origin:f64x3 name_len:u32 name, zero-padded to 8
///   upper   origin:i32x3 nwords:u32 summary:u64x8 words:u64xnwords
///   lower   origin:i32x3 nwords:u32 summary:u64x1 words:u64xnwords
///   leaf    value_offset:u64 prefix_sum:u64 bit_mask:u64x8
/// Only non-zero child-mask words are stored; leaf origins follow from the
/// parent masks.
std::vector<uint8_t> serialize_grid(const IndexGrid& grid);
IndexGrid deserialize_grid(const std::vector<uint8_t>& bytes);

/// Returns the number of bytes written.
uint64_t save_grid(const IndexGrid& grid, const std::filesystem::path& path);
IndexGrid load_grid(const std::filesystem::path& path);

/// ASCII xyz ("x y z" per line, '#' comments) or ASCII PLY (x, y, z taken
/// from the vertex element, other properties ignored).
std::vector<Vec3d> parse_points(const std::string& text);
std::vector<Vec3d> load_points(const std::filesystem::path& path);

struct Mesh {
  std::vector<Vec3d> vertices;
  std::vector<Triangle> triangles;
};

/// OBJ subset: `v` and `f` records; polygons are fan-triangulated from
/// their first vertex. Other records are ignored.
Mesh parse_obj(const std::string& text);
Mesh load_mesh(const std::filesystem::path& path);

/// 8-bit RGB image, row-major from the top row.
struct Image {
  size_t width = 0, height = 0;
  std::vector<uint8_t> rgb;  // height * width * 3

  Image() = default;
  Image(size_t w, size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}
  uint8_t* pixel(size_t x, size_t y) { return rgb.data() + (y * width + x) * 3; }
};

std::vector<uint8_t> encode_ppm(const Image& image);
void write_ppm(const Image& image, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

}  // namespace fvdb
