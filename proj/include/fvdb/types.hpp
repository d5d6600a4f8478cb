#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvdb {

/// Thrown for invalid caller input (bad shapes, out-of-range coordinates,
/// non-finite points). The CLI maps it to the "data error" exit code.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Integer voxel coordinate in index space.
struct Coord {
  int32_t i = 0, j = 0, k = 0;

  constexpr int32_t operator[](int axis) const { return axis == 0 ? i : (axis == 1 ? j : k); }
  constexpr int32_t& operator[](int axis) { return axis == 0 ? i : (axis == 1 ? j : k); }

  constexpr Coord operator+(const Coord& o) const { return {i + o.i, j + o.j, k + o.k}; }
  constexpr Coord operator-(const Coord& o) const { return {i - o.i, j - o.j, k - o.k}; }
  constexpr Coord operator&(int32_t m) const { return {i & m, j & m, k & m}; }

  friend constexpr bool operator==(const Coord&, const Coord&) = default;
  friend constexpr auto operator<=>(const Coord&, const Coord&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Coord& c) {
    return os << '(' << c.i << ',' << c.j << ',' << c.k << ')';
  }
};

/// Largest coordinate magnitude accepted by the builders.
inline constexpr int32_t kCoordLimit = 1 << 30;

constexpr bool in_range(const Coord& c) {
  auto ok = [](int32_t v) { return v >= -kCoordLimit && v <= kCoordLimit; };
  return ok(c.i) && ok(c.j) && ok(c.k);
}

std::string to_string(const Coord& c);

/// Floor division that rounds toward negative infinity.
constexpr int32_t floor_div(int32_t a, int32_t b) {
  int32_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

using Vec3d = std::array<double, 3>;

/// Maps index space to world space. Voxel (0,0,0) is centred at `origin`.
struct VoxelTransform {
  Vec3d voxel_size{1.0, 1.0, 1.0};
  Vec3d origin{0.0, 0.0, 0.0};

  /// World position to continuous index coordinates (voxel centres at integers).
  Vec3d world_to_index(const Vec3d& p) const {
    return {(p[0] - origin[0]) / voxel_size[0], (p[1] - origin[1]) / voxel_size[1],
            (p[2] - origin[2]) / voxel_size[2]};
  }
  Vec3d index_to_world(const Vec3d& x) const {
    return {x[0] * voxel_size[0] + origin[0], x[1] * voxel_size[1] + origin[1],
            x[2] * voxel_size[2] + origin[2]};
  }
  Vec3d voxel_center(const Coord& c) const {
    return index_to_world({double(c.i), double(c.j), double(c.k)});
  }

  /// Nearest voxel centre: floor((p - origin) / size + 0.5).
  Coord quantize(const Vec3d& p) const {
    const Vec3d x = world_to_index(p);
    return {int32_t(std::floor(x[0] + 0.5)), int32_t(std::floor(x[1] + 0.5)),
            int32_t(std::floor(x[2] + 0.5))};
  }

  bool valid() const {
    for (double s : voxel_size)
      if (!(s > 0.0) || !std::isfinite(s)) return false;
    for (double o : origin)
      if (!std::isfinite(o)) return false;
    return true;
  }

  friend bool operator==(const VoxelTransform&, const VoxelTransform&) = default;
};

/// Row-major dense array with a runtime shape. The first dimension is the
/// row dimension used by the jagged and per-voxel feature APIs.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw InvalidArgument("Tensor: data size does not match shape");
  }

  static Tensor rows(size_t n, size_t width, T fill = T{}) { return Tensor({n, width}, fill); }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t num_rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Elements per row (product of trailing dimensions).
  size_t row_size() const {
    size_t n = 1;
    for (size_t d = 1; d < shape_.size(); ++d) n *= shape_[d];
    return n;
  }
  std::vector<size_t> trailing_shape() const {
    return shape_.empty() ? std::vector<size_t>{} : std::vector<size_t>(shape_.begin() + 1, shape_.end());
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  size_t size() const { return data_.size(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T* row(size_t r) { return data_.data() + r * row_size(); }
  const T* row(size_t r) const { return data_.data() + r * row_size(); }

  T& operator()(size_t r, size_t c) { return data_[r * row_size() + c]; }
  const T& operator()(size_t r, size_t c) const { return data_[r * row_size() + c]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static size_t count(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::vector<size_t> shape_;
  std::vector<T> data_;
};

}  // namespace fvdb

template <>
struct std::hash<fvdb::Coord> {
  size_t operator()(const fvdb::Coord& c) const noexcept {
    uint64_t h = uint64_t(uint32_t(c.i)) * 0x9E3779B97F4A7C15ull;
    h ^= uint64_t(uint32_t(c.j)) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= uint64_t(uint32_t(c.k)) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return size_t(h);
  }
};
