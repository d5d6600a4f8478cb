#include "fvdb/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fvdb/keys.hpp"

namespace fvdb {
namespace {

static_assert(std::endian::native == std::endian::little, "grid files are written in host byte order");
static_assert(sizeof(LeafTopology::value_offset) + sizeof(LeafTopology::prefix_sum) +
                  sizeof(LeafTopology::bit_mask) ==
              kLeafRecordBytes);

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  std::vector<uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& b) : bytes_(b) {}

  template <class T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(uint64_t n, const char* field) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError("grid file truncated: " + std::string(field) + " needs " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos_),
                        pos_);
  }
  uint64_t pos() const { return pos_; }
  uint64_t remaining() const { return bytes_.size() - pos_; }
  const uint8_t* here() const { return bytes_.data() + pos_; }
  void skip(uint64_t n) { pos_ += n; }

 private:
  const std::vector<uint8_t>& bytes_;
  uint64_t pos_ = 0;
};

[[noreturn]] void fail(const std::string& what, uint64_t offset) {
  throw FormatError("grid file invalid at offset " + std::to_string(offset) + ": " + what, offset);
}

template <int Log2Dim>
void put_mask(Writer& w, const Coord& origin, const ChildMask<Log2Dim>& mask) {
  w.put(origin.i);
  w.put(origin.j);
  w.put(origin.k);
  w.put(uint32_t(mask.stored_words().size()));
  for (uint64_t s : mask.summary()) w.put(s);
  for (const auto& word : mask.stored_words()) w.put(word.bits);
}

template <int Log2Dim>
Coord get_mask(Reader& r, ChildMask<Log2Dim>& mask) {
  Coord origin;
  origin.i = r.get<int32_t>("node origin");
  origin.j = r.get<int32_t>("node origin");
  origin.k = r.get<int32_t>("node origin");
  const uint64_t count_at = r.pos();
  const uint32_t nwords = r.get<uint32_t>("mask word count");
  const uint64_t summary_at = r.pos();
  std::array<uint64_t, ChildMask<Log2Dim>::kSummaryWords> summary;
  uint32_t present = 0;
  for (auto& s : summary) {
    s = r.get<uint64_t>("mask summary");
    present += uint32_t(std::popcount(s));
  }
  if (present != nwords) fail("mask word count does not match summary", count_at);
  if (ChildMask<Log2Dim>::kWords % 64 != 0 && (summary.back() >> (ChildMask<Log2Dim>::kWords % 64)) != 0)
    fail("mask summary flags words past the end", summary_at);
  for (uint32_t sw = 0; sw < summary.size(); ++sw)
    for (uint64_t flags = summary[sw]; flags; flags &= flags - 1) {
      const uint32_t w = sw * 64 + uint32_t(std::countr_zero(flags));
      const uint64_t at = r.pos();
      const uint64_t bits = r.get<uint64_t>("mask word");
      if (bits == 0) fail("stored mask word is zero", at);
      for (uint64_t b = bits; b; b &= b - 1) mask.set(w * 64 + uint32_t(std::countr_zero(b)));
    }
  mask.finalize();
  return origin;
}

// Child origins in storage order, from each parent's origin and mask.
template <class Node>
std::vector<Coord> child_origins(const std::vector<Node>& parents, int log2, int child_span) {
  std::vector<Coord> out;
  for (const auto& p : parents)
    p.child_mask.for_each_set([&](uint32_t off) {
      const Coord l = decode_local_offset(off, log2);
      out.push_back(p.origin + Coord{l.i * child_span, l.j * child_span, l.k * child_span});
    });
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const size_t b = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

double parse_double(std::string_view tok, size_t line) {
  double v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || !std::isfinite(v))
    throw FormatError("line " + std::to_string(line) + ": expected a finite number, got '" + std::string(tok) + "'",
                      line);
  return v;
}

long long parse_int(std::string_view tok, size_t line) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw FormatError("line " + std::to_string(line) + ": expected an integer, got '" + std::string(tok) + "'", line);
  return v;
}

// Calls fn(line_number, line) with '\r' trimmed.
template <class Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  size_t start = 0, line = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view view(text.data() + start, end - start);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    ++line;
    if (!fn(line, view)) return;
    if (end == text.size()) break;
    start = end + 1;
  }
}

std::vector<Vec3d> parse_ply(const std::string& text) {
  struct Element {
    std::string name;
    long long count = 0;
    std::vector<std::string> props;
    bool has_list = false;
  };
  std::vector<Element> elements;
  bool in_header = true, ascii = false;
  size_t header_lines = 0;
  std::vector<std::string_view> body;
  std::vector<size_t> body_line;
  for_each_line(text, [&](size_t line, std::string_view view) {
    if (!in_header) {
      const auto toks = split_ws(view);
      if (!toks.empty()) {
        body.push_back(view);
        body_line.push_back(line);
      }
      return true;
    }
    const auto toks = split_ws(view);
    if (line == 1) {
      if (toks.size() != 1 || toks[0] != "ply") throw FormatError("line 1: missing 'ply' magic", 1);
      return true;
    }
    if (toks.empty() || toks[0] == "comment" || toks[0] == "obj_info") return true;
    if (toks[0] == "format") {
      if (toks.size() < 2 || toks[1] != "ascii")
        throw FormatError("line " + std::to_string(line) + ": only ascii PLY is supported", line);
      ascii = true;
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw FormatError("line " + std::to_string(line) + ": malformed element", line);
      elements.push_back({std::string(toks[1]), parse_int(toks[2], line), {}, false});
      if (elements.back().count < 0) throw FormatError("line " + std::to_string(line) + ": negative count", line);
    } else if (toks[0] == "property") {
      if (elements.empty() || toks.size() < 3)
        throw FormatError("line " + std::to_string(line) + ": property outside an element", line);
      if (toks[1] == "list") elements.back().has_list = true;
      elements.back().props.emplace_back(toks.back());
    } else if (toks[0] == "end_header") {
      in_header = false;
      header_lines = line;
    } else {
      throw FormatError("line " + std::to_string(line) + ": unknown header record '" + std::string(toks[0]) + "'",
                        line);
    }
    return true;
  });
  if (in_header) throw FormatError("PLY header has no end_header", header_lines + 1);
  if (!ascii) throw FormatError("PLY header has no format line", header_lines);

  std::vector<Vec3d> points;
  size_t row = 0;
  for (const auto& el : elements) {
    if (el.name != "vertex") {
      row += size_t(el.count);
      continue;
    }
    if (el.has_list) throw FormatError("PLY vertex element with list properties is not supported", header_lines);
    std::array<size_t, 3> col{};
    for (int a = 0; a < 3; ++a) {
      const char* axis = a == 0 ? "x" : a == 1 ? "y" : "z";
      const auto it = std::find(el.props.begin(), el.props.end(), axis);
      if (it == el.props.end()) throw FormatError(std::string("PLY vertex element lacks property ") + axis, header_lines);
      col[size_t(a)] = size_t(it - el.props.begin());
    }
    for (long long v = 0; v < el.count; ++v, ++row) {
      if (row >= body.size()) throw FormatError("PLY body ends before all vertices", header_lines + body.size() + 1);
      const auto toks = split_ws(body[row]);
      if (toks.size() != el.props.size())
        throw FormatError("line " + std::to_string(body_line[row]) + ": expected " + std::to_string(el.props.size()) +
                              " values",
                          body_line[row]);
      points.push_back({parse_double(toks[col[0]], body_line[row]), parse_double(toks[col[1]], body_line[row]),
                        parse_double(toks[col[2]], body_line[row])});
    }
    return points;
  }
  throw FormatError("PLY file has no vertex element", header_lines);
}

}  // namespace

std::vector<uint8_t> serialize_grid(const IndexGrid& grid) {
  Writer w;
  for (char c : kGridMagic) w.put(c);
  w.put(kGridVersion);
  const GridCounts& n = grid.counts();
  w.put(n.upper);
  w.put(n.lower);
  w.put(n.leaf);
  w.put(n.active_voxels);
  for (double v : grid.transform().voxel_size) w.put(v);
  for (double v : grid.transform().origin) w.put(v);
  w.put(uint32_t(grid.name().size()));
  for (char c : grid.name()) w.put(c);
  while (w.bytes.size() % 8) w.put(uint8_t(0));
  for (const auto& u : grid.uppers()) put_mask(w, u.origin, u.child_mask);
  for (const auto& l : grid.lowers()) put_mask(w, l.origin, l.child_mask);
  for (const auto& leaf : grid.leaves()) {
    w.put(leaf.value_offset);
    w.put(leaf.prefix_sum);
    for (uint64_t m : leaf.bit_mask) w.put(m);
  }
  return std::move(w.bytes);
}

IndexGrid deserialize_grid(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  r.need(sizeof(kGridMagic), "magic");
  if (std::memcmp(r.here(), kGridMagic, sizeof(kGridMagic)) != 0) fail("bad magic", 0);
  r.skip(sizeof(kGridMagic));
  const uint32_t version = r.get<uint32_t>("version");
  if (version != kGridVersion)
    fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kGridVersion) + ")", 8);

  const uint64_t counts_at = r.pos();
  GridCounts n;
  n.upper = r.get<uint64_t>("upper count");
  n.lower = r.get<uint64_t>("lower count");
  n.leaf = r.get<uint64_t>("leaf count");
  n.active_voxels = r.get<uint64_t>("voxel count");

  IndexGrid::Parts parts;
  const uint64_t transform_at = r.pos();
  for (double& v : parts.transform.voxel_size) v = r.get<double>("voxel size");
  for (double& v : parts.transform.origin) v = r.get<double>("origin");
  if (!parts.transform.valid()) fail("voxel size must be positive and finite", transform_at);
  const uint32_t name_len = r.get<uint32_t>("name length");
  r.need(name_len, "name");
  parts.name.assign(reinterpret_cast<const char*>(r.here()), name_len);
  r.skip(name_len);
  const uint64_t pad = (8 - r.pos() % 8) % 8;
  r.need(pad, "header padding");
  r.skip(pad);

  // Cheapest records: 88-byte uppers, 32-byte lowers, 80-byte leaves.
  const auto fits = [&](uint64_t count, uint64_t size) { return count <= r.remaining() / size; };
  if (!fits(n.upper, 88) || !fits(n.lower, 32) || !fits(n.leaf, kLeafRecordBytes))
    fail("node counts exceed file size", counts_at);

  parts.uppers.resize(n.upper);
  uint64_t children = 0;
  for (auto& u : parts.uppers) {
    const uint64_t at = r.pos();
    u.origin = get_mask(r, u.child_mask);
    if ((u.origin & (kUpperSpan - 1)) != Coord{} || !in_range(u.origin)) fail("upper origin not a valid tile", at);
    u.first_child = uint32_t(children);
    children += u.child_mask.count();
  }
  if (children != n.lower) fail("upper masks disagree with lower count", counts_at + 8);
  const std::vector<Coord> lower_origins = child_origins(parts.uppers, kUpperLog2, kLowerSpan);

  parts.lowers.resize(n.lower);
  children = 0;
  for (size_t l = 0; l < parts.lowers.size(); ++l) {
    const uint64_t at = r.pos();
    auto& lower = parts.lowers[l];
    lower.origin = get_mask(r, lower.child_mask);
    if (lower.origin != lower_origins[l]) fail("lower origin disagrees with parent mask", at);
    lower.first_child = uint32_t(children);
    children += lower.child_mask.count();
  }
  if (children != n.leaf) fail("lower masks disagree with leaf count", counts_at + 16);
  const std::vector<Coord> leaf_origins = child_origins(parts.lowers, kLowerLog2, kLeafDim);

  parts.leaves.resize(n.leaf);
  uint64_t voxels = 0;
  for (size_t f = 0; f < parts.leaves.size(); ++f) {
    const uint64_t at = r.pos();
    auto& leaf = parts.leaves[f];
    leaf.origin = leaf_origins[f];
    leaf.value_offset = r.get<uint64_t>("leaf value offset");
    leaf.prefix_sum = r.get<uint64_t>("leaf prefix sum");
    for (uint64_t& m : leaf.bit_mask) m = r.get<uint64_t>("leaf mask");
    if (leaf.value_offset != voxels + 1) fail("leaf value offset out of sequence", at);
    if (leaf.prefix_sum != LeafTopology::compute_prefix_sum(leaf.bit_mask)) fail("leaf prefix sum is stale", at + 8);
    if (leaf.active_count() == 0) fail("empty leaf", at + 16);
    voxels += leaf.active_count();
  }
  if (voxels != n.active_voxels) fail("leaf masks disagree with voxel count", counts_at + 24);
  if (r.remaining() != 0) fail("trailing bytes after leaf records", r.pos());

  parts.root.reserve(parts.uppers.size());
  for (uint32_t u = 0; u < parts.uppers.size(); ++u) parts.root.push_back({TileKey::encode(parts.uppers[u].origin), u});
  std::sort(parts.root.begin(), parts.root.end(), [](const RootEntry& a, const RootEntry& b) { return a.key < b.key; });
  try {
    return IndexGrid(std::move(parts));
  } catch (const std::logic_error& e) {
    fail(e.what(), counts_at);
  }
}

uint64_t save_grid(const IndexGrid& grid, const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = serialize_grid(grid);
  write_file(path, bytes);
  return bytes.size();
}

IndexGrid load_grid(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return deserialize_grid(std::vector<uint8_t>(text.begin(), text.end()));
}

std::vector<Vec3d> parse_points(const std::string& text) {
  if (text.rfind("ply", 0) == 0 && (text.size() == 3 || text[3] == '\n' || text[3] == '\r')) return parse_ply(text);
  std::vector<Vec3d> points;
  for_each_line(text, [&](size_t line, std::string_view view) {
    if (const size_t hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const auto toks = split_ws(view);
    if (toks.empty()) return true;
    if (toks.size() != 3)
      throw FormatError("line " + std::to_string(line) + ": expected 'x y z', got " + std::to_string(toks.size()) +
                            " fields",
                        line);
    points.push_back({parse_double(toks[0], line), parse_double(toks[1], line), parse_double(toks[2], line)});
    return true;
  });
  return points;
}

std::vector<Vec3d> load_points(const std::filesystem::path& path) { return parse_points(read_file(path)); }

Mesh parse_obj(const std::string& text) {
  Mesh mesh;
  for_each_line(text, [&](size_t line, std::string_view view) {
    if (const size_t hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const auto toks = split_ws(view);
    if (toks.empty()) return true;
    if (toks[0] == "v") {
      if (toks.size() != 4 && toks.size() != 5)
        throw FormatError("line " + std::to_string(line) + ": vertex needs 3 coordinates", line);
      mesh.vertices.push_back({parse_double(toks[1], line), parse_double(toks[2], line), parse_double(toks[3], line)});
    } else if (toks[0] == "f") {
      if (toks.size() < 4) throw FormatError("line " + std::to_string(line) + ": face needs at least 3 vertices", line);
      std::vector<uint32_t> idx;
      for (size_t t = 1; t < toks.size(); ++t) {
        const std::string_view first = toks[t].substr(0, toks[t].find('/'));
        const long long v = parse_int(first, line);
        const long long resolved = v < 0 ? (long long)mesh.vertices.size() + v : v - 1;
        if (v == 0 || resolved < 0 || resolved >= (long long)mesh.vertices.size())
          throw FormatError("line " + std::to_string(line) + ": vertex reference " + std::to_string(v) +
                                " out of range",
                            line);
        idx.push_back(uint32_t(resolved));
      }
      for (size_t t = 1; t + 1 < idx.size(); ++t) mesh.triangles.push_back({idx[0], idx[t], idx[t + 1]});
    }
    return true;
  });
  return mesh;
}

Mesh load_mesh(const std::filesystem::path& path) { return parse_obj(read_file(path)); }

std::vector<uint8_t> encode_ppm(const Image& image) {
  if (image.width == 0 || image.height == 0) throw InvalidArgument("write_ppm: image dimensions must be >= 1");
  if (image.rgb.size() != image.width * image.height * 3)
    throw InvalidArgument("write_ppm: pixel buffer does not match dimensions");
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

void write_ppm(const Image& image, const std::filesystem::path& path) { write_file(path, encode_ppm(image)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed on " + path.string());
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  out.close();
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace fvdb
