#include "fvdb/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "fvdb/build.hpp"
#include "fvdb/conv.hpp"
#include "fvdb/io.hpp"
#include "fvdb/parallel.hpp"
#include "fvdb/raymarch.hpp"
#include "fvdb/workloads.hpp"

namespace fvdb {
namespace {

using Clock = std::chrono::steady_clock;

class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  uint64_t seed = 0;
  size_t threads = 0;
  bool best4of5 = false;
  std::string csv;
  int runs = 1;
};

void add_threads(CLI::App* cmd, Common& c) {
  cmd->add_option("--threads", c.threads, "Worker thread cap (default: FVDB_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
}

void add_bench_options(CLI::App* cmd, Common& c) {
  add_threads(cmd, c);
  cmd->add_option("--seed", c.seed, "Seed for every random input");
  cmd->add_option("--runs", c.runs, "Timed runs (one CSV row each)")->check(CLI::PositiveNumber);
  cmd->add_flag("--best4of5", c.best4of5, "Time each run as the mean of the best 4 of 5 repetitions");
  cmd->add_option("--csv", c.csv, "Append rows to this CSV file (stdout if omitted)");
}

// Evicts caches between repetitions by streaming over a 64 MB buffer.
void thrash_caches() {
  static std::vector<uint64_t> buffer(size_t(8) << 20, 1);
  uint64_t sum = 0;
  for (size_t i = 0; i < buffer.size(); i += 8) sum += buffer[i]++;
  volatile uint64_t sink = sum;
  (void)sink;
}

// Wall time of one run; with best4of5, the mean of the fastest 4 of 5.
template <class Fn>
double time_run(bool best4of5, Fn&& fn) {
  std::vector<double> times;
  for (int rep = 0; rep < (best4of5 ? 5 : 1); ++rep) {
    thrash_caches();
    const auto t0 = Clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  if (!best4of5) return times[0];
  std::sort(times.begin(), times.end());
  return std::accumulate(times.begin(), times.begin() + 4, 0.0) / 4.0;
}

struct BenchRow {
  std::string workload;
  std::string n, res, regime, variant, c_in, c_out;
  int run = 0;
  double wall_s = 0, throughput = 0;
  uint64_t dda_steps = 0, pad_rows = 0;
};

class CsvSink {
 public:
  CsvSink(const std::string& path, std::ostream& out) : out_(&out) {
    if (path.empty()) {
      *out_ << kBenchCsvHeader << "\n";
      return;
    }
    const bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
    if (exists) {
      std::ifstream in(path);
      std::string first;
      std::getline(in, first);
      if (first != kBenchCsvHeader)
        throw InvalidArgument("CSV file " + path + " has a different header; refusing to append");
    }
    file_.open(path, std::ios::app);
    if (!file_) throw IoError("cannot open " + path + " for appending");
    if (!exists) file_ << kBenchCsvHeader << "\n";
    out_ = &file_;
  }

  void write(const BenchRow& r) {
    std::ostringstream line;
    line << r.workload << ',' << r.n << ',' << r.res << ',' << r.regime << ',' << r.variant << ',' << r.c_in << ','
         << r.c_out << ',' << thread_count() << ',' << r.run << ',' << std::setprecision(9) << r.wall_s << ','
         << r.throughput << ',' << peak_memory_bytes() << ',' << r.dda_steps << ',' << r.pad_rows << '\n';
    *out_ << line.str();
    out_->flush();
  }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

std::string format_coord(const Coord& c) {
  std::ostringstream os;
  os << c;
  return os.str();
}

// ---- build / inspect ------------------------------------------------------

struct BuildArgs {
  std::string points, mesh, out, name;
  double voxel_size = 0;
  std::vector<double> origin{0, 0, 0};
  Common common;
};

int cmd_build(const BuildArgs& a, std::ostream& out) {
  VoxelTransform xf;
  xf.voxel_size = {a.voxel_size, a.voxel_size, a.voxel_size};
  xf.origin = {a.origin[0], a.origin[1], a.origin[2]};
  if (!xf.valid()) throw InvalidArgument("--voxel-size must be positive and finite");
  IndexGrid grid;
  if (!a.points.empty()) {
    const std::vector<Vec3d> pts = load_points(a.points);
    grid = build_from_points(pts, xf).grid;
  } else {
    const Mesh mesh = load_mesh(a.mesh);
    grid = build_from_mesh(mesh.vertices, mesh.triangles, xf);
  }
  grid.set_name(a.name);
  const uint64_t bytes = save_grid(grid, a.out);
  out << "voxels: " << grid.active_voxel_count() << "\n"
      << "bytes: " << bytes << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const IndexGrid grid = load_grid(path);
  const GridCounts& n = grid.counts();
  const auto& xf = grid.transform();
  out << "name: " << grid.name() << "\n"
      << "voxels: " << n.active_voxels << "\n"
      << "leaves: " << n.leaf << "\n"
      << "lower_nodes: " << n.lower << "\n"
      << "upper_nodes: " << n.upper << "\n"
      << std::setprecision(17) << "voxel_size: " << xf.voxel_size[0] << " " << xf.voxel_size[1] << " "
      << xf.voxel_size[2] << "\n"
      << "origin: " << xf.origin[0] << " " << xf.origin[1] << " " << xf.origin[2] << "\n";
  if (grid.empty()) {
    out << "bbox: empty\n";
  } else {
    const CoordBBox box = grid.active_bbox();
    out << "bbox: " << format_coord(box.min) << " " << format_coord(box.max) << "\n";
  }
  out << "leaf_occupancy: " << std::setprecision(4) << mean_leaf_occupancy(grid) << "\n"
      << "serialized_bytes: " << std::filesystem::file_size(path) << "\n";
  return kExitOk;
}

// ---- render ---------------------------------------------------------------

struct RenderArgs {
  std::string grid, shape, mode = "levelset", out;
  int res = 256;
  size_t width = 64, height = 64;
  double density = 0;
  Common common;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  const std::vector<Ray> rays = default_camera(a.width, a.height);
  Image image;
  if (a.mode == "levelset") {
    if (a.shape != "sphere-shell") throw InvalidArgument("levelset rendering needs --shape sphere-shell");
    const SphereShell s = make_sphere_shell(a.res);
    std::vector<std::optional<LevelSetHit>> hits;
    image = render_levelset(s.grid, s.phi, rays, a.width, a.height, &hits);
    out << "hits: " << std::count_if(hits.begin(), hits.end(), [](const auto& h) { return h.has_value(); }) << "\n";
  } else {
    IndexGrid grid;
    if (!a.grid.empty()) grid = load_grid(a.grid);
    else if (a.shape == "sphere-shell") grid = make_sphere_shell(a.res).grid;
    else throw InvalidArgument("occupancy rendering needs --grid or --shape sphere-shell");
    const double vs = grid.transform().voxel_size[0];
    const double density = a.density > 0 ? a.density : 0.5 / vs;
    image = render_occupancy(grid, rays, a.width, a.height, density, 0.5 * vs);
  }
  write_ppm(image, a.out);
  out << "wrote: " << a.out << "\n";
  return kExitOk;
}

// ---- conv -------------------------------------------------------------------

struct ConvArgs {
  std::string variant = "igemm", regime = "shell", precision = "f32";
  size_t voxels = 2000, c_in = 8, c_out = 16;
  bool check = false;
  Common common;
};

template <class T>
int run_conv(const ConvArgs& a, ConvVariant variant, const IndexGrid& grid, std::ostream& out) {
  const Tensor<T> x = random_features<T>(grid.active_voxel_count(), a.c_in, a.common.seed + 1);
  const ConvKernel<T> k = random_kernel<T>(a.c_out, a.c_in, a.common.seed + 2);
  ConvCounters counters;
  const auto t0 = Clock::now();
  const Tensor<T> y = conv(grid, x, k, grid, variant, 1, &counters);
  const double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  out << "variant: " << to_string(variant) << "\n"
      << "voxels: " << grid.active_voxel_count() << "\n"
      << "leaf_occupancy: " << std::setprecision(4) << mean_leaf_occupancy(grid) << "\n"
      << "wall_s: " << std::setprecision(6) << wall << "\n"
      << "useful_macs: " << counters.useful_macs << "\n"
      << "executed_macs: " << counters.executed_macs << "\n"
      << "padded_rows: " << counters.padded_rows << "\n"
      << "max_padded_rows: " << counters.max_padded_rows << "\n";
  if (!a.check) return kExitOk;
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-10;
  const double err = relative_error(y, dense_conv_reference(grid, x, k, grid));
  out << "max_rel_err: " << std::setprecision(3) << std::scientific << err << std::defaultfloat << "\n";
  if (!(err < tol)) throw CheckFailure("relative error " + std::to_string(err) + " exceeds " + std::to_string(tol));
  if (counters.max_padded_rows > kLggsPad - 1)
    throw CheckFailure("LGGS padding " + std::to_string(counters.max_padded_rows) + " exceeds 15 rows");
  out << "check: pass\n";
  return kExitOk;
}

int cmd_conv(const ConvArgs& a, std::ostream& out) {
  const auto regime = parse_regime(a.regime);
  if (!regime) throw InvalidArgument("unknown regime " + a.regime);
  const IndexGrid grid = regime_grid(*regime, a.voxels, a.common.seed);
  ConvVariant variant;
  if (a.variant == "auto") {
    variant = choose_variant(grid, a.c_in, a.c_out);
  } else if (const auto v = parse_conv_variant(a.variant)) {
    variant = *v;
  } else {
    throw InvalidArgument("unknown variant " + a.variant);
  }
  return a.precision == "f64" ? run_conv<double>(a, variant, grid, out) : run_conv<float>(a, variant, grid, out);
}

// ---- benchmarks -----------------------------------------------------------

struct BenchBuildArgs {
  std::vector<size_t> counts{1000, 100000, 1000000};
  std::string distribution = "uniform";
  Common common;
};

int cmd_bench_build(const BenchBuildArgs& a, std::ostream& out) {
  CsvSink csv(a.common.csv, out);
  for (size_t n : a.counts) {
    for (int run = 0; run < a.common.runs; ++run) {
      const uint64_t seed = a.common.seed + uint64_t(run);
      std::vector<Coord> coords;
      if (a.distribution == "normal") {
        // Normally distributed points at 1/64 voxel size, as a clustered cloud.
        VoxelTransform xf;
        const std::vector<Vec3d> pts = normal_points(n, 1.0, seed);
        coords.reserve(n);
        for (const auto& p : pts) coords.push_back(Coord{int32_t(std::floor(p[0] * 64 + 0.5)),
                                                         int32_t(std::floor(p[1] * 64 + 0.5)),
                                                         int32_t(std::floor(p[2] * 64 + 0.5))});
      } else {
        coords = random_coords(n, 1 << 20, seed);
      }
      uint64_t voxels = 0;
      const double wall = time_run(a.common.best4of5, [&] { voxels = build_from_coords(coords).grid.active_voxel_count(); });
      BenchRow row{"build", std::to_string(n), "", a.distribution, "", "", "", run, wall, double(n) / wall, 0, 0};
      csv.write(row);
      (void)voxels;
    }
  }
  return kExitOk;
}

struct BenchRaymarchArgs {
  std::string shape = "sphere-shell", mesh;
  int res = 256;
  size_t rays = 1024;
  Common common;
};

std::vector<Ray> random_rays_at(const CoordBBox& box, const VoxelTransform& xf, size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3d lo = xf.voxel_center(box.min), hi = xf.voxel_center(box.max);
  const Vec3d mid{(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  double extent = 0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
  std::vector<Ray> rays(n);
  for (auto& r : rays) {
    // Origins on a sphere around the grid, aimed at a random interior point.
    const double z = 2 * unit(rng) - 1, phi = 2 * M_PI * unit(rng), s = std::sqrt(1 - z * z);
    r.origin = {mid[0] + extent * s * std::cos(phi), mid[1] + extent * s * std::sin(phi), mid[2] + extent * z};
    Vec3d target;
    for (int a = 0; a < 3; ++a) target[a] = lo[a] + unit(rng) * (hi[a] - lo[a]);
    r.direction = {target[0] - r.origin[0], target[1] - r.origin[1], target[2] - r.origin[2]};
  }
  return rays;
}

int cmd_bench_raymarch(const BenchRaymarchArgs& a, std::ostream& out) {
  IndexGrid grid;
  std::string res = std::to_string(a.res);
  if (!a.mesh.empty()) {
    const Mesh mesh = load_mesh(a.mesh);
    VoxelTransform xf;
    CoordBBox box;
    Vec3d lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (const auto& v : mesh.vertices)
      for (int d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], v[d]);
        hi[d] = std::max(hi[d], v[d]);
      }
    const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-12});
    xf.voxel_size = {extent / a.res, extent / a.res, extent / a.res};
    grid = dilate(build_from_mesh(mesh.vertices, mesh.triangles, xf), 1);
    (void)box;
  } else if (a.shape == "sphere-shell") {
    grid = make_sphere_shell(a.res).grid;
  } else {
    throw InvalidArgument("unknown shape " + a.shape);
  }
  if (grid.empty()) throw InvalidArgument("bench-raymarch: grid is empty");
  const CoordBBox box = grid.active_bbox();
  CsvSink csv(a.common.csv, out);
  for (int run = 0; run < a.common.runs; ++run) {
    const std::vector<Ray> rays = random_rays_at(box, grid.transform(), a.rays, a.common.seed + uint64_t(run));
    VoxelHits hits;
    const double wall = time_run(a.common.best4of5, [&] { hits = hdda_voxels(grid, rays); });
    const TraversalCounters& c = hits.counters;
    BenchRow row{"raymarch", std::to_string(a.rays), res, a.mesh.empty() ? a.shape : "mesh", "", "", "", run, wall,
                 double(a.rays) / wall, c.tile_cells + c.lower_cells + c.leaf_cells + c.voxel_cells, 0};
    csv.write(row);
  }
  return kExitOk;
}

struct BenchConvArgs {
  std::vector<std::string> regimes{"lidar", "shell", "volumetric"};
  std::vector<std::string> variants{"igemm", "leaf", "brick", "lggs"};
  std::vector<std::string> depths{"8:16", "32:32", "128:128"};
  size_t voxels = 20000;
  Common common;
};

int cmd_bench_conv(const BenchConvArgs& a, std::ostream& out) {
  std::vector<std::pair<size_t, size_t>> depths;
  for (const auto& d : a.depths) {
    const size_t colon = d.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(d);
      depths.emplace_back(std::stoul(d.substr(0, colon)), std::stoul(d.substr(colon + 1)));
    } catch (const std::exception&) {
      throw InvalidArgument("depth '" + d + "' is not of the form CIN:COUT");
    }
  }
  CsvSink csv(a.common.csv, out);
  for (const auto& rname : a.regimes) {
    const auto regime = parse_regime(rname);
    if (!regime) throw InvalidArgument("unknown regime " + rname);
    const IndexGrid grid = regime_grid(*regime, a.voxels, a.common.seed);
    for (const auto& [ci, co] : depths) {
      const Tensor<float> x = random_features<float>(grid.active_voxel_count(), ci, a.common.seed + 1);
      const ConvKernel<float> k = random_kernel<float>(co, ci, a.common.seed + 2);
      for (const auto& vname : a.variants) {
        const auto variant = vname == "auto" ? std::optional(choose_variant(grid, ci, co)) : parse_conv_variant(vname);
        if (!variant) throw InvalidArgument("unknown variant " + vname);
        for (int run = 0; run < a.common.runs; ++run) {
          ConvCounters counters;
          const double wall = time_run(a.common.best4of5, [&] {
            counters = {};
            conv(grid, x, k, grid, *variant, 1, &counters);
          });
          BenchRow row{"conv", std::to_string(grid.active_voxel_count()), "", rname, to_string(*variant),
                       std::to_string(ci), std::to_string(co), run, wall, 2.0 * double(counters.useful_macs) / wall,
                       0, counters.padded_rows};
          csv.write(row);
        }
      }
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse voxel grid engine: build, inspect, render, convolve and benchmark", "fvdb"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* c_build = app.add_subcommand("build", "Build a grid from points or a mesh and save it");
  auto* src = c_build->add_option_group("source");
  src->add_option("--points", build.points, "xyz or ASCII PLY point file");
  src->add_option("--mesh", build.mesh, "OBJ mesh file");
  src->require_option(1);
  c_build->add_option("--voxel-size", build.voxel_size, "Voxel edge length")->required();
  c_build->add_option("--origin", build.origin, "World position of voxel (0,0,0)")->expected(3);
  c_build->add_option("--name", build.name, "Grid name stored in the file");
  c_build->add_option("--out", build.out, "Output grid file")->required();
  add_threads(c_build, build.common);

  std::string inspect_path;
  auto* c_inspect = app.add_subcommand("inspect", "Print counts, bounding box and file size of a grid");
  c_inspect->add_option("grid", inspect_path, "Grid file")->required();

  RenderArgs render;
  auto* c_render = app.add_subcommand("render", "Ray-march a grid into a PPM image");
  c_render->add_option("--grid", render.grid, "Grid file (occupancy mode)");
  c_render->add_option("--shape", render.shape, "Analytic shape: sphere-shell");
  c_render->add_option("--res", render.res, "Shape resolution")->check(CLI::Range(8, 4096));
  c_render->add_option("--mode", render.mode, "levelset or occupancy")->check(CLI::IsMember({"levelset", "occupancy"}));
  c_render->add_option("--width", render.width, "Image width")->check(CLI::PositiveNumber);
  c_render->add_option("--height", render.height, "Image height")->check(CLI::PositiveNumber);
  c_render->add_option("--density", render.density, "Occupancy density per world unit");
  c_render->add_option("--out", render.out, "Output PPM")->required();
  add_threads(c_render, render.common);

  ConvArgs convargs;
  auto* c_conv = app.add_subcommand("conv", "Run one convolution variant on a synthetic grid");
  c_conv->add_option("--variant", convargs.variant, "igemm, leaf, brick, lggs or auto")
      ->check(CLI::IsMember({"igemm", "leaf", "brick", "lggs", "auto"}));
  c_conv->add_option("--regime", convargs.regime, "lidar, shell or volumetric")
      ->check(CLI::IsMember({"lidar", "shell", "volumetric"}));
  c_conv->add_option("--voxels", convargs.voxels, "Approximate active voxel count")->check(CLI::PositiveNumber);
  c_conv->add_option("--cin", convargs.c_in, "Input channels")->check(CLI::PositiveNumber);
  c_conv->add_option("--cout", convargs.c_out, "Output channels")->check(CLI::PositiveNumber);
  c_conv->add_option("--precision", convargs.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  c_conv->add_flag("--check", convargs.check, "Verify against the dense reference");
  c_conv->add_option("--seed", convargs.common.seed, "Seed for grid, features and weights");
  add_threads(c_conv, convargs.common);

  BenchBuildArgs bbuild;
  auto* c_bbuild = app.add_subcommand("bench-build", "Time grid construction from random coordinates");
  c_bbuild->add_option("--counts", bbuild.counts, "Coordinate counts")->delimiter(',');
  c_bbuild->add_option("--distribution", bbuild.distribution, "uniform or normal")
      ->check(CLI::IsMember({"uniform", "normal"}));
  add_bench_options(c_bbuild, bbuild.common);

  BenchRaymarchArgs bray;
  auto* c_bray = app.add_subcommand("bench-raymarch", "Time HDDA voxel traversal");
  c_bray->add_option("--shape", bray.shape, "sphere-shell")->check(CLI::IsMember({"sphere-shell"}));
  c_bray->add_option("--mesh", bray.mesh, "OBJ mesh instead of the analytic shape");
  c_bray->add_option("--res", bray.res, "Grid resolution")->check(CLI::Range(8, 4096));
  c_bray->add_option("--rays", bray.rays, "Rays per run")->check(CLI::PositiveNumber);
  add_bench_options(c_bray, bray.common);

  BenchConvArgs bconv;
  auto* c_bconv = app.add_subcommand("bench-conv", "Time convolution variants across sparsity regimes");
  c_bconv->add_option("--regimes", bconv.regimes, "Regimes")->delimiter(',');
  c_bconv->add_option("--variants", bconv.variants, "Variants")->delimiter(',');
  c_bconv->add_option("--depths", bconv.depths, "CIN:COUT pairs")->delimiter(',');
  c_bconv->add_option("--voxels", bconv.voxels, "Approximate active voxel count")->check(CLI::PositiveNumber);
  add_bench_options(c_bconv, bconv.common);

  std::vector<std::string> argv_store{"fvdb"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const size_t saved_threads = thread_count();
  auto apply_threads = [](size_t n) {
    if (n) set_thread_count(n);
  };
  int code = kExitOk;
  try {
    if (*c_build) apply_threads(build.common.threads), code = cmd_build(build, out);
    else if (*c_inspect) code = cmd_inspect(inspect_path, out);
    else if (*c_render) apply_threads(render.common.threads), code = cmd_render(render, out);
    else if (*c_conv) apply_threads(convargs.common.threads), code = cmd_conv(convargs, out);
    else if (*c_bbuild) apply_threads(bbuild.common.threads), code = cmd_bench_build(bbuild, out);
    else if (*c_bray) apply_threads(bray.common.threads), code = cmd_bench_raymarch(bray, out);
    else if (*c_bconv) apply_threads(bconv.common.threads), code = cmd_bench_conv(bconv, out);
  } catch (const CheckFailure& e) {
    err << "check failed: " << e.what() << "\n";
    code = kExitCheck;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    code = kExitData;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    code = kExitData;
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    code = kExitData;
  }
  set_thread_count(saved_threads);
  return code;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace fvdb
