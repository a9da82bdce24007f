#include "cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>
#include <thread>

#include <nlohmann/json.hpp>

#include "xctlab/charts.hpp"
#include "xctlab/error.hpp"
#include "xctlab/fiber_extraction.hpp"
#include "xctlab/phantom.hpp"
#include "xctlab/render.hpp"
#include "xctlab/service.hpp"
#include "xctlab/tracking.hpp"

namespace xct::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_interrupted{false};

/// Writes JSON to --out when given, else to stdout.
void emit_json(const json& j, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_file_text(out_path, j.dump(2) + "\n");
  }
}

json record_json(const FiberRecord& r) {
  json j;
  for (std::size_t c = 0; c < kFiberColumnCount; ++c) {
    const auto& info = fiber_columns()[c];
    const double v = field_value(r, c);
    if (info.integral) {
      j[std::string(info.name)] = static_cast<std::int64_t>(v);
    } else {
      j[std::string(info.name)] = std::isfinite(v) ? json(v) : json(nullptr);
    }
  }
  return j;
}

json detection_json(const Detection& d) {
  json corners = json::array();
  for (const auto& c : d.corners) corners.push_back({c.x, c.y});
  return {{"id", d.id},
          {"corners", corners},
          {"pose", pose_to_json(d.pose)},
          {"bit_errors", d.bit_errors},
          {"reprojection_rms", d.reprojection_rms}};
}

MarkerDictionary load_dictionary(const std::string& path) {
  if (path.empty()) return MarkerDictionary::standard();
  return parse_marker_dictionary(read_file_text(path));
}

Volume load_input_volume(const std::string& raw, const std::string& meta) {
  return meta.empty() ? load_volume(raw) : load_volume(raw, meta);
}

std::array<double, 3> triple(const std::vector<double>& v, const char* what) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw Error(ErrorCode::InvalidArgument, std::string(what) + " takes 1 or 3 comma-separated values");
}

void write_png_file(const std::string& path, const ImageRGBA& img) { write_file_bytes(path, encode_png(img)); }

// ---------------------------------------------------------------- extract

struct ExtractArgs {
  std::string volume, meta, out;
  std::optional<double> sigma, threshold, step, min_length, max_angle, suppression;
  bool json = false;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  const Volume vol = load_input_volume(a.volume, a.meta);
  ExtractionConfig cfg = ExtractionConfig::for_spacing(vol.meta().spacing);
  if (a.sigma) {
    cfg.sigma = *a.sigma;
    if (!a.suppression) cfg.seed_suppression_radius = 2.0 * cfg.sigma;
  }
  if (a.threshold) cfg.ridge_threshold = *a.threshold;
  if (a.step) cfg.step = *a.step;
  if (a.min_length) cfg.min_length = *a.min_length;
  if (a.max_angle) cfg.max_angle = *a.max_angle;
  if (a.suppression) cfg.seed_suppression_radius = *a.suppression;
  cfg.validate();
  const FiberTable table = extract_fibers(vol, cfg);
  if (!a.out.empty()) save_fiber_table(table, a.out);
  if (a.json) {
    json records = json::array();
    for (const auto& r : table.records()) records.push_back(record_json(r));
    out << json{{"command", "extract"},
                {"input", a.volume},
                {"output", a.out.empty() ? json(nullptr) : json(a.out)},
                {"fibers", table.size()},
                {"config",
                 {{"sigma", cfg.sigma},
                  {"ridge_threshold", cfg.ridge_threshold},
                  {"step", cfg.step},
                  {"min_length", cfg.min_length},
                  {"max_angle", cfg.max_angle},
                  {"seed_suppression_radius", cfg.seed_suppression_radius}}},
                {"records", records}}
               .dump(2)
        << "\n";
  } else if (a.out.empty()) {
    out << write_csv(table);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string volume, meta, out, mode = "mip", tf;
  int width = 256, height = 256;
  double az = 30.0, el = 20.0, zoom = 1.0, fov = 40.0, step = 0.0;
  std::optional<double> dist;
  bool json = false;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  const Volume vol = load_input_volume(a.volume, a.meta);
  const auto& meta = vol.meta();
  Vec3 center;
  Vec3 extent;
  for (int i = 0; i < 3; ++i) {
    center[i] = meta.origin[i] + 0.5 * static_cast<double>(meta.dims[i] - 1) * meta.spacing[i];
    extent[i] = static_cast<double>(meta.dims[i]) * meta.spacing[i];
  }
  if (!(a.zoom >= kMinZoom && a.zoom <= kMaxZoom)) throw Error(ErrorCode::InvalidArgument, "--zoom must be in [0.05, 50]");
  const double dist = a.dist.value_or(2.5 * norm(extent)) / a.zoom;
  const Camera cam = Camera::orbit(center, dist, a.az, a.el, a.fov);
  RenderOptions opts;
  opts.step = a.step;
  ImageRGBA img;
  if (a.mode == "mip") {
    img = render_mip(vol, cam, a.width, a.height, opts);
  } else {
    const TransferFunction tf =
        a.tf.empty() ? TransferFunction::grayscale_ramp() : parse_transfer_function(read_file_text(a.tf));
    img = render_dvr(vol, tf, cam, a.width, a.height, opts);
  }
  const auto png = encode_png(img);
  write_file_bytes(a.out, png);
  if (a.json) {
    out << json{{"command", "render"},
                {"input", a.volume},
                {"output", a.out},
                {"mode", a.mode},
                {"width", img.width},
                {"height", img.height},
                {"content_hash", fnv1a_hex(png)}}
               .dump(2)
        << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- chart

struct ChartArgs {
  std::string kind, input, meta, out, col, group, value, agg = "count", x, y, z;
  int bins = 16, classes = kDefaultBarClasses;
  std::optional<double> lo, hi, bandwidth;
  bool json = false;
};

int cmd_chart(const ChartArgs& a, std::ostream& out) {
  json result;
  auto need = [](const std::string& v, const char* flag) {
    if (v.empty()) throw Error(ErrorCode::InvalidArgument, std::string(flag) + " is required for this chart");
  };
  if (a.kind == "intensity") {
    const Volume vol = load_input_volume(a.input, a.meta);
    result = to_json(intensity_histogram(vol, a.bins, a.lo, a.hi));
  } else {
    const FiberTable table = load_fiber_table(a.input);
    if (a.kind == "histogram") {
      need(a.col, "--col");
      result = to_json(histogram(column(table, a.col), HistogramSpec{a.bins, a.lo, a.hi}));
    } else if (a.kind == "density") {
      need(a.col, "--col");
      result = to_json(density(column(table, a.col), a.bandwidth));
    } else if (a.kind == "bar") {
      need(a.group, "--group");
      result = to_json(bar_aggregate(table, a.group, a.value.empty() ? a.group : a.value, parse_aggregate(a.agg),
                                     a.classes));
    } else {
      need(a.x, "--x");
      need(a.y, "--y");
      need(a.z, "--z");
      result = to_json(scatter3(table, a.x, a.y, a.z));
    }
  }
  emit_json(a.json ? json{{"command", "chart"}, {"kind", a.kind}, {"input", a.input}, {"result", result}} : result,
            a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------- detect

struct DetectArgs {
  std::string frame, dict, out;
  std::optional<double> focal, cx, cy;
  bool json = false;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  const GrayImage frame = load_frame(a.frame);
  CameraIntrinsics intr = CameraIntrinsics::for_frame(frame.width, frame.height, a.focal.value_or(1600.0));
  if (a.cx) intr.cx = *a.cx;
  if (a.cy) intr.cy = *a.cy;
  const auto dets = detect_markers(frame, intr, load_dictionary(a.dict));
  json list = json::array();
  for (const auto& d : dets) list.push_back(detection_json(d));
  json report{{"command", "detect"},
              {"input", a.frame},
              {"width", frame.width},
              {"height", frame.height},
              {"intrinsics", {{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx}, {"cy", intr.cy}}},
              {"detections", list}};
  emit_json(report, a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  std::string out, truth, dtype = "uint8", dict;
  int cylinders = 20, table = 0;
  std::vector<std::int64_t> dims{128, 128, 128};
  std::vector<double> spacing{1.0};
  double radius_min = 2.0, radius_max = 4.0, length_min = 20.0, length_max = 60.0;
  double foreground = 200.0, background = 20.0, noise = 0.0;
  std::uint64_t seed = 1;
  // marker frames
  std::vector<int> markers;
  double distance = 400.0, tilt = 0.0, spin = 0.0, focal = 1600.0;
  int width = 1280, height = 960;
  bool json = false;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  json report{{"command", "phantom"}, {"seed", a.seed}};
  if (!a.markers.empty()) {
    const MarkerDictionary dict = load_dictionary(a.dict);
    const CameraIntrinsics intr = CameraIntrinsics::for_frame(a.width, a.height, a.focal);
    std::vector<MarkerPlacement> placements;
    const double pitch = 1.6 * dict.at(a.markers.front()).side_mm;
    for (std::size_t i = 0; i < a.markers.size(); ++i) {
      MarkerPlacement p{a.markers[i], {}};
      p.pose.rotation = Quat::from_axis_angle({1, 0, 0}, deg_to_rad(a.tilt)) *
                        Quat::from_axis_angle({0, 0, 1}, deg_to_rad(a.spin));
      p.pose.translation = {(static_cast<double>(i) - 0.5 * static_cast<double>(a.markers.size() - 1)) * pitch, 0.0,
                            a.distance};
      placements.push_back(p);
    }
    SyntheticFrameOptions fo;
    fo.width = a.width;
    fo.height = a.height;
    const GrayImage frame = render_marker_frame(placements, dict, intr, fo);
    const bool pgm = fs::path(a.out).extension() == ".pgm";
    write_file_bytes(a.out, pgm ? encode_pgm(frame) : encode_png(frame));
    json truth = json::array();
    for (const auto& p : placements) {
      json corners = json::array();
      for (const auto& c : project_marker(p, dict.at(p.id).side_mm, intr)) corners.push_back({c.x, c.y});
      truth.push_back({{"id", p.id}, {"pose", pose_to_json(p.pose)}, {"corners", corners}});
    }
    report.update({{"mode", "frame"}, {"frame", a.out}, {"width", a.width}, {"height", a.height}, {"markers", truth}});
  } else if (a.table > 0) {
    Rng rng(a.seed);
    const FiberTable table = random_fiber_table(rng, a.table, {static_cast<double>(a.dims[0]),
                                                              static_cast<double>(a.dims[1]),
                                                              static_cast<double>(a.dims[2])});
    save_fiber_table(table, a.out);
    report.update({{"mode", "table"}, {"table", a.out}, {"rows", table.size()}});
  } else {
    VolumeMeta meta;
    if (a.dims.size() != 3) throw Error(ErrorCode::InvalidArgument, "--dims takes 3 comma-separated values");
    meta.dims = {a.dims[0], a.dims[1], a.dims[2]};
    meta.spacing = triple(a.spacing, "--spacing");
    meta.dtype = a.dtype == "uint16" ? DType::UInt16 : (a.dtype == "float32" ? DType::Float32 : DType::UInt8);
    Rng rng(a.seed);
    RandomCylinderOptions co;
    co.count = a.cylinders;
    co.radius_min = a.radius_min;
    co.radius_max = a.radius_max;
    co.length_min = a.length_min;
    co.length_max = a.length_max;
    const auto cylinders = random_cylinders(rng, meta, co);
    PhantomOptions po;
    po.foreground = a.foreground;
    po.background = a.background;
    po.noise_sigma = a.noise;
    po.seed = a.seed;
    const Volume vol = render_phantom(meta, cylinders, po);
    const fs::path raw(a.out);
    const fs::path meta_path = default_meta_path(raw);
    save_volume(vol, raw, meta_path);
    const fs::path truth = a.truth.empty() ? fs::path(raw).replace_extension(".truth.csv") : fs::path(a.truth);
    save_fiber_table(cylinder_table(cylinders), truth);
    report.update({{"mode", "volume"},
                   {"volume", raw.string()},
                   {"meta", meta_path.string()},
                   {"truth", truth.string()},
                   {"dims", meta.dims},
                   {"dtype", std::string(to_string(meta.dtype))},
                   {"cylinders", cylinders.size()}});
  }
  if (a.json) out << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string registry, volume, fibers, dict, host = "127.0.0.1", workspace_dir;
  std::vector<int> markers;
  int port = 8080;
  bool extract = false;
};

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  Catalog catalog;
  if (!a.registry.empty()) {
    catalog = load_catalog(a.registry);
  } else if (!a.volume.empty()) {
    json entry{{"id", fs::path(a.volume).stem().string()}, {"volume", fs::absolute(a.volume).string()},
               {"markers", a.markers}, {"extract", a.extract}};
    if (!a.fibers.empty()) entry["fibers"] = fs::absolute(a.fibers).string();
    catalog = parse_catalog(json{{"datasets", json::array({entry})}}, fs::current_path());
  } else {
    throw Error(ErrorCode::InvalidArgument, "serve needs --registry or --volume");
  }
  MarkerDictionary dict = !a.dict.empty() ? load_dictionary(a.dict)
                          : catalog.dictionary_path ? parse_marker_dictionary(read_file_text(*catalog.dictionary_path))
                                                    : MarkerDictionary::standard();
  ServiceOptions so;
  if (!a.workspace_dir.empty()) so.workspace_dir = a.workspace_dir;
  Service service(std::move(catalog), std::move(dict), so);
  HttpServer server(service);
  const int port = server.bind(a.host, a.port);
  if (port < 0) {
    err << "error: cannot bind " << a.host << ":" << a.port << "\n";
    return kExitUser;
  }
  out << "listening on http://" << a.host << ":" << port << std::endl;
  g_interrupted = false;
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  std::jthread watcher([&server](std::stop_token st) {
    while (!st.stop_requested() && !g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.listen();
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"xctlab: XCT fiber analysis, rendering, charts and marker tracking"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Extract fibers from a RAW volume into a CSV table");
  extract->add_option("volume", ex.volume, "RAW volume")->required()->check(CLI::ExistingFile);
  extract->add_option("--meta", ex.meta, "Metadata sidecar (default: <volume>.meta)")->check(CLI::ExistingFile);
  extract->add_option("-o,--out", ex.out, "Output CSV (default: stdout)");
  extract->add_option("--sigma", ex.sigma, "Gaussian scale, voxels");
  extract->add_option("--threshold", ex.threshold, "Ridge threshold on tubularity");
  extract->add_option("--step", ex.step, "Tracing step, voxels");
  extract->add_option("--min-length", ex.min_length, "Minimum fiber length, mm");
  extract->add_option("--max-angle", ex.max_angle, "Maximum turn per step, degrees");
  extract->add_option("--suppression", ex.suppression, "Seed suppression radius, voxels");
  extract->add_flag("--json", ex.json, "Print a JSON report");

  RenderArgs rn;
  auto* render = app.add_subcommand("render", "Render a volume to PNG (orbit camera around its centre)");
  render->add_option("volume", rn.volume, "RAW volume")->required()->check(CLI::ExistingFile);
  render->add_option("--meta", rn.meta, "Metadata sidecar")->check(CLI::ExistingFile);
  render->add_option("-o,--out", rn.out, "Output PNG")->required();
  render->add_option("--mode", rn.mode, "mip or dvr")->check(CLI::IsMember({"mip", "dvr"}));
  render->add_option("--tf", rn.tf, "Transfer function JSON file (dvr)")->check(CLI::ExistingFile);
  render->add_option("--width", rn.width)->check(CLI::Range(1, 8192));
  render->add_option("--height", rn.height)->check(CLI::Range(1, 8192));
  render->add_option("--az", rn.az, "Azimuth, degrees");
  render->add_option("--el", rn.el, "Elevation, degrees");
  render->add_option("--dist", rn.dist, "Camera distance, mm (default 2.5 volume diagonals)");
  render->add_option("--zoom", rn.zoom, "Zoom factor dividing the distance");
  render->add_option("--fov", rn.fov, "Vertical field of view, degrees")->check(CLI::Range(0.01, 179.99));
  render->add_option("--step", rn.step, "Sample step, mm (default half the smallest spacing)");
  render->add_flag("--json", rn.json, "Print a JSON report");

  ChartArgs ch;
  auto* chart = app.add_subcommand("chart", "Compute chart data as JSON");
  chart->add_option("kind", ch.kind, "histogram, density, bar, scatter3 or intensity")
      ->required()
      ->check(CLI::IsMember({"histogram", "density", "bar", "scatter3", "intensity"}));
  chart->add_option("input", ch.input, "Fiber CSV (RAW volume for intensity)")->required()->check(CLI::ExistingFile);
  chart->add_option("--meta", ch.meta, "Metadata sidecar (intensity)")->check(CLI::ExistingFile);
  chart->add_option("-o,--out", ch.out, "Output JSON (default: stdout)");
  chart->add_option("--col", ch.col, "Column (histogram, density)");
  chart->add_option("--bins", ch.bins, "Bin count")->check(CLI::PositiveNumber);
  chart->add_option("--lo", ch.lo, "Histogram range low edge");
  chart->add_option("--hi", ch.hi, "Histogram range high edge (exclusive)");
  chart->add_option("--bandwidth", ch.bandwidth, "KDE bandwidth (default: Silverman)");
  chart->add_option("--group", ch.group, "Grouping column (bar)");
  chart->add_option("--value", ch.value, "Value column (bar)");
  chart->add_option("--agg", ch.agg, "count, mean or sum (bar)")->check(CLI::IsMember({"count", "mean", "sum"}));
  chart->add_option("--classes", ch.classes, "Class count (bar)")->check(CLI::PositiveNumber);
  chart->add_option("--x", ch.x, "X column (scatter3)");
  chart->add_option("--y", ch.y, "Y column (scatter3)");
  chart->add_option("--z", ch.z, "Z column (scatter3)");
  chart->add_flag("--json", ch.json, "Wrap the result in a report envelope");

  DetectArgs dt;
  auto* detect = app.add_subcommand("detect", "Detect square markers in a PNG/PGM frame");
  detect->add_option("frame", dt.frame, "Frame image")->required()->check(CLI::ExistingFile);
  detect->add_option("--dict", dt.dict, "Marker dictionary JSON (default: built-in)")->check(CLI::ExistingFile);
  detect->add_option("--focal", dt.focal, "Focal length, px (default 1600)")->check(CLI::PositiveNumber);
  detect->add_option("--cx", dt.cx, "Principal point x, px");
  detect->add_option("--cy", dt.cy, "Principal point y, px");
  detect->add_option("-o,--out", dt.out, "Output JSON (default: stdout)");
  detect->add_flag("--json", dt.json, "Accepted for symmetry; output is always JSON");

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "Synthesize test data: cylinder volumes, fiber tables, marker frames");
  phantom->add_option("-o,--out", ph.out, "Output RAW, CSV (--table) or PNG/PGM (--marker)")->required();
  phantom->add_option("--truth", ph.truth, "Ground-truth CSV (default: <out>.truth.csv)");
  phantom->add_option("--cylinders", ph.cylinders, "Cylinder count")->check(CLI::NonNegativeNumber);
  phantom->add_option("--dims", ph.dims, "Volume dimensions x,y,z")->delimiter(',')->expected(3);
  phantom->add_option("--spacing", ph.spacing, "Voxel spacing, mm (1 or 3 values)")->delimiter(',');
  phantom->add_option("--dtype", ph.dtype)->check(CLI::IsMember({"uint8", "uint16", "float32"}));
  phantom->add_option("--radius-min", ph.radius_min, "voxels");
  phantom->add_option("--radius-max", ph.radius_max, "voxels");
  phantom->add_option("--length-min", ph.length_min, "voxels");
  phantom->add_option("--length-max", ph.length_max, "voxels");
  phantom->add_option("--foreground", ph.foreground, "Fiber intensity");
  phantom->add_option("--background", ph.background, "Matrix intensity");
  phantom->add_option("--noise", ph.noise, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);
  phantom->add_option("--seed", ph.seed, "Random seed");
  phantom->add_option("--table", ph.table, "Write a random fiber table with this many rows instead")
      ->check(CLI::NonNegativeNumber);
  phantom->add_option("--marker", ph.markers, "Render a marker frame with these ids instead");
  phantom->add_option("--dict", ph.dict, "Marker dictionary JSON")->check(CLI::ExistingFile);
  phantom->add_option("--distance", ph.distance, "Marker distance, mm")->check(CLI::PositiveNumber);
  phantom->add_option("--tilt", ph.tilt, "Marker tilt about x, degrees");
  phantom->add_option("--spin", ph.spin, "Marker in-plane rotation, degrees");
  phantom->add_option("--focal", ph.focal, "Focal length, px")->check(CLI::PositiveNumber);
  phantom->add_option("--width", ph.width, "Frame width, px")->check(CLI::Range(32, 8192));
  phantom->add_option("--height", ph.height, "Frame height, px")->check(CLI::Range(32, 8192));
  phantom->add_flag("--json", ph.json, "Print a JSON report");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--registry", sv.registry, "Dataset registry JSON")->check(CLI::ExistingFile);
  serve->add_option("--volume", sv.volume, "Serve a single RAW volume")->check(CLI::ExistingFile);
  serve->add_option("--fibers", sv.fibers, "Fiber CSV for --volume")->check(CLI::ExistingFile);
  serve->add_option("--marker", sv.markers, "Marker ids linked to --volume");
  serve->add_flag("--extract", sv.extract, "Extract fibers on load when no CSV is given");
  serve->add_option("--dict", sv.dict, "Marker dictionary JSON")->check(CLI::ExistingFile);
  serve->add_option("--host", sv.host);
  serve->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
  serve->add_option("--workspace-dir", sv.workspace_dir, "Persist session workspaces here");

  auto* dictionary = app.add_subcommand("dictionary", "Print the built-in marker dictionary as JSON");
  int dict_count = 32;
  dictionary->add_option("--count", dict_count, "Number of markers")->check(CLI::Range(1, 64));

  std::vector<const char*> argv{"xctlab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    if (*extract) return cmd_extract(ex, out);
    if (*render) return cmd_render(rn, out);
    if (*chart) return cmd_chart(ch, out);
    if (*detect) return cmd_detect(dt, out);
    if (*phantom) return cmd_phantom(ph, out);
    if (*serve) return cmd_serve(sv, out, err);
    if (*dictionary) {
      out << format_marker_dictionary(MarkerDictionary::generate(dict_count)) << "\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUser;
}

}  // namespace xct::cli
