#include "xctlab/service.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "xctlab/charts.hpp"
#include "xctlab/error.hpp"
#include "xctlab/fiber_extraction.hpp"

namespace xct {

// ---------------------------------------------------------------- views

std::string_view to_string(ViewKind kind) {
  switch (kind) {
    case ViewKind::Volume: return "volume";
    case ViewKind::Slice: return "slice";
    case ViewKind::Histogram: return "histogram";
    case ViewKind::Scatter3: return "scatter3";
    case ViewKind::Bar: return "bar";
    case ViewKind::Density: return "density";
  }
  return "histogram";
}

ViewKind parse_view_kind(std::string_view name) {
  for (const auto k : {ViewKind::Volume, ViewKind::Slice, ViewKind::Histogram, ViewKind::Scatter3, ViewKind::Bar,
                       ViewKind::Density}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::BadParams, "unknown view kind '" + std::string(name) +
                                        "' (expected volume, slice, histogram, scatter3, bar or density)");
}

bool operator==(const View& a, const View& b) {
  return a.id == b.id && a.kind == b.kind && a.params == b.params && a.pose == b.pose;
}

namespace {

[[noreturn]] void bad_params(const std::string& message) { throw Error(ErrorCode::BadParams, message); }

std::string column_param(const nlohmann::json& params, const char* key) {
  if (!params.contains(key) || !params[key].is_string()) bad_params(std::string("'") + key + "' must name a column");
  const auto name = params[key].get<std::string>();
  if (!fiber_column_index(name)) bad_params(std::string("'") + key + "': unknown column '" + name + "'");
  return name;
}

std::int64_t int_param(const nlohmann::json& params, const char* key, std::int64_t fallback, std::int64_t min) {
  if (!params.contains(key)) return fallback;
  if (!params[key].is_number_integer()) bad_params(std::string("'") + key + "' must be an integer");
  const auto v = params[key].get<std::int64_t>();
  if (v < min) bad_params(std::string("'") + key + "' must be >= " + std::to_string(min));
  return v;
}

void reject_unknown(const nlohmann::json& params, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : params.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      bad_params("unexpected parameter '" + key + "'");
    }
  }
}

}  // namespace

nlohmann::json normalize_view_params(ViewKind kind, const nlohmann::json& params_in) {
  const nlohmann::json params = params_in.is_null() ? nlohmann::json::object() : params_in;
  if (!params.is_object()) bad_params("params must be a JSON object");
  nlohmann::json out = nlohmann::json::object();
  switch (kind) {
    case ViewKind::Histogram: {
      reject_unknown(params, {"column", "bins", "lo", "hi"});
      out["column"] = column_param(params, "column");
      out["bins"] = int_param(params, "bins", 16, 1);
      if (params.contains("lo") != params.contains("hi")) bad_params("'lo' and 'hi' must be given together");
      if (params.contains("lo")) {
        if (!params["lo"].is_number() || !params["hi"].is_number()) bad_params("'lo' and 'hi' must be numbers");
        if (!(params["lo"].get<double>() < params["hi"].get<double>())) bad_params("'lo' must be < 'hi'");
        out["lo"] = params["lo"];
        out["hi"] = params["hi"];
      }
      break;
    }
    case ViewKind::Scatter3:
      reject_unknown(params, {"x", "y", "z"});
      out["x"] = column_param(params, "x");
      out["y"] = column_param(params, "y");
      out["z"] = column_param(params, "z");
      break;
    case ViewKind::Bar: {
      reject_unknown(params, {"group", "value", "aggregate", "classes"});
      out["group"] = column_param(params, "group");
      out["value"] = params.contains("value") ? column_param(params, "value") : out["group"].get<std::string>();
      std::string agg = "count";
      if (params.contains("aggregate")) {
        if (!params["aggregate"].is_string()) bad_params("'aggregate' must be count, mean or sum");
        agg = params["aggregate"].get<std::string>();
      }
      try {
        out["aggregate"] = std::string(to_string(parse_aggregate(agg)));
      } catch (const Error& e) {
        bad_params(e.what());
      }
      if (agg != "count" && out["value"] == "id") bad_params("'id' cannot be averaged or summed");
      out["classes"] = int_param(params, "classes", kDefaultBarClasses, 1);
      break;
    }
    case ViewKind::Density:
      reject_unknown(params, {"column", "bandwidth"});
      out["column"] = column_param(params, "column");
      if (params.contains("bandwidth") && params["bandwidth"] != "auto") {
        if (!params["bandwidth"].is_number() || !(params["bandwidth"].get<double>() > 0.0)) {
          bad_params("'bandwidth' must be a number > 0 or \"auto\"");
        }
        out["bandwidth"] = params["bandwidth"];
      } else {
        out["bandwidth"] = "auto";
      }
      break;
    case ViewKind::Slice: {
      reject_unknown(params, {"axis", "index"});
      std::string axis = "z";
      if (params.contains("axis")) {
        if (!params["axis"].is_string()) bad_params("'axis' must be x, y or z");
        axis = params["axis"].get<std::string>();
      }
      if (axis != "x" && axis != "y" && axis != "z") bad_params("'axis' must be x, y or z");
      out["axis"] = axis;
      out["index"] = int_param(params, "index", 0, 0);
      break;
    }
    case ViewKind::Volume: {
      reject_unknown(params, {"mode", "tf"});
      std::string mode = "mip";
      if (params.contains("mode")) {
        if (!params["mode"].is_string()) bad_params("'mode' must be mip or dvr");
        mode = params["mode"].get<std::string>();
      }
      if (mode != "mip" && mode != "dvr") bad_params("'mode' must be mip or dvr");
      out["mode"] = mode;
      if (params.contains("tf")) {
        try {
          out["tf"] = nlohmann::json::parse(format_transfer_function(parse_transfer_function(params["tf"].dump())));
        } catch (const Error& e) {
          bad_params(std::string("'tf': ") + e.what());
        }
      }
      break;
    }
  }
  return out;
}

std::vector<ViewSpec> standard_default_views() {
  auto at = [](double x, double y) {
    Pose6DoF p;
    p.translation = {x, y, 0.0};
    return p;
  };
  return {
      {ViewKind::Histogram, {{"column", "straight_length"}, {"bins", 16}}, at(-150.0, 0.0)},
      {ViewKind::Histogram, {{"column", "curved_length"}, {"bins", 16}}, at(150.0, 0.0)},
      {ViewKind::Scatter3, {{"x", "diameter"}, {"y", "surface_area"}, {"z", "curved_length"}}, at(0.0, -150.0)},
  };
}

// ---------------------------------------------------------------- catalog

namespace {

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw Error(ErrorCode::Io, what + " not found: " + p.string());
}

std::string string_member(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
    throw Error(ErrorCode::InvalidArgument, where + ": '" + key + "' must be a non-empty string");
  }
  return j[key].get<std::string>();
}

ViewSpec view_spec_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw Error(ErrorCode::BadParams, where + ": each view needs a 'kind'");
  }
  ViewSpec v;
  v.kind = parse_view_kind(j["kind"].get<std::string>());
  v.params = normalize_view_params(v.kind, j.value("params", nlohmann::json::object()));
  if (j.contains("pose")) v.pose = pose_from_json(j["pose"]);
  return v;
}

}  // namespace

Catalog parse_catalog(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object() || !doc.contains("datasets") || !doc["datasets"].is_array()) {
    throw Error(ErrorCode::InvalidArgument, "registry needs a \"datasets\" array");
  }
  Catalog cat;
  std::map<int, std::string> claimed;
  for (const auto& d : doc["datasets"]) {
    if (!d.is_object()) throw Error(ErrorCode::InvalidArgument, "dataset entries must be objects");
    DatasetEntry e;
    e.id = string_member(d, "id", "dataset");
    const std::string where = "dataset '" + e.id + "'";
    e.display_name = d.contains("name") && d["name"].is_string() ? d["name"].get<std::string>() : e.id;
    e.volume_path = resolve_path(base_dir, string_member(d, "volume", where));
    e.meta_path = d.contains("meta") ? resolve_path(base_dir, string_member(d, "meta", where))
                                     : default_meta_path(e.volume_path);
    require_file(e.volume_path, where + " volume");
    require_file(e.meta_path, where + " metadata");
    if (d.contains("fibers")) {
      e.csv_path = resolve_path(base_dir, string_member(d, "fibers", where));
      require_file(*e.csv_path, where + " fiber table");
    }
    if (d.contains("markers")) {
      if (!d["markers"].is_array()) throw Error(ErrorCode::InvalidArgument, where + ": 'markers' must be an array");
      for (const auto& m : d["markers"]) {
        if (!m.is_number_integer()) throw Error(ErrorCode::InvalidArgument, where + ": marker ids must be integers");
        const int id = m.get<int>();
        if (const auto it = claimed.find(id); it != claimed.end()) {
          throw Error(ErrorCode::InvalidArgument,
                      "marker " + std::to_string(id) + " claimed by both '" + it->second + "' and '" + e.id + "'");
        }
        claimed[id] = e.id;
        e.marker_ids.push_back(id);
      }
    }
    if (d.contains("marker_offsets")) {
      for (const auto& [key, pose] : d["marker_offsets"].items()) {
        int id = 0;
        try {
          id = std::stoi(key);
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidArgument, where + ": marker offset key '" + key + "' is not an integer");
        }
        if (std::find(e.marker_ids.begin(), e.marker_ids.end(), id) == e.marker_ids.end()) {
          throw Error(ErrorCode::InvalidArgument, where + ": offset for marker " + key + " which it does not list");
        }
        e.marker_offsets[id] = pose_from_json(pose);
      }
    }
    if (d.contains("default_views")) {
      if (!d["default_views"].is_array()) {
        throw Error(ErrorCode::InvalidArgument, where + ": 'default_views' must be an array");
      }
      for (const auto& v : d["default_views"]) e.default_views.push_back(view_spec_from_json(v, where));
    } else {
      e.default_views = standard_default_views();
    }
    e.extract_on_load = d.value("extract", false);
    if (std::any_of(cat.datasets.begin(), cat.datasets.end(), [&](const DatasetEntry& x) { return x.id == e.id; })) {
      throw Error(ErrorCode::InvalidArgument, "duplicate dataset id '" + e.id + "'");
    }
    cat.datasets.push_back(std::move(e));
  }
  if (doc.contains("dictionary")) {
    cat.dictionary_path = resolve_path(base_dir, string_member(doc, "dictionary", "registry"));
    require_file(*cat.dictionary_path, "marker dictionary");
  }
  return cat;
}

Catalog load_catalog(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "registry " + path.string() + ": " + e.what());
  }
  return parse_catalog(doc, path.parent_path());
}

// ---------------------------------------------------------------- workspace

nlohmann::json workspace_to_json(const Workspace& ws) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : ws.views) {
    views.push_back({{"id", v.id}, {"kind", std::string(to_string(v.kind))}, {"params", v.params},
                     {"pose", pose_to_json(v.pose)}});
  }
  return {{"version", 1},
          {"active_dataset", ws.active_dataset ? nlohmann::json(*ws.active_dataset) : nlohmann::json(nullptr)},
          {"sample_pose", pose_to_json(ws.sample_pose)},
          {"next_view_id", ws.next_view_id},
          {"views", views}};
}

Workspace workspace_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) bad_params("workspace must be a JSON object");
    Workspace ws;
    if (j.contains("active_dataset") && !j["active_dataset"].is_null()) {
      ws.active_dataset = j["active_dataset"].get<std::string>();
    }
    if (j.contains("sample_pose")) ws.sample_pose = pose_from_json(j["sample_pose"]);
    std::int64_t max_id = 0;
    for (const auto& v : j.value("views", nlohmann::json::array())) {
      View view;
      view.id = v.at("id").get<std::int64_t>();
      if (view.id < 1) bad_params("view ids must be >= 1");
      view.kind = parse_view_kind(v.at("kind").get<std::string>());
      view.params = normalize_view_params(view.kind, v.value("params", nlohmann::json::object()));
      if (v.contains("pose")) view.pose = pose_from_json(v["pose"]);
      if (std::any_of(ws.views.begin(), ws.views.end(), [&](const View& o) { return o.id == view.id; })) {
        bad_params("duplicate view id " + std::to_string(view.id));
      }
      max_id = std::max(max_id, view.id);
      ws.views.push_back(std::move(view));
    }
    ws.next_view_id = std::max<std::int64_t>(j.value("next_view_id", std::int64_t{1}), max_id + 1);
    return ws;
  } catch (const nlohmann::json::exception& e) {
    bad_params(std::string("malformed workspace: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadParams) throw;
    bad_params(e.what());
  }
}

void save_workspace(const Workspace& ws, const std::filesystem::path& path) {
  write_file_text(path, workspace_to_json(ws).dump(2) + "\n");
}

Workspace load_workspace(const std::filesystem::path& path) {
  try {
    return workspace_from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    bad_params(std::string("malformed workspace: ") + e.what());
  }
}

// ---------------------------------------------------------------- events, reports

std::string_view to_string(EventType type) {
  switch (type) {
    case EventType::DatasetChanged: return "dataset-changed";
    case EventType::Pose: return "pose";
    case EventType::ViewChanged: return "view-changed";
  }
  return "pose";
}

namespace {

nlohmann::json detection_json(const Detection& d) {
  nlohmann::json corners = nlohmann::json::array();
  for (const auto& c : d.corners) corners.push_back({c.x, c.y});
  return {{"id", d.id},
          {"corners", corners},
          {"pose", pose_to_json(d.pose)},
          {"bit_errors", d.bit_errors},
          {"reprojection_rms", d.reprojection_rms}};
}

nlohmann::json event_json(const Event& e) {
  return {{"seq", e.seq}, {"type", std::string(to_string(e.type))}, {"data", e.data}};
}

nlohmann::json view_json(const View& v) {
  return {{"id", v.id}, {"kind", std::string(to_string(v.kind))}, {"params", v.params}, {"pose", pose_to_json(v.pose)}};
}

}  // namespace

nlohmann::json to_json(const FrameReport& r) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : r.detections) dets.push_back(detection_json(d));
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : r.events) events.push_back(event_json(e));
  return {{"frame", r.frame},
          {"detections", dets},
          {"used_marker", r.used_marker ? nlohmann::json(*r.used_marker) : nlohmann::json(nullptr)},
          {"dataset", r.dataset ? nlohmann::json(*r.dataset) : nlohmann::json(nullptr)},
          {"dataset_changed", r.dataset_changed},
          {"messages", r.messages},
          {"events", events}};
}

RenderMode parse_render_mode(std::string_view name) {
  if (name == "mip") return RenderMode::Mip;
  if (name == "dvr") return RenderMode::Dvr;
  throw Error(ErrorCode::BadParams, "mode must be mip or dvr, got '" + std::string(name) + "'");
}

std::string fnv1a_hex(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto b : bytes) {
    h ^= std::to_integer<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

// ---------------------------------------------------------------- service

struct Service::Session {
  std::mutex op_mutex;  // serializes mutations
  mutable std::mutex state_mutex;
  std::condition_variable cv;
  Workspace ws;
  std::shared_ptr<const LoadedDataset> loaded;
  std::deque<Event> events;
  std::int64_t next_seq = 1;
  std::int64_t frames = 0;
};

Service::Service(Catalog catalog, MarkerDictionary dictionary, ServiceOptions options)
    : catalog_(std::move(catalog)), dictionary_(std::move(dictionary)), options_(std::move(options)) {
  for (const auto& d : catalog_.datasets)
    for (const int m : d.marker_ids) registry_.link(m, d.id);
  if (options_.workspace_dir) std::filesystem::create_directories(*options_.workspace_dir);
}

Service::~Service() { shutdown(); }

void Service::shutdown() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(sessions_mutex_);
    stopping_ = true;
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  for (const auto& s : all) {
    std::lock_guard lock(s->state_mutex);
    s->cv.notify_all();
  }
}

nlohmann::json Service::list_datasets() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : catalog_.datasets) {
    const VolumeMeta meta = parse_meta(read_file_text(d.meta_path));
    out.push_back({{"id", d.id},
                   {"name", d.display_name},
                   {"markers", d.marker_ids},
                   {"dims", meta.dims},
                   {"spacing", meta.spacing},
                   {"dtype", std::string(to_string(meta.dtype))},
                   {"has_fibers", d.csv_path.has_value() || d.extract_on_load}});
  }
  return {{"datasets", out}};
}

const DatasetEntry& Service::entry(const std::string& dataset_id) const {
  for (const auto& d : catalog_.datasets)
    if (d.id == dataset_id) return d;
  throw Error(ErrorCode::UnknownDataset, "no dataset '" + dataset_id + "'");
}

std::shared_ptr<const LoadedDataset> Service::dataset(const std::string& dataset_id) const {
  const DatasetEntry& e = entry(dataset_id);
  {
    std::lock_guard lock(cache_mutex_);
    if (const auto it = cache_.find(dataset_id); it != cache_.end()) return it->second;
  }
  // Loading happens outside the cache lock so other sessions are not blocked.
  Volume volume = load_volume(e.volume_path, e.meta_path);
  FiberTable fibers;
  if (e.csv_path) {
    fibers = load_fiber_table(*e.csv_path);
  } else if (e.extract_on_load) {
    fibers = extract_fibers(volume, ExtractionConfig::for_spacing(volume.meta().spacing));
  }
  auto loaded = std::make_shared<const LoadedDataset>(LoadedDataset{e, std::move(volume), std::move(fibers)});
  std::lock_guard lock(cache_mutex_);
  return cache_.emplace(dataset_id, std::move(loaded)).first->second;
}

std::string Service::create_session() { return create_session(Workspace{}); }

std::string Service::create_session(Workspace initial) {
  auto s = std::make_shared<Session>();
  if (initial.active_dataset) s->loaded = dataset(*initial.active_dataset);
  s->ws = std::move(initial);
  std::string id;
  {
    std::lock_guard lock(sessions_mutex_);
    id = "s" + std::to_string(next_session_++);
    sessions_[id] = s;
  }
  persist(id, s->ws);
  return id;
}

bool Service::has_session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.contains(id);
}

std::shared_ptr<Service::Session> Service::session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
  return it->second;
}

void Service::persist(const std::string& id, const Workspace& ws) const {
  if (options_.workspace_dir) save_workspace(ws, *options_.workspace_dir / (id + ".json"));
}

Event& Service::push_event(Session& s, EventType type, nlohmann::json data) {
  s.events.push_back({s.next_seq++, type, std::move(data)});
  while (s.events.size() > options_.max_events) s.events.pop_front();
  s.cv.notify_all();
  return s.events.back();
}

std::vector<Event> Service::activate(const std::string& id, Session& s, const std::string& dataset_id,
                                     std::optional<int> marker) {
  auto loaded = dataset(dataset_id);
  std::vector<Event> emitted;
  Workspace snapshot;
  {
    std::lock_guard lock(s.state_mutex);
    const auto previous = s.ws.active_dataset;
    s.ws.active_dataset = dataset_id;
    s.loaded = loaded;
    emitted.push_back(push_event(s, EventType::DatasetChanged,
                                 {{"dataset", dataset_id},
                                  {"previous", previous ? nlohmann::json(*previous) : nlohmann::json(nullptr)},
                                  {"marker", marker ? nlohmann::json(*marker) : nlohmann::json(nullptr)}}));
    if (s.ws.views.empty()) {
      for (const auto& spec : loaded->entry.default_views) {
        View v{s.ws.next_view_id++, spec.kind, spec.params, spec.pose};
        s.ws.views.push_back(v);
        emitted.push_back(push_event(s, EventType::ViewChanged, {{"change", "placed"}, {"view", view_json(v)}}));
      }
    }
    snapshot = s.ws;
  }
  persist(id, snapshot);
  return emitted;
}

FrameReport Service::ingest_frame(const std::string& id, const GrayImage& frame) {
  auto s = session(id);
  std::lock_guard op(s->op_mutex);
  FrameReport report;
  std::optional<std::string> active;
  {
    std::lock_guard lock(s->state_mutex);
    report.frame = ++s->frames;
    active = s->ws.active_dataset;
  }
  report.detections = detect_markers(frame, options_.intrinsics, dictionary_);
  if (report.detections.empty()) {
    report.messages.emplace_back("no detection");
    return report;
  }
  std::vector<const Detection*> usable;
  for (const auto& d : report.detections) {
    if (registry_.contains(d.id)) {
      usable.push_back(&d);
    } else {
      report.messages.push_back("marker " + std::to_string(d.id) + " is not registered");
    }
  }
  if (usable.empty()) return report;
  // Prefer markers of the active dataset so a stray second sample does not
  // steal the session; then fewest bit errors, lowest reprojection error.
  const Detection* best = *std::min_element(usable.begin(), usable.end(), [&](const Detection* a, const Detection* b) {
    const bool aa = active && registry_.resolve(a->id) == *active;
    const bool ba = active && registry_.resolve(b->id) == *active;
    return std::make_tuple(!aa, a->bit_errors, a->reprojection_rms, a->id) <
           std::make_tuple(!ba, b->bit_errors, b->reprojection_rms, b->id);
  });
  const std::string& target = registry_.resolve(best->id);
  report.used_marker = best->id;
  report.dataset = target;
  if (!active || *active != target) {
    try {
      auto events = activate(id, *s, target, best->id);
      report.events.insert(report.events.end(), events.begin(), events.end());
      report.dataset_changed = true;
    } catch (const Error& e) {
      report.messages.push_back("failed to load dataset '" + target + "': " + e.what());
      return report;
    }
  }
  const DatasetEntry& e = entry(target);
  const auto off = e.marker_offsets.find(best->id);
  const Pose6DoF sample = compose(best->pose, off == e.marker_offsets.end() ? Pose6DoF{} : off->second);
  Workspace snapshot;
  {
    std::lock_guard lock(s->state_mutex);
    s->ws.sample_pose = sample;
    report.events.push_back(push_event(*s, EventType::Pose,
                                       {{"sample_pose", pose_to_json(sample)},
                                        {"marker", best->id},
                                        {"dataset", target},
                                        {"frame", report.frame}}));
    snapshot = s->ws;
  }
  persist(id, snapshot);
  return report;
}

std::vector<Event> Service::select_dataset(const std::string& id, const std::string& dataset_id) {
  auto s = session(id);
  std::lock_guard op(s->op_mutex);
  entry(dataset_id);
  {
    std::lock_guard lock(s->state_mutex);
    if (s->ws.active_dataset == dataset_id) return {};
  }
  return activate(id, *s, dataset_id, std::nullopt);
}

std::int64_t Service::place_view(const std::string& id, ViewKind kind, const nlohmann::json& params,
                                 const Pose6DoF& pose) {
  auto s = session(id);
  const nlohmann::json normalized = normalize_view_params(kind, params);
  try {
    pose.validate();
  } catch (const Error& e) {
    bad_params(e.what());
  }
  std::lock_guard op(s->op_mutex);
  Workspace snapshot;
  std::int64_t view_id = 0;
  {
    std::lock_guard lock(s->state_mutex);
    View v{s->ws.next_view_id++, kind, normalized, pose};
    view_id = v.id;
    s->ws.views.push_back(v);
    push_event(*s, EventType::ViewChanged, {{"change", "placed"}, {"view", view_json(v)}});
    snapshot = s->ws;
  }
  persist(id, snapshot);
  return view_id;
}

View Service::update_view(const std::string& id, std::int64_t view_id, const std::optional<Pose6DoF>& pose,
                          const std::optional<nlohmann::json>& params) {
  auto s = session(id);
  if (pose) {
    try {
      pose->validate();
    } catch (const Error& e) {
      bad_params(e.what());
    }
  }
  std::lock_guard op(s->op_mutex);
  Workspace snapshot;
  View updated;
  {
    std::lock_guard lock(s->state_mutex);
    const auto it = std::find_if(s->ws.views.begin(), s->ws.views.end(), [&](const View& v) { return v.id == view_id; });
    if (it == s->ws.views.end()) throw Error(ErrorCode::UnknownView, "no view " + std::to_string(view_id));
    if (params) it->params = normalize_view_params(it->kind, *params);
    if (pose) it->pose = *pose;
    updated = *it;
    push_event(*s, EventType::ViewChanged, {{"change", "updated"}, {"view", view_json(updated)}});
    snapshot = s->ws;
  }
  persist(id, snapshot);
  return updated;
}

void Service::remove_view(const std::string& id, std::int64_t view_id) {
  auto s = session(id);
  std::lock_guard op(s->op_mutex);
  Workspace snapshot;
  {
    std::lock_guard lock(s->state_mutex);
    const auto it = std::find_if(s->ws.views.begin(), s->ws.views.end(), [&](const View& v) { return v.id == view_id; });
    if (it == s->ws.views.end()) throw Error(ErrorCode::UnknownView, "no view " + std::to_string(view_id));
    s->ws.views.erase(it);
    push_event(*s, EventType::ViewChanged, {{"change", "removed"}, {"view_id", view_id}});
    snapshot = s->ws;
  }
  persist(id, snapshot);
}

Workspace Service::workspace(const std::string& id) const {
  auto s = session(id);
  std::lock_guard lock(s->state_mutex);
  return s->ws;
}

std::shared_ptr<const LoadedDataset> Service::active(const Session& s, Workspace* ws_out) const {
  std::lock_guard lock(s.state_mutex);
  if (!s.loaded) throw Error(ErrorCode::NoActiveDataset, "no dataset is active in this session");
  if (ws_out) *ws_out = s.ws;
  return s.loaded;
}

RenderResult Service::get_render(const std::string& id, const RenderRequest& req) const {
  auto s = session(id);
  Workspace ws;
  const auto data = active(*s, &ws);
  if (req.width < 1 || req.height < 1 || req.width > 4096 || req.height > 4096) {
    bad_params("image size must be within 1..4096");
  }
  if (!(req.zoom >= kMinZoom && req.zoom <= kMaxZoom)) bad_params("zoom must be within [0.05, 50]");
  if (!(req.fov_y_deg > 0.0 && req.fov_y_deg < 180.0)) bad_params("fov must be within (0, 180)");
  if (!(req.step >= 0.0)) bad_params("step must be >= 0");
  const Volume& vol = data->volume;
  const auto& meta = vol.meta();
  Vec3 center;
  Vec3 extent;
  for (int a = 0; a < 3; ++a) {
    center[a] = meta.origin[a] + 0.5 * static_cast<double>(meta.dims[a] - 1) * meta.spacing[a];
    extent[a] = static_cast<double>(meta.dims[a]) * meta.spacing[a];
  }
  Pose6DoF centering;
  centering.translation = -center;
  RenderOptions opts;
  opts.model = compose(ws.sample_pose, centering);
  opts.step = req.step;

  Camera cam;
  if (req.view == "orbit") {
    const double diag = norm(extent) * ws.sample_pose.scale;
    const double dist = req.distance_mm.value_or(2.5 * diag) / req.zoom;
    if (!(dist > 0.0)) bad_params("distance must be > 0");
    cam = Camera::orbit(ws.sample_pose.translation, dist, req.azimuth_deg, req.elevation_deg, req.fov_y_deg);
  } else if (req.view == "ar") {
    // The tracking camera looks down +z with y down; the render camera looks
    // down -z with y up, a half turn about x.
    cam.pose.rotation = Quat::from_axis_angle({1.0, 0.0, 0.0}, kPi);
    const auto& k = options_.intrinsics;
    cam.fov_y_deg = rad_to_deg(2.0 * std::atan((k.cy + 0.5) / k.fy));
  } else {
    bad_params("view must be orbit or ar");
  }

  ImageRGBA image;
  if (req.mode == RenderMode::Mip) {
    image = render_mip(vol, cam, req.width, req.height, opts);
  } else {
    const TransferFunction tf = req.tf.value_or(TransferFunction::grayscale_ramp());
    image = render_dvr(vol, tf, cam, req.width, req.height, opts);
  }
  RenderResult out;
  out.png = encode_png(image);
  out.content_hash = fnv1a_hex(out.png);
  out.width = image.width;
  out.height = image.height;
  return out;
}

nlohmann::json Service::get_chart(const std::string& id, std::int64_t view_id) const {
  auto s = session(id);
  Workspace ws;
  const auto data = active(*s, &ws);
  const auto it = std::find_if(ws.views.begin(), ws.views.end(), [&](const View& v) { return v.id == view_id; });
  if (it == ws.views.end()) throw Error(ErrorCode::UnknownView, "no view " + std::to_string(view_id));
  const View& v = *it;
  const auto& p = v.params;
  const FiberTable& t = data->fibers;
  nlohmann::json chart;
  try {
    switch (v.kind) {
      case ViewKind::Histogram: {
        HistogramSpec spec{p["bins"].get<int>(), std::nullopt, std::nullopt};
        if (p.contains("lo")) {
          spec.lo = p["lo"].get<double>();
          spec.hi = p["hi"].get<double>();
        }
        const auto values = column(t, p["column"].get<std::string>());
        chart = values.empty() && !spec.lo ? nlohmann::json(nullptr) : to_json(histogram(values, spec));
        break;
      }
      case ViewKind::Scatter3:
        chart = to_json(scatter3(t, p["x"].get<std::string>(), p["y"].get<std::string>(), p["z"].get<std::string>()));
        break;
      case ViewKind::Bar:
        chart = to_json(bar_aggregate(t, p["group"].get<std::string>(), p["value"].get<std::string>(),
                                      parse_aggregate(p["aggregate"].get<std::string>()), p["classes"].get<int>()));
        break;
      case ViewKind::Density: {
        const auto values = column(t, p["column"].get<std::string>());
        std::optional<double> bw;
        if (p["bandwidth"].is_number()) bw = p["bandwidth"].get<double>();
        chart = values.size() < 2 ? nlohmann::json(nullptr) : to_json(density(values, bw));
        break;
      }
      case ViewKind::Slice:
      case ViewKind::Volume:
        chart = nullptr;
        break;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TooFewValues || e.code() == ErrorCode::EmptyInput) {
      chart = nullptr;
    } else {
      bad_params(e.what());
    }
  }
  return {{"view_id", v.id},
          {"kind", std::string(to_string(v.kind))},
          {"params", v.params},
          {"dataset", data->entry.id},
          {"records", t.size()},
          {"data", chart}};
}

std::vector<std::byte> Service::get_slice_png(const std::string& id, Axis axis, std::int64_t index) const {
  auto s = session(id);
  const auto data = active(*s, nullptr);
  Image2D slice;
  try {
    slice = extract_slice(data->volume, axis, index);
  } catch (const Error& e) {
    bad_params(e.what());
  }
  GrayImage img(static_cast<int>(slice.width), static_cast<int>(slice.height));
  for (std::size_t i = 0; i < slice.pixels.size(); ++i) {
    const double v = std::clamp(data->volume.normalize(slice.pixels[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return encode_png(img);
}

std::vector<std::byte> Service::get_meshes(const std::string& id, int segments, std::size_t* count) const {
  if (segments < 3 || segments > 256) bad_params("segments must be within 3..256");
  auto s = session(id);
  const auto data = active(*s, nullptr);
  std::vector<std::byte> out;
  std::size_t n = 0;
  for (const auto& r : data->fibers.records()) {
    CylinderMesh mesh;
    try {
      mesh = fiber_to_cylinder(r, segments);
    } catch (const Error&) {
      continue;  // zero-length or non-finite fibers have no surface
    }
    const auto frame = encode_mesh(mesh);
    out.insert(out.end(), frame.begin(), frame.end());
    ++n;
  }
  if (count) *count = n;
  return out;
}

nlohmann::json Service::get_intensity_histogram(const std::string& id, int bins) const {
  auto s = session(id);
  const auto data = active(*s, nullptr);
  const Volume& v = data->volume;
  try {
    return to_json(intensity_histogram(v, bins, v.range_lo(), std::nextafter(v.range_hi(), HUGE_VAL)));
  } catch (const Error& e) {
    bad_params(e.what());
  }
}

std::vector<Event> Service::events_since(const std::string& id, std::int64_t since) const {
  auto s = session(id);
  std::lock_guard lock(s->state_mutex);
  std::vector<Event> out;
  for (const auto& e : s->events)
    if (e.seq > since) out.push_back(e);
  return out;
}

std::vector<Event> Service::wait_events(const std::string& id, std::int64_t since,
                                        std::chrono::milliseconds timeout) const {
  auto s = session(id);
  std::unique_lock lock(s->state_mutex);
  s->cv.wait_for(lock, timeout, [&] {
    bool stop = false;
    {
      std::lock_guard g(sessions_mutex_);
      stop = stopping_;
    }
    return stop || s->next_seq - 1 > since;
  });
  std::vector<Event> out;
  for (const auto& e : s->events)
    if (e.seq > since) out.push_back(e);
  return out;
}

}  // namespace xct
