#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xctlab/fiber_table.hpp"
#include "xctlab/geometry.hpp"
#include "xctlab/render.hpp"
#include "xctlab/tracking.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

enum class ViewKind { Volume, Slice, Histogram, Scatter3, Bar, Density };
std::string_view to_string(ViewKind kind);
/// Throws BadParams.
ViewKind parse_view_kind(std::string_view name);

/// A placed visualization. The pose is relative to the sample, so content
/// follows the tracked sample: world = sample_pose ∘ view.pose.
struct View {
  std::int64_t id = 0;
  ViewKind kind = ViewKind::Histogram;
  nlohmann::json params = nlohmann::json::object();
  Pose6DoF pose;

  friend bool operator==(const View& a, const View& b);
};

/// Checks params for kind and fills defaults (bins 16, classes 5, aggregate
/// count). Throws BadParams naming the offending field.
nlohmann::json normalize_view_params(ViewKind kind, const nlohmann::json& params);

struct ViewSpec {
  ViewKind kind = ViewKind::Histogram;
  nlohmann::json params = nlohmann::json::object();
  Pose6DoF pose;
};

/// Two length histograms (straight and curved, 16 bins) and a
/// diameter / surface area / curved length scatterplot.
std::vector<ViewSpec> standard_default_views();

struct DatasetEntry {
  std::string id;
  std::string display_name;
  std::filesystem::path volume_path;
  std::filesystem::path meta_path;
  std::optional<std::filesystem::path> csv_path;
  std::vector<int> marker_ids;
  /// Sample-to-marker offset per marker; identity when absent.
  std::map<int, Pose6DoF> marker_offsets;
  std::vector<ViewSpec> default_views;
  /// Run fiber extraction on load when no CSV is given.
  bool extract_on_load = false;
};

/// Registry document:
/// {"datasets": [{"id", "name", "volume", "meta"?, "fibers"?, "markers": [..],
///   "marker_offsets"?: {"7": pose}, "default_views"?: [{"kind", "params", "pose"?}],
///   "extract"?: bool}], "dictionary"?: path}
/// Relative paths resolve against base_dir. Throws InvalidArgument for
/// malformed entries, duplicate dataset ids or markers claimed twice, Io for
/// missing files.
struct Catalog {
  std::vector<DatasetEntry> datasets;
  std::optional<std::filesystem::path> dictionary_path;
};
Catalog parse_catalog(const nlohmann::json& doc, const std::filesystem::path& base_dir);
Catalog load_catalog(const std::filesystem::path& path);

struct Workspace {
  std::vector<View> views;
  std::optional<std::string> active_dataset;
  Pose6DoF sample_pose;
  std::int64_t next_view_id = 1;

  friend bool operator==(const Workspace&, const Workspace&) = default;
};

nlohmann::json workspace_to_json(const Workspace& ws);
/// Throws BadParams for malformed documents or duplicate view ids.
Workspace workspace_from_json(const nlohmann::json& j);
void save_workspace(const Workspace& ws, const std::filesystem::path& path);
Workspace load_workspace(const std::filesystem::path& path);

enum class EventType { DatasetChanged, Pose, ViewChanged };
std::string_view to_string(EventType type);

struct Event {
  std::int64_t seq = 0;  ///< 1-based, strictly increasing per session
  EventType type = EventType::Pose;
  nlohmann::json data;
};

struct FrameReport {
  std::int64_t frame = 0;  ///< 1-based ingest counter
  std::vector<Detection> detections;
  std::optional<int> used_marker;
  std::optional<std::string> dataset;
  bool dataset_changed = false;
  std::vector<std::string> messages;
  std::vector<Event> events;
};
nlohmann::json to_json(const FrameReport& report);

struct LoadedDataset {
  DatasetEntry entry;
  Volume volume;
  FiberTable fibers;
};

enum class RenderMode { Mip, Dvr };
RenderMode parse_render_mode(std::string_view name);

struct RenderRequest {
  RenderMode mode = RenderMode::Mip;
  /// "orbit": camera circles the sample centre; "ar": the tracking camera,
  /// so the volume appears where the sample was detected.
  std::string view = "orbit";
  double azimuth_deg = 30.0;
  double elevation_deg = 20.0;
  std::optional<double> distance_mm;  ///< default 2.5 volume diagonals
  double zoom = 1.0;                  ///< divides the orbit distance
  double fov_y_deg = 40.0;
  std::optional<TransferFunction> tf;
  int width = 256;
  int height = 256;
  double step = 0.0;  ///< 0 selects the renderer default
};

struct RenderResult {
  std::vector<std::byte> png;
  std::string content_hash;  ///< FNV-1a 64 of the PNG, 16 hex digits
  int width = 0;
  int height = 0;
};

std::string fnv1a_hex(std::span<const std::byte> bytes);

struct ServiceOptions {
  std::optional<std::filesystem::path> workspace_dir;  ///< persist <session>.json here
  CameraIntrinsics intrinsics;
  std::size_t max_events = 10000;  ///< per session, oldest dropped first
};

/// Sessions, dataset cache and workspaces. Thread-safe: reads run
/// concurrently, mutations of one session are serialized.
class Service {
 public:
  Service(Catalog catalog, MarkerDictionary dictionary, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  [[nodiscard]] const Catalog& catalog() const { return catalog_; }
  [[nodiscard]] const MarkerDictionary& dictionary() const { return dictionary_; }
  [[nodiscard]] const DatasetRegistry& registry() const { return registry_; }
  [[nodiscard]] nlohmann::json list_datasets() const;

  std::string create_session();
  /// Opens a session with a previously saved workspace.
  std::string create_session(Workspace initial);
  [[nodiscard]] bool has_session(const std::string& session) const;

  FrameReport ingest_frame(const std::string& session, const GrayImage& frame);
  /// Manual selection; returns the events emitted (none when already active).
  std::vector<Event> select_dataset(const std::string& session, const std::string& dataset_id);

  std::int64_t place_view(const std::string& session, ViewKind kind, const nlohmann::json& params,
                          const Pose6DoF& pose = {});
  View update_view(const std::string& session, std::int64_t view_id, const std::optional<Pose6DoF>& pose,
                   const std::optional<nlohmann::json>& params);
  void remove_view(const std::string& session, std::int64_t view_id);

  [[nodiscard]] Workspace workspace(const std::string& session) const;

  RenderResult get_render(const std::string& session, const RenderRequest& request) const;
  nlohmann::json get_chart(const std::string& session, std::int64_t view_id) const;
  std::vector<std::byte> get_slice_png(const std::string& session, Axis axis, std::int64_t index) const;
  /// Concatenated mesh frames, one per fiber.
  std::vector<std::byte> get_meshes(const std::string& session, int segments, std::size_t* count = nullptr) const;
  nlohmann::json get_intensity_histogram(const std::string& session, int bins) const;

  /// Events with seq > since, oldest first.
  [[nodiscard]] std::vector<Event> events_since(const std::string& session, std::int64_t since) const;
  /// Blocks up to timeout for an event with seq > since.
  std::vector<Event> wait_events(const std::string& session, std::int64_t since,
                                 std::chrono::milliseconds timeout) const;

  /// Loads through the shared cache. Throws UnknownDataset.
  std::shared_ptr<const LoadedDataset> dataset(const std::string& dataset_id) const;

  /// Wakes all waiters; used on shutdown.
  void shutdown();

 private:
  struct Session;
  std::shared_ptr<Session> session(const std::string& id) const;
  std::shared_ptr<const LoadedDataset> active(const Session& s, Workspace* ws_out) const;
  void persist(const std::string& id, const Workspace& ws) const;
  Event& push_event(Session& s, EventType type, nlohmann::json data);
  std::vector<Event> activate(const std::string& id, Session& s, const std::string& dataset_id,
                              std::optional<int> marker);
  const DatasetEntry& entry(const std::string& dataset_id) const;

  Catalog catalog_;
  MarkerDictionary dictionary_;
  DatasetRegistry registry_;
  ServiceOptions options_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::int64_t next_session_ = 1;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const LoadedDataset>> cache_;
  bool stopping_ = false;
};

/// HTTP front end. Routes and payloads are documented in docs/api.md.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace xct
