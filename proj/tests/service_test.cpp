#include <gtest/gtest.h>

#include <httplib.h>

#include <fstream>
#include <future>
#include <thread>

#include "test_support.hpp"
#include "xctlab/error.hpp"
#include "xctlab/phantom.hpp"
#include "xctlab/service.hpp"

using namespace xct;
using xct::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

MarkerPlacement placed(int id, Vec3 at, double spin_deg = 0.0) {
  MarkerPlacement p;
  p.id = id;
  p.pose.rotation = Quat::from_axis_angle({0, 0, 1}, deg_to_rad(spin_deg));
  p.pose.translation = at;
  return p;
}

/// Frames are costly to synthesize, so each distinct one is made once.
const GrayImage& frame_with(int id) {
  static std::map<int, GrayImage> cache;
  auto it = cache.find(id);
  if (it == cache.end()) {
    const GrayImage img =
        id < 0 ? GrayImage(1280, 960, 160)
               : render_marker_frame({placed(id, {20, -10, 700}, 15)}, MarkerDictionary::standard(), CameraIntrinsics{});
    it = cache.emplace(id, img).first;
  }
  return it->second;
}

std::string png_body(const GrayImage& g) {
  const auto bytes = encode_png(g);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

/// Two small phantom datasets: A tracked by markers 7 and 8, B by marker 3.
class ServiceFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    const std::vector<CylinderSpec> a{{{4, 6, 4}, {18, 6, 19}, 1.5}, {{6, 16, 3}, {6, 16, 20}, 2.0}};
    const std::vector<CylinderSpec> b{{{3, 12, 12}, {20, 12, 12}, 2.5}};
    xct::testing::write_phantom(dir_.path(), "a", a, 24);
    xct::testing::write_phantom(dir_.path(), "b", b, 24);
    save_fiber_table(cylinder_table(a), dir_ / "a.csv");
    save_fiber_table(cylinder_table(b), dir_ / "b.csv");
    registry_ = {{"datasets",
                  {{{"id", "sample_A"},
                    {"name", "Sample A"},
                    {"volume", "a.raw"},
                    {"fibers", "a.csv"},
                    {"markers", {7, 8}},
                    {"marker_offsets", {{"8", pose_to_json(Pose6DoF{{}, {0, 30, 0}, 1.0})}}}},
                   {{"id", "sample_B"}, {"volume", "b.raw"}, {"fibers", "b.csv"}, {"markers", {3}}}}}};
    std::ofstream(dir_ / "registry.json") << registry_.dump(2);
  }

  Service& make_service(bool persist = false) {
    ServiceOptions opts;
    if (persist) opts.workspace_dir = dir_ / "ws";
    owned_ = std::make_unique<Service>(load_catalog(dir_ / "registry.json"), MarkerDictionary::standard(), opts);
    return *owned_;
  }

  TempDir dir_;
  std::unique_ptr<Service> owned_;
  nlohmann::json registry_;
};

}  // namespace

// ---------------------------------------------------------------- catalog

TEST_F(ServiceFixture, CatalogResolvesPathsAndDefaults) {
  const Catalog cat = load_catalog(dir_ / "registry.json");
  ASSERT_EQ(cat.datasets.size(), 2u);
  EXPECT_EQ(cat.datasets[0].volume_path, dir_ / "a.raw");
  EXPECT_EQ(cat.datasets[0].meta_path, default_meta_path(dir_ / "a.raw"));
  EXPECT_EQ(cat.datasets[1].display_name, "sample_B");
  const auto& views = cat.datasets[0].default_views;
  ASSERT_EQ(views.size(), 3u);
  EXPECT_EQ(views[0].kind, ViewKind::Histogram);
  EXPECT_EQ(views[0].params["column"], "straight_length");
  EXPECT_EQ(views[1].params["column"], "curved_length");
  EXPECT_EQ(views[2].kind, ViewKind::Scatter3);
  EXPECT_EQ(views[2].params["x"], "diameter");
  EXPECT_EQ(views[2].params["y"], "surface_area");
  EXPECT_EQ(views[2].params["z"], "curved_length");
}

TEST_F(ServiceFixture, CatalogRejectsConflicts) {
  nlohmann::json dup = registry_;
  dup["datasets"][1]["id"] = "sample_A";
  dup["datasets"][1]["markers"] = nlohmann::json::array();
  EXPECT_EQ(code_of([&] { parse_catalog(dup, dir_.path()); }), ErrorCode::InvalidArgument);
  nlohmann::json claimed = registry_;
  claimed["datasets"][1]["markers"] = {8};
  EXPECT_EQ(code_of([&] { parse_catalog(claimed, dir_.path()); }), ErrorCode::InvalidArgument);
  nlohmann::json missing = registry_;
  missing["datasets"][0]["volume"] = "nope.raw";
  EXPECT_EQ(code_of([&] { parse_catalog(missing, dir_.path()); }), ErrorCode::Io);
  nlohmann::json bad_view = registry_;
  bad_view["datasets"][0]["default_views"] = {{{"kind", "histogram"}, {"params", {{"column", "girth"}}}}};
  EXPECT_EQ(code_of([&] { parse_catalog(bad_view, dir_.path()); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { parse_catalog(nlohmann::json::object(), dir_.path()); }), ErrorCode::InvalidArgument);
}

TEST_F(ServiceFixture, ListDatasets) {
  Service& svc = make_service();
  const auto j = svc.list_datasets();
  ASSERT_EQ(j["datasets"].size(), 2u);
  EXPECT_EQ(j["datasets"][0]["markers"], nlohmann::json({7, 8}));
  EXPECT_EQ(j["datasets"][0]["dims"], nlohmann::json({24, 24, 24}));
  EXPECT_EQ(svc.registry().resolve(8), "sample_A");
}

// ---------------------------------------------------------------- frames

TEST_F(ServiceFixture, ColdStartLoadsDatasetAndDefaultViews) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  const FrameReport r = svc.ingest_frame(s, frame_with(7));
  EXPECT_EQ(r.frame, 1);
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_EQ(r.used_marker, 7);
  EXPECT_EQ(r.dataset, "sample_A");
  EXPECT_TRUE(r.dataset_changed);
  ASSERT_GE(r.events.size(), 2u);
  EXPECT_EQ(r.events.front().type, EventType::DatasetChanged);
  EXPECT_EQ(r.events.back().type, EventType::Pose);
  const Workspace ws = svc.workspace(s);
  EXPECT_EQ(ws.active_dataset, "sample_A");
  EXPECT_EQ(ws.views.size(), 3u);
  EXPECT_NEAR(ws.sample_pose.translation.z, 700.0, 14.0);
  EXPECT_LT(rad_to_deg(angle_between(ws.sample_pose.rotation, placed(7, {}, 15).pose.rotation)), 2.0);
}

TEST_F(ServiceFixture, SecondMarkerOfSameDatasetOnlyMovesThePose) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  const auto before = svc.dataset("sample_A");
  const FrameReport r = svc.ingest_frame(s, frame_with(8));
  EXPECT_FALSE(r.dataset_changed);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].type, EventType::Pose);
  EXPECT_EQ(svc.dataset("sample_A").get(), before.get());
  // marker 8 carries a 30 mm offset along its y axis
  const Workspace ws = svc.workspace(s);
  const Pose6DoF marker = r.detections[0].pose;
  EXPECT_LT(distance(ws.sample_pose.translation, marker.apply({0, 30, 0})), 1e-9);
}

TEST_F(ServiceFixture, RedetectionNeverReloads) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  for (int i = 0; i < 3; ++i) {
    const FrameReport r = svc.ingest_frame(s, frame_with(i % 2 ? 7 : 8));
    EXPECT_FALSE(r.dataset_changed);
  }
  int changes = 0;
  for (const auto& e : svc.events_since(s, 0)) changes += e.type == EventType::DatasetChanged;
  EXPECT_EQ(changes, 1);
}

TEST_F(ServiceFixture, BlankFrameLeavesPoseAlone) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  const Workspace before = svc.workspace(s);
  const FrameReport r = svc.ingest_frame(s, frame_with(-1));
  EXPECT_TRUE(r.detections.empty());
  ASSERT_EQ(r.messages.size(), 1u);
  EXPECT_EQ(r.messages[0], "no detection");
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(svc.workspace(s), before);
}

TEST_F(ServiceFixture, UnregisteredMarkerIsReported) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  const FrameReport r = svc.ingest_frame(s, frame_with(20));
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_FALSE(r.used_marker.has_value());
  EXPECT_NE(r.messages.at(0).find("not registered"), std::string::npos);
  EXPECT_FALSE(svc.workspace(s).active_dataset.has_value());
}

TEST_F(ServiceFixture, SwitchingSamplesKeepsTheLayout) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  const FrameReport r = svc.ingest_frame(s, frame_with(3));
  EXPECT_TRUE(r.dataset_changed);
  EXPECT_EQ(svc.workspace(s).active_dataset, "sample_B");
  EXPECT_EQ(svc.workspace(s).views.size(), 3u);
  EXPECT_EQ(r.events.front().data["previous"], "sample_A");
}

TEST_F(ServiceFixture, PoseEventsFollowIngestOrder) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  for (int i = 0; i < 6; ++i) svc.ingest_frame(s, frame_with(i % 2 ? 8 : 7));
  std::int64_t last_seq = 0, last_frame = 0;
  int poses = 0;
  for (const auto& e : svc.events_since(s, 0)) {
    EXPECT_GT(e.seq, last_seq);
    last_seq = e.seq;
    if (e.type != EventType::Pose) continue;
    ++poses;
    EXPECT_GT(e.data["frame"].get<std::int64_t>(), last_frame);
    last_frame = e.data["frame"].get<std::int64_t>();
  }
  EXPECT_EQ(poses, 6);
  EXPECT_EQ(svc.events_since(s, last_seq - 1).size(), 1u);
}

TEST_F(ServiceFixture, ReportJson) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  const auto j = to_json(svc.ingest_frame(s, frame_with(7)));
  EXPECT_EQ(j["frame"], 1);
  EXPECT_EQ(j["detections"][0]["id"], 7);
  EXPECT_EQ(j["detections"][0]["corners"].size(), 4u);
  EXPECT_EQ(j["events"][0]["type"], "dataset-changed");
  EXPECT_EQ(j["dataset"], "sample_A");
}

// ---------------------------------------------------------------- views

TEST_F(ServiceFixture, PlaceViewPersistsTheLayout) {
  Service& svc = make_service(true);
  const std::string s = svc.create_session();
  const auto id = svc.place_view(s, ViewKind::Histogram, {{"column", "straight_length"}, {"bins", 16}});
  EXPECT_EQ(id, 1);
  const Workspace saved = load_workspace(dir_ / "ws" / (s + ".json"));
  ASSERT_EQ(saved.views.size(), 1u);
  EXPECT_EQ(saved.views[0].params["column"], "straight_length");
  const auto scatter =
      svc.place_view(s, ViewKind::Scatter3, {{"x", "diameter"}, {"y", "surface_area"}, {"z", "curved_length"}});
  EXPECT_EQ(scatter, 2);
}

TEST_F(ServiceFixture, BadViewParams) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Histogram, {{"column", "girth"}}); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Histogram, {{"column", "theta"}, {"bins", 0}}); }),
            ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Bar, {{"group", "theta"}, {"aggregate", "median"}}); }),
            ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Density, {{"column", "phi"}, {"bandwidth", -1}}); }),
            ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Scatter3, {{"x", "phi"}, {"y", "phi"}}); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Histogram, {{"column", "phi"}, {"colour", 1}}); }),
            ErrorCode::BadParams);
  Pose6DoF bad;
  bad.scale = -1.0;
  EXPECT_EQ(code_of([&] { svc.place_view(s, ViewKind::Slice, {}, bad); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { parse_view_kind("pie"); }), ErrorCode::BadParams);
  EXPECT_TRUE(svc.workspace(s).views.empty());
}

TEST_F(ServiceFixture, MovingOneViewLeavesTheOthers) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  const auto a = svc.place_view(s, ViewKind::Slice, {{"axis", "x"}});
  const auto b = svc.place_view(s, ViewKind::Volume, {});
  Pose6DoF moved;
  moved.translation = {10, 20, 30};
  moved.scale = 2.0;
  const View v = svc.update_view(s, b, moved, std::nullopt);
  EXPECT_EQ(v.pose.translation, moved.translation);
  const Workspace ws = svc.workspace(s);
  EXPECT_EQ(ws.views[0].pose.translation, Vec3{});
  EXPECT_EQ(ws.views[1].pose.scale, 2.0);
  svc.remove_view(s, a);
  EXPECT_EQ(svc.workspace(s).views.size(), 1u);
  EXPECT_EQ(code_of([&] { svc.remove_view(s, a); }), ErrorCode::UnknownView);
  EXPECT_EQ(code_of([&] { svc.update_view(s, 99, moved, std::nullopt); }), ErrorCode::UnknownView);
}

TEST_F(ServiceFixture, WorkspaceRoundTrip) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  Pose6DoF p;
  p.rotation = Quat::from_axis_angle(normalized(Vec3{1, 2, 3}), 0.7);
  p.translation = {0.1, -2.5e-7, 123.456789};
  p.scale = 0.3;
  svc.place_view(s, ViewKind::Bar, {{"group", "theta"}, {"value", "diameter"}, {"aggregate", "mean"}}, p);
  const Workspace ws = svc.workspace(s);
  save_workspace(ws, dir_ / "w.json");
  EXPECT_EQ(load_workspace(dir_ / "w.json"), ws);
  EXPECT_EQ(workspace_from_json(workspace_to_json(ws)), ws);

  // a restored session picks up where it left off
  const std::string s2 = svc.create_session(load_workspace(dir_ / "w.json"));
  EXPECT_EQ(svc.workspace(s2), ws);
  EXPECT_NO_THROW(svc.get_render(s2, {}));
}

TEST(Workspace, MalformedDocuments) {
  nlohmann::json j = workspace_to_json(Workspace{});
  j["views"] = {{{"id", 1}, {"kind", "slice"}}, {{"id", 1}, {"kind", "volume"}}};
  EXPECT_EQ(code_of([&] { workspace_from_json(j); }), ErrorCode::BadParams);
  j["views"] = {{{"id", 1}, {"kind", "slice"}, {"pose", {{"scale", 0}}}}};
  EXPECT_EQ(code_of([&] { workspace_from_json(j); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { workspace_from_json(nlohmann::json::array()); }), ErrorCode::BadParams);
  j["views"] = {{{"id", 4}, {"kind", "slice"}}};
  j["next_view_id"] = 1;
  EXPECT_EQ(workspace_from_json(j).next_view_id, 5);
}

// ---------------------------------------------------------------- data endpoints

TEST_F(ServiceFixture, RenderNeedsAnActiveDataset) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  EXPECT_EQ(code_of([&] { svc.get_render(s, {}); }), ErrorCode::NoActiveDataset);
  EXPECT_EQ(code_of([&] { svc.get_chart(s, 1); }), ErrorCode::NoActiveDataset);
  EXPECT_EQ(code_of([&] { svc.get_render("nope", {}); }), ErrorCode::UnknownSession);
}

TEST_F(ServiceFixture, RenderIsStableAndDecodable) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.select_dataset(s, "sample_A");
  RenderRequest req;
  req.width = 64;
  req.height = 48;
  const RenderResult a = svc.get_render(s, req);
  const RenderResult b = svc.get_render(s, req);
  EXPECT_FALSE(a.png.empty());
  EXPECT_EQ(a.content_hash, b.content_hash);
  EXPECT_EQ(a.content_hash.size(), 16u);
  EXPECT_EQ(a.content_hash, fnv1a_hex(a.png));
  const ImageRGBA img = decode_png_rgba(a.png);
  EXPECT_EQ(img.width, 64);
  EXPECT_EQ(img.height, 48);
  int lit = 0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 4) lit += img.pixels[i] > 0;
  EXPECT_GT(lit, 0);
  req.azimuth_deg = 100.0;
  EXPECT_NE(svc.get_render(s, req).content_hash, a.content_hash);
}

TEST_F(ServiceFixture, TransparentDvrIsBackground) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.select_dataset(s, "sample_A");
  RenderRequest req;
  req.mode = RenderMode::Dvr;
  req.tf = TransferFunction({{0.0, {1, 1, 1, 0}}, {1.0, {1, 1, 1, 0}}});
  req.width = req.height = 32;
  const ImageRGBA img = decode_png_rgba(svc.get_render(s, req).png);
  for (std::size_t i = 0; i < img.pixels.size(); i += 4) {
    ASSERT_EQ(img.pixels[i], 0);
    ASSERT_EQ(img.pixels[i + 3], 255);
  }
}

TEST_F(ServiceFixture, RenderParameterChecks) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.select_dataset(s, "sample_A");
  RenderRequest req;
  req.width = 0;
  EXPECT_EQ(code_of([&] { svc.get_render(s, req); }), ErrorCode::BadParams);
  req = {};
  req.zoom = 100.0;
  EXPECT_EQ(code_of([&] { svc.get_render(s, req); }), ErrorCode::BadParams);
  req = {};
  req.view = "sideways";
  EXPECT_EQ(code_of([&] { svc.get_render(s, req); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([&] { parse_render_mode("xray"); }), ErrorCode::BadParams);
}

TEST_F(ServiceFixture, ArViewDrawsTheVolumeWhereTheSampleIs) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  RenderRequest req;
  req.view = "ar";
  req.width = 160;
  req.height = 120;
  const ImageRGBA img = decode_png_rgba(svc.get_render(s, req).png);
  // the marker sits at (20, -10, 700) mm: about 46 px right of and 23 px above centre in the frame
  double sx = 0, sy = 0, w = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = img.at(x, y)[0];
      sx += v * x;
      sy += v * y;
      w += v;
    }
  ASSERT_GT(w, 0.0);
  const CameraIntrinsics k;
  const double scale = 160.0 / 1280.0;
  EXPECT_NEAR(sx / w, (k.cx + k.fx * 20 / 700 + 0.5) * scale - 0.5, 4.0);
  EXPECT_NEAR(sy / w, (k.cy - k.fy * 10 / 700 + 0.5) * scale - 0.5, 4.0);
}

TEST_F(ServiceFixture, ChartsFollowTheActiveTable) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.ingest_frame(s, frame_with(7));
  const auto hist = svc.get_chart(s, 1);
  EXPECT_EQ(hist["kind"], "histogram");
  EXPECT_EQ(hist["records"], 2);
  EXPECT_EQ(hist["data"]["total"], 2);
  const auto scatter = svc.get_chart(s, 3);
  EXPECT_EQ(scatter["data"]["points"].size(), 2u);
  const auto bar = svc.place_view(s, ViewKind::Bar, {{"group", "straight_length"}});
  EXPECT_EQ(svc.get_chart(s, bar)["data"]["bars"].size(), 5u);
  const auto dens = svc.place_view(s, ViewKind::Density, {{"column", "diameter"}});
  EXPECT_EQ(svc.get_chart(s, dens)["data"]["x"].size(), 256u);
  const auto slice = svc.place_view(s, ViewKind::Slice, {});
  EXPECT_TRUE(svc.get_chart(s, slice)["data"].is_null());
  EXPECT_EQ(code_of([&] { svc.get_chart(s, 42); }), ErrorCode::UnknownView);
}

TEST_F(ServiceFixture, SlicesMeshesAndIntensities) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.select_dataset(s, "sample_A");
  const GrayImage slice = decode_png_gray(svc.get_slice_png(s, Axis::Z, 10));
  EXPECT_EQ(slice.width, 24);
  EXPECT_EQ(slice.height, 24);
  EXPECT_EQ(code_of([&] { svc.get_slice_png(s, Axis::Z, 24); }), ErrorCode::BadParams);

  std::size_t count = 0;
  const auto bytes = svc.get_meshes(s, 12, &count);
  EXPECT_EQ(count, 2u);
  std::size_t used = 0;
  const CylinderMesh first = decode_mesh(bytes, &used);
  EXPECT_EQ(first.triangle_count(), fiber_to_cylinder(load_fiber_table(dir_ / "a.csv").records()[0], 12).triangle_count());
  EXPECT_LT(used, bytes.size());
  EXPECT_EQ(code_of([&] { svc.get_meshes(s, 2); }), ErrorCode::BadParams);

  const auto h = svc.get_intensity_histogram(s, 32);
  EXPECT_EQ(h["total"], 24 * 24 * 24);
  EXPECT_EQ(h["overflow"], 0);
  EXPECT_EQ(h["underflow"], 0);
}

TEST_F(ServiceFixture, SelectDatasetIsIdempotent) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  EXPECT_FALSE(svc.select_dataset(s, "sample_B").empty());
  EXPECT_TRUE(svc.select_dataset(s, "sample_B").empty());
  EXPECT_EQ(code_of([&] { svc.select_dataset(s, "sample_Z"); }), ErrorCode::UnknownDataset);
}

// ---------------------------------------------------------------- events and concurrency

TEST_F(ServiceFixture, WaitersWakeOnNewEvents) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  EXPECT_TRUE(svc.wait_events(s, 0, std::chrono::milliseconds(20)).empty());
  auto waiter = std::async(std::launch::async, [&] { return svc.wait_events(s, 0, std::chrono::seconds(10)); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  svc.place_view(s, ViewKind::Slice, {});
  const auto got = waiter.get();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].type, EventType::ViewChanged);
}

TEST_F(ServiceFixture, ShutdownReleasesWaiters) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  auto waiter = std::async(std::launch::async, [&] { return svc.wait_events(s, 0, std::chrono::seconds(30)); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  const auto t0 = std::chrono::steady_clock::now();
  svc.shutdown();
  EXPECT_TRUE(waiter.get().empty());
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST_F(ServiceFixture, ConcurrentReadsDuringMutation) {
  Service& svc = make_service();
  const std::string s = svc.create_session();
  svc.select_dataset(s, "sample_A");
  RenderRequest req;
  req.width = req.height = 24;
  const std::string expected = svc.get_render(s, req).content_hash;
  std::vector<std::future<std::string>> readers;
  for (int i = 0; i < 4; ++i)
    readers.push_back(std::async(std::launch::async, [&] { return svc.get_render(s, req).content_hash; }));
  for (int i = 0; i < 20; ++i) svc.place_view(s, ViewKind::Slice, {});
  for (auto& r : readers) EXPECT_EQ(r.get(), expected);
  EXPECT_EQ(svc.workspace(s).views.size(), 23u);
}

// ---------------------------------------------------------------- HTTP

class HttpFixture : public ServiceFixture {
 protected:
  void SetUp() override {
    ServiceFixture::SetUp();
    server_ = std::make_unique<HttpServer>(make_service());
    port_ = server_->bind("127.0.0.1", 0);
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(10, 0);
    for (int i = 0; i < 100 && !client_->Get("/health"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  void TearDown() override {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string new_session() {
    const auto res = client_->Post("/sessions", "", "application/json");
    return nlohmann::json::parse(res->body)["session"].get<std::string>();
  }

  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpFixture, DatasetsAndSessions) {
  auto res = client_->Get("/datasets");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["datasets"].size(), 2u);
  res = client_->Post("/sessions", "", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  const auto body = nlohmann::json::parse(res->body);
  EXPECT_TRUE(body["workspace"]["views"].empty());
  res = client_->Get(("/sessions/" + body["session"].get<std::string>() + "/workspace").c_str());
  EXPECT_EQ(res->status, 200);
}

TEST_F(HttpFixture, FrameUploadLoadsTheSample) {
  const std::string s = new_session();
  auto res = client_->Post(("/sessions/" + s + "/frames").c_str(), png_body(frame_with(7)), "image/png");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const auto report = nlohmann::json::parse(res->body);
  EXPECT_EQ(report["dataset"], "sample_A");
  EXPECT_TRUE(report["dataset_changed"]);
  const auto ws = nlohmann::json::parse(client_->Get(("/sessions/" + s + "/workspace").c_str())->body);
  EXPECT_EQ(ws["views"].size(), 3u);
  res = client_->Post(("/sessions/" + s + "/frames").c_str(), "not an image", "image/png");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(nlohmann::json::parse(res->body)["error"]["code"], "BadParams");
}

TEST_F(HttpFixture, RenderWithEtag) {
  const std::string s = new_session();
  const std::string base = "/sessions/" + s;
  auto res = client_->Get((base + "/render").c_str());
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(nlohmann::json::parse(res->body)["error"]["code"], "NoActiveDataset");
  client_->Post((base + "/dataset").c_str(), R"({"dataset": "sample_A"})", "application/json");
  res = client_->Get((base + "/render?mode=mip&w=40&h=30&az=45").c_str());
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  const std::string etag = res->get_header_value("ETag");
  EXPECT_EQ(etag, "\"" + res->get_header_value("X-Content-Hash") + "\"");
  const auto* bytes = reinterpret_cast<const std::byte*>(res->body.data());
  EXPECT_EQ(decode_png_rgba({bytes, res->body.size()}).width, 40);
  res = client_->Get((base + "/render?mode=mip&w=40&h=30&az=45").c_str(), {{"If-None-Match", etag}});
  EXPECT_EQ(res->status, 304);
  res = client_->Get((base + "/render?mode=dvr&w=abc").c_str());
  EXPECT_EQ(res->status, 400);
  res = client_->Get((base + "/render?mode=dvr&tf=%7B%22points%22%3A%5B%5D%7D").c_str());
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(nlohmann::json::parse(res->body)["error"]["code"], "BadTF");
}

TEST_F(HttpFixture, ViewLifecycle) {
  const std::string s = new_session();
  const std::string base = "/sessions/" + s;
  client_->Post((base + "/dataset").c_str(), R"({"dataset": "sample_B"})", "application/json");
  auto res = client_->Post((base + "/views").c_str(),
                           R"({"kind": "histogram", "params": {"column": "straight_length", "bins": 4}})",
                           "application/json");
  ASSERT_EQ(res->status, 201) << res->body;
  // sample_B already placed its three default views
  const auto vid = nlohmann::json::parse(res->body)["view_id"].get<int>();
  EXPECT_EQ(vid, 4);
  res = client_->Get((base + "/charts/" + std::to_string(vid)).c_str());
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["data"]["counts"].size(), 4u);
  res = client_->Patch((base + "/views/" + std::to_string(vid)).c_str(),
                       R"({"pose": {"translation": [1, 2, 3], "rotation": [1, 0, 0, 0], "scale": 1.5}})",
                       "application/json");
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(nlohmann::json::parse(res->body)["pose"]["scale"], 1.5);
  res = client_->Post((base + "/views").c_str(), R"({"kind": "histogram", "params": {"column": "girth"}})",
                      "application/json");
  EXPECT_EQ(res->status, 400);
  res = client_->Post((base + "/views").c_str(), "{broken", "application/json");
  EXPECT_EQ(res->status, 400);
  res = client_->Delete((base + "/views/" + std::to_string(vid)).c_str());
  EXPECT_EQ(res->status, 204);
  res = client_->Get((base + "/charts/" + std::to_string(vid)).c_str());
  EXPECT_EQ(res->status, 404);
  res = client_->Get("/sessions/zzz/workspace");
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(nlohmann::json::parse(res->body)["error"]["code"], "UnknownSession");
}

TEST_F(HttpFixture, SlicesMeshesHistogram) {
  const std::string s = new_session();
  const std::string base = "/sessions/" + s;
  client_->Post((base + "/dataset").c_str(), R"({"dataset": "sample_A"})", "application/json");
  auto res = client_->Get((base + "/slices?axis=y&index=3").c_str());
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  res = client_->Get((base + "/slices?axis=w").c_str());
  EXPECT_EQ(res->status, 400);
  res = client_->Get((base + "/meshes?segments=8").c_str());
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("X-Mesh-Count"), "2");
  res = client_->Get((base + "/intensity-histogram?bins=8").c_str());
  EXPECT_EQ(nlohmann::json::parse(res->body)["counts"].size(), 8u);
}

TEST_F(HttpFixture, EventStreamDeliversInOrder) {
  const std::string s = new_session();
  const std::string base = "/sessions/" + s;
  client_->Post((base + "/frames").c_str(), png_body(frame_with(7)), "image/png");
  client_->Post((base + "/frames").c_str(), png_body(frame_with(8)), "image/png");
  // dataset-changed, three placed views, pose, pose
  std::string stream;
  httplib::Client sse("127.0.0.1", port_);
  sse.set_read_timeout(10, 0);
  auto res = sse.Get((base + "/events?since=0&limit=6").c_str(), [&](const char* data, std::size_t n) {
    stream.append(data, n);
    return true;
  });
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Content-Type"), "text/event-stream");
  std::vector<nlohmann::json> events;
  std::size_t pos = 0;
  while ((pos = stream.find("data: ", pos)) != std::string::npos) {
    const auto end = stream.find('\n', pos);
    events.push_back(nlohmann::json::parse(stream.substr(pos + 6, end - pos - 6)));
    pos = end;
  }
  ASSERT_EQ(events.size(), 6u);
  EXPECT_EQ(events[0]["type"], "dataset-changed");
  EXPECT_EQ(events[4]["type"], "pose");
  EXPECT_EQ(events[5]["type"], "pose");
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i]["seq"], i + 1);
  EXPECT_NE(stream.find("event: view-changed"), std::string::npos);

  // resuming after the last seen id yields only what follows
  stream.clear();
  res = sse.Get((base + "/events?limit=1").c_str(), {{"Last-Event-ID", "5"}}, [&](const char* data, std::size_t n) {
    stream.append(data, n);
    return true;
  });
  EXPECT_NE(stream.find("id: 6"), std::string::npos);
}
