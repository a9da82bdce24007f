#include <gtest/gtest.h>

#include <fstream>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "test_support.hpp"
#include "xctlab/error.hpp"
#include "xctlab/fiber_table.hpp"
#include "xctlab/image_io.hpp"
#include "xctlab/service.hpp"

using namespace xct;
using xct::testing::TempDir;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
  [[nodiscard]] nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome r;
  r.code = xct::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::byte> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

}  // namespace

TEST(CliExitCodes, UsageErrors) {
  EXPECT_EQ(invoke({}).code, xct::cli::kExitUser);
  EXPECT_EQ(invoke({"--help"}).code, xct::cli::kExitOk);
  EXPECT_EQ(invoke({"frobnicate"}).code, xct::cli::kExitUser);
  EXPECT_EQ(invoke({"extract", "/no/such/file.raw"}).code, xct::cli::kExitUser);
  EXPECT_EQ(invoke({"render", "--mode", "xray"}).code, xct::cli::kExitUser);
  const Outcome serve = invoke({"serve"});
  EXPECT_EQ(serve.code, xct::cli::kExitUser);
  EXPECT_NE(serve.err.find("--registry"), std::string::npos);
}

TEST(CliExitCodes, DomainErrorsAreUserErrors) {
  TempDir dir;
  ASSERT_EQ(invoke({"phantom", "--table", "10", "-o", (dir / "t.csv").string()}).code, 0);
  const Outcome r = invoke({"chart", "histogram", (dir / "t.csv").string(), "--col", "girth"});
  EXPECT_EQ(r.code, xct::cli::kExitUser);
  EXPECT_NE(r.err.find("UnknownColumn"), std::string::npos);
  EXPECT_EQ(invoke({"chart", "scatter3", (dir / "t.csv").string(), "--x", "theta"}).code, xct::cli::kExitUser);
  std::ofstream(dir / "bad.csv") << "id,oops\n1,2\n";
  EXPECT_EQ(invoke({"chart", "histogram", (dir / "bad.csv").string(), "--col", "id"}).code, xct::cli::kExitUser);
}

TEST(CliPhantom, OneCylinderExtractsToOneRow) {
  TempDir dir;
  const std::string raw = (dir / "one.raw").string();
  const Outcome ph = invoke({"phantom", "-o", raw, "--cylinders", "1", "--dims", "40,40,40", "--radius-min", "2.5",
                      "--radius-max", "3", "--length-min", "24", "--length-max", "28", "--seed", "5", "--json"});
  ASSERT_EQ(ph.code, 0) << ph.err;
  EXPECT_EQ(ph.json()["cylinders"], 1);
  EXPECT_TRUE(std::filesystem::exists(ph.json()["meta"].get<std::string>()));
  const FiberTable truth = load_fiber_table(ph.json()["truth"].get<std::string>());
  ASSERT_EQ(truth.size(), 1u);

  const Outcome ex = invoke({"extract", raw, "-o", (dir / "out.csv").string()});
  ASSERT_EQ(ex.code, 0) << ex.err;
  const FiberTable found = load_fiber_table(dir / "out.csv");
  ASSERT_EQ(found.size(), 1u);
  EXPECT_NEAR(found.records()[0].straight_length, truth.records()[0].straight_length,
              0.1 * truth.records()[0].straight_length);

  // stdout variant and JSON report
  const Outcome csv = invoke({"extract", raw});
  EXPECT_EQ(parse_csv(csv.out), found);
  const Outcome js = invoke({"extract", raw, "--json"});
  EXPECT_EQ(js.json()["fibers"], 1);
  EXPECT_EQ(js.json()["records"][0]["id"], 1);
}

TEST(CliRender, ZeroVolumeMipIsUniform) {
  TempDir dir;
  const std::string raw = (dir / "zero.raw").string();
  ASSERT_EQ(invoke({"phantom", "-o", raw, "--cylinders", "0", "--dims", "16,16,16", "--background", "0"}).code, 0);
  const std::string png = (dir / "zero.png").string();
  const Outcome r = invoke({"render", raw, "-o", png, "--width", "40", "--height", "30", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto bytes = read_bytes(png);
  EXPECT_EQ(r.json()["content_hash"], fnv1a_hex(bytes));
  const ImageRGBA img = decode_png_rgba(bytes);
  EXPECT_EQ(img.width, 40);
  for (std::size_t i = 0; i < img.pixels.size(); i += 4) {
    ASSERT_EQ(img.pixels[i], img.pixels[0]);
    ASSERT_EQ(img.pixels[i + 1], img.pixels[1]);
    ASSERT_EQ(img.pixels[i + 2], img.pixels[2]);
  }
}

TEST(CliRender, DvrWithTransferFunctionFile) {
  TempDir dir;
  const std::string raw = (dir / "p.raw").string();
  ASSERT_EQ(invoke({"phantom", "-o", raw, "--cylinders", "3", "--dims", "24,24,24", "--length-min", "10",
                 "--length-max", "16"})
                .code,
            0);
  std::ofstream(dir / "tf.json") << R"({"points": [{"x": 0, "rgba": [0, 0, 0, 0]}, {"x": 1, "rgba": [1, 0.5, 0, 0.5]}]})";
  const Outcome r = invoke({"render", raw, "-o", (dir / "d.png").string(), "--mode", "dvr", "--tf",
                     (dir / "tf.json").string(), "--width", "32", "--height", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ofstream(dir / "bad_tf.json") << R"({"points": [{"x": 0.5, "rgba": [0, 0, 0, 0]}]})";
  const Outcome bad = invoke({"render", raw, "-o", (dir / "e.png").string(), "--mode", "dvr", "--tf",
                       (dir / "bad_tf.json").string()});
  EXPECT_EQ(bad.code, xct::cli::kExitUser);
  EXPECT_NE(bad.err.find("BadTF"), std::string::npos);
}

TEST(CliChart, ScenarioTableHistogramCountsEveryFiber) {
  TempDir dir;
  const std::string csv = (dir / "t.csv").string();
  ASSERT_EQ(invoke({"phantom", "--table", "214", "--dims", "250,250,300", "-o", csv}).code, 0);
  ASSERT_EQ(load_fiber_table(csv).size(), 214u);
  const Outcome r = invoke({"chart", "histogram", csv, "--col", "straight_length", "--bins", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto counts = r.json()["counts"].get<std::vector<std::int64_t>>();
  EXPECT_EQ(counts.size(), 16u);
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}), 214);

  const Outcome sc = invoke({"chart", "scatter3", csv, "--x", "diameter", "--y", "surface_area", "--z", "curved_length"});
  EXPECT_EQ(sc.json()["points"].size(), 214u);
  const Outcome bar = invoke({"chart", "bar", csv, "--group", "theta", "--value", "diameter", "--agg", "mean", "--json"});
  EXPECT_EQ(bar.json()["result"]["bars"].size(), 5u);
  EXPECT_EQ(bar.json()["command"], "chart");
  const Outcome dens = invoke({"chart", "density", csv, "--col", "diameter", "-o", (dir / "d.json").string()});
  EXPECT_EQ(dens.code, 0);
  EXPECT_TRUE(dens.out.empty());
  std::ifstream in(dir / "d.json");
  EXPECT_EQ(nlohmann::json::parse(in)["density"].size(), 256u);
}

TEST(CliChart, IntensityHistogramOfAVolume) {
  TempDir dir;
  const std::string raw = (dir / "v.raw").string();
  ASSERT_EQ(invoke({"phantom", "-o", raw, "--cylinders", "2", "--dims", "20,10,5", "--dtype", "uint16"}).code, 0);
  const Outcome r = invoke({"chart", "intensity", raw, "--bins", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.json()["total"], 1000);
}

TEST(CliDetect, MarkerFrameRoundTrip) {
  TempDir dir;
  for (const char* ext : {".png", ".pgm"}) {
    const std::string frame = (dir / (std::string("f") + ext)).string();
    const Outcome ph = invoke({"phantom", "--marker", "3", "9", "--distance", "600", "--spin", "20", "-o", frame, "--json"});
    ASSERT_EQ(ph.code, 0) << ph.err;
    EXPECT_EQ(ph.json()["markers"].size(), 2u);
    const Outcome det = invoke({"detect", frame});
    ASSERT_EQ(det.code, 0) << det.err;
    const auto dets = det.json()["detections"];
    ASSERT_EQ(dets.size(), 2u) << ext;
    std::set<int> ids{dets[0]["id"].get<int>(), dets[1]["id"].get<int>()};
    EXPECT_EQ(ids, (std::set<int>{3, 9}));
    // reported corners agree with the generator's projections
    for (const auto& d : dets) {
      for (const auto& t : ph.json()["markers"]) {
        if (t["id"] != d["id"]) continue;
        for (int c = 0; c < 4; ++c) {
          EXPECT_NEAR(d["corners"][c][0].get<double>(), t["corners"][c][0].get<double>(), 0.5);
          EXPECT_NEAR(d["corners"][c][1].get<double>(), t["corners"][c][1].get<double>(), 0.5);
        }
      }
    }
  }
}

TEST(CliDictionary, PrintsAParsableDictionary) {
  const Outcome r = invoke({"dictionary", "--count", "12"});
  ASSERT_EQ(r.code, 0);
  const MarkerDictionary d = parse_marker_dictionary(r.out);
  EXPECT_EQ(d.markers().size(), 12u);
  TempDir dir;
  std::ofstream(dir / "dict.json") << r.out;
  const std::string frame = (dir / "f.png").string();
  ASSERT_EQ(invoke({"phantom", "--marker", "11", "--dict", (dir / "dict.json").string(), "-o", frame}).code, 0);
  const Outcome det = invoke({"detect", frame, "--dict", (dir / "dict.json").string()});
  EXPECT_EQ(det.json()["detections"][0]["id"], 11);
  EXPECT_EQ(invoke({"phantom", "--marker", "40", "--dict", (dir / "dict.json").string(), "-o", frame}).code,
            xct::cli::kExitUser);
}
