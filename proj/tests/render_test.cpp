#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "render_oracles.hpp"
#include "test_support.hpp"
#include "xctlab/error.hpp"
#include "xctlab/fiber_extraction.hpp"
#include "xctlab/random.hpp"
#include "xctlab/render.hpp"

using namespace xct;

using namespace xct::testing;

// ---------------------------------------------------------------- sampling

TEST(Trilinear, VoxelCentresAreExact) {
  const Volume v = random_volume(6, 1);
  for (std::int64_t z = 0; z < 6; ++z)
    for (std::int64_t y = 0; y < 6; ++y)
      for (std::int64_t x = 0; x < 6; ++x)
        ASSERT_DOUBLE_EQ(sample_trilinear(v, {double(x), double(y), double(z)}), v.normalized(x, y, z));
}

TEST(Trilinear, ReproducesLinearFields) {
  Rng rng(77);
  for (int field = 0; field < 5; ++field) {
    VolumeMeta m = cube_meta(10, DType::Float32);
    m.spacing = {rng.uniform(0.2, 2), rng.uniform(0.2, 2), rng.uniform(0.2, 2)};
    m.origin = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const double a = rng.uniform(0, 0.05), b = rng.uniform(-0.015, 0.015), c = rng.uniform(-0.015, 0.015),
                 d = rng.uniform(-0.015, 0.015);
    auto f = [&](const Vec3& p) { return 0.45 + a + b * (p.x - m.origin[0]) / m.spacing[0] + c * (p.y - m.origin[1]) / m.spacing[1] + d * (p.z - m.origin[2]) / m.spacing[2]; };
    std::vector<float> vals(m.voxel_count());
    for (std::int64_t z = 0; z < 10; ++z)
      for (std::int64_t y = 0; y < 10; ++y)
        for (std::int64_t x = 0; x < 10; ++x)
          vals[static_cast<std::size_t>(x + 10 * (y + 10 * z))] = static_cast<float>(
              f({m.origin[0] + x * m.spacing[0], m.origin[1] + y * m.spacing[1], m.origin[2] + z * m.spacing[2]}));
    const Volume v(m, vals, 0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p{m.origin[0] + rng.uniform(0, 9) * m.spacing[0], m.origin[1] + rng.uniform(0, 9) * m.spacing[1],
                   m.origin[2] + rng.uniform(0, 9) * m.spacing[2]};
      ASSERT_NEAR(sample_trilinear(v, p), f(p), 1e-6);
    }
  }
}

TEST(Trilinear, OutsideTheBoxIsZeroAndOuterHalfVoxelClamps) {
  const Volume v = constant_volume(4, 0.6f);
  EXPECT_EQ(sample_trilinear(v, {-0.6, 1, 1}), 0.0);
  EXPECT_EQ(sample_trilinear(v, {1, 1, 3.6}), 0.0);
  EXPECT_EQ(sample_trilinear(v, {1, 1, 1e9}), 0.0);
  EXPECT_NEAR(sample_trilinear(v, {-0.4, 1, 1}), 0.6, 1e-7);
  EXPECT_NEAR(sample_trilinear(v, {3.4, 3.4, 3.4}), 0.6, 1e-7);
}

// ---------------------------------------------------------------- camera and TF

TEST(Camera, LookAtCentresTheTarget) {
  const Camera cam = Camera::look_at({10, -20, 30}, {1, 2, 3}, {0, 0, 1}, 40.0);
  const Ray r = pixel_ray(cam, 50, 50, 101, 101);
  const Vec3 to_target = normalized(Vec3{1, 2, 3} - Vec3{10, -20, 30});
  EXPECT_NEAR(dot(r.direction, to_target), 1.0, 1e-12);
  EXPECT_NEAR(norm(r.direction), 1.0, 1e-12);
}

TEST(Camera, ImageAxesFollowUpAndRight) {
  const Camera cam = Camera::look_at({0, 0, 10}, {0, 0, 0}, {0, 1, 0}, 60.0);
  EXPECT_GT(pixel_ray(cam, 0, 5, 11, 11).direction.x, 0.0 - 1.0);  // finite
  EXPECT_LT(pixel_ray(cam, 0, 5, 11, 11).direction.x, 0.0);         // left column looks to -x
  EXPECT_GT(pixel_ray(cam, 5, 0, 11, 11).direction.y, 0.0);         // top row looks to +y
}

TEST(Camera, OrbitPlacesEyeOnTheSphere) {
  const Camera cam = Camera::orbit({1, 1, 1}, 10.0, 90.0, 0.0, 45.0);
  EXPECT_NEAR(cam.pose.translation.x, 1.0, 1e-9);
  EXPECT_NEAR(cam.pose.translation.y, 11.0, 1e-9);
  EXPECT_NEAR(cam.pose.translation.z, 1.0, 1e-9);
  const Camera top = Camera::orbit({0, 0, 0}, 5.0, 0.0, 90.0, 45.0);  // degenerate up vector
  EXPECT_NO_THROW(top.validate());
  EXPECT_THROW(Camera::orbit({0, 0, 0}, 0.0, 0, 0), Error);
}

TEST(Camera, ValidateRejectsBadFovAndNear) {
  Camera c;
  c.fov_y_deg = 180.0;
  EXPECT_THROW(c.validate(), Error);
  c.fov_y_deg = 45.0;
  c.near = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TransferFunctions, PiecewiseLinearAndContinuous) {
  const TransferFunction tf({{0.0, {0, 0, 0, 0}}, {0.25, {1, 0, 0, 0.5}}, {1.0, {1, 1, 1, 1}}});
  const auto mid = tf.evaluate(0.125);
  EXPECT_NEAR(mid[0], 0.5, 1e-12);
  EXPECT_NEAR(mid[3], 0.25, 1e-12);
  const auto knot = tf.evaluate(0.25);
  const auto left = tf.evaluate(0.25 - 1e-9), right = tf.evaluate(0.25 + 1e-9);
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(left[c], knot[c], 1e-8);
    EXPECT_NEAR(right[c], knot[c], 1e-8);
  }
  EXPECT_EQ(tf.evaluate(2.0), tf.evaluate(1.0));
  EXPECT_EQ(tf.evaluate(-1.0), tf.evaluate(0.0));
}

TEST(TransferFunctions, InvalidDefinitionsAreBadTF) {
  auto code = [](std::vector<TransferFunction::ControlPoint> pts) {
    try {
      TransferFunction tf(std::move(pts));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code({{0.0, {0, 0, 0, 0}}}), ErrorCode::BadTF);
  EXPECT_EQ(code({{0.1, {0, 0, 0, 0}}, {1.0, {1, 1, 1, 1}}}), ErrorCode::BadTF);
  EXPECT_EQ(code({{0.0, {0, 0, 0, 0}}, {0.5, {0, 0, 0, 0}}, {0.5, {0, 0, 0, 0}}, {1.0, {1, 1, 1, 1}}}), ErrorCode::BadTF);
  EXPECT_EQ(code({{0.0, {0, 0, 0, 0}}, {1.0, {1, 1, 1.5, 1}}}), ErrorCode::BadTF);
  EXPECT_THROW(parse_transfer_function("{"), Error);
  EXPECT_THROW(parse_transfer_function(R"({"points": [{"x": 0, "rgba": [0, 0, 0]}]})"), Error);
}

TEST(TransferFunctions, JsonRoundTrip) {
  const TransferFunction tf({{0.0, {0, 0.1, 0.2, 0}}, {0.3, {0.5, 0.25, 0.125, 0.75}}, {1.0, {1, 1, 1, 1}}});
  const TransferFunction back = parse_transfer_function(format_transfer_function(tf));
  ASSERT_EQ(back.points().size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.points()[i].intensity, tf.points()[i].intensity);
    EXPECT_EQ(back.points()[i].rgba, tf.points()[i].rgba);
  }
}

// ---------------------------------------------------------------- MIP

TEST(Mip, SingleBrightVoxelLandsOnItsProjection) {
  VolumeMeta m = cube_meta(16, DType::Float32);
  std::vector<float> vals(m.voxel_count(), 0.0f);
  const Vec3 voxel{11, 4, 7};
  vals[static_cast<std::size_t>(11 + 16 * (4 + 16 * 7))] = 1.0f;
  const Volume v(m, vals, 0.0, 1.0);
  const Camera cam = Camera::look_at({7.5, 7.5, 60}, {7.5, 7.5, 7.5}, {0, 1, 0}, 30.0);
  const int w = 64, h = 48;
  const ImageRGBA img = render_mip(v, cam, w, h);
  // pinhole projection oracle
  const Vec3 pc = cam.pose.rotation.conjugate().rotate(voxel - cam.pose.translation);
  const double t = std::tan(deg_to_rad(15.0));
  const double px = ((pc.x / -pc.z) / (t * w / h) + 1.0) * w / 2.0 - 0.5;
  const double py = (1.0 - (pc.y / -pc.z) / t) * h / 2.0 - 0.5;
  int bx = 0, by = 0, best = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (img.at(x, y)[0] > best) {
        best = img.at(x, y)[0];
        bx = x;
        by = y;
      }
  EXPECT_GT(best, 0);
  EXPECT_LE(std::abs(bx - px), 1.0);
  EXPECT_LE(std::abs(by - py), 1.0);
}

TEST(Mip, ZeroVolumeGivesUniformBackground) {
  const Volume v = constant_volume(8, 0.0f);
  RenderOptions opts;
  opts.background = {0.2, 0.4, 0.6, 1.0};
  const ImageRGBA img = render_mip(v, axis_camera(v, 30), 20, 20, opts);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) {
      EXPECT_EQ(img.at(x, y)[0], 51);
      EXPECT_EQ(img.at(x, y)[1], 102);
      EXPECT_EQ(img.at(x, y)[2], 153);
      EXPECT_EQ(img.at(x, y)[3], 255);
    }
}

// Sampled maxima can only miss the true one by slope times half a step, so the
// gap to a dense oracle is bounded by the field's Lipschitz constant.
TEST(Mip, DenseOracleGapIsBoundedBySlope) {
  const Volume v = random_volume(16, 3);
  double jump = 0.0;
  for (std::int64_t z = 0; z < 16; ++z)
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t x = 0; x < 16; ++x) {
        if (x + 1 < 16) jump = std::max(jump, std::abs(v.normalized(x + 1, y, z) - v.normalized(x, y, z)));
        if (y + 1 < 16) jump = std::max(jump, std::abs(v.normalized(x, y + 1, z) - v.normalized(x, y, z)));
        if (z + 1 < 16) jump = std::max(jump, std::abs(v.normalized(x, y, z + 1) - v.normalized(x, y, z)));
      }
  const double lipschitz = jump * std::sqrt(3.0);
  const Camera cam = Camera::orbit(centre(v), 45.0, 30.0, 25.0, 35.0);
  for (double step : {0.5, 0.05}) {
    RenderOptions opts;
    opts.step = step;
    const ImageRGBA img = render_mip(v, cam, 32, 32, opts);
    const double bound = lipschitz * (step + 0.01) / 2.0 * 255.0 + 1.0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double oracle = dense_mip(v, pixel_ray(cam, x, y, 32, 32), 0.01);
        ASSERT_LE(std::abs(img.at(x, y)[0] - oracle * 255), bound) << x << "," << y << " step " << step;
      }
  }
}

TEST(Mip, ReversedViewIsTheMirrorImage) {
  const Volume v = smooth_volume(16, 5);
  const Vec3 c = centre(v);
  // near-orthographic so both cameras trace the same lines
  const Camera front = Camera::look_at(c + Vec3{0, 0, 20000}, c, {0, 1, 0}, 0.05);
  const Camera back = Camera::look_at(c - Vec3{0, 0, 20000}, c, {0, 1, 0}, 0.05);
  const int n = 24;
  const ImageRGBA a = render_mip(v, front, n, n);
  const ImageRGBA b = render_mip(v, back, n, n);
  int worst = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) worst = std::max(worst, std::abs(int(a.at(x, y)[0]) - int(b.at(n - 1 - x, y)[0])));
  EXPECT_LE(worst, 1);
}

TEST(Mip, ModelPoseMovesTheVolume) {
  const Volume v = smooth_volume(12, 6);
  const Camera cam = Camera::orbit(centre(v), 40.0, 10.0, 20.0, 40.0);
  RenderOptions moved;
  moved.model.translation = {3, -2, 1};
  Camera shifted = cam;
  shifted.pose.translation = cam.pose.translation - moved.model.translation;
  EXPECT_LE(max_channel_diff(render_mip(v, cam, 24, 24, moved), render_mip(v, shifted, 24, 24)), 1);
}

TEST(Mip, DeterministicBytes) {
  const Volume v = random_volume(16, 7);
  const Camera cam = Camera::orbit(centre(v), 40.0, 33.0, 12.0, 40.0);
  EXPECT_EQ(render_mip(v, cam, 40, 30), render_mip(v, cam, 40, 30));
}

TEST(Mip, CameraInsideTheVolumeStillRenders) {
  const Volume v = constant_volume(10, 0.5f);
  const Camera cam = Camera::look_at(centre(v), centre(v) + Vec3{1, 0, 0}, {0, 0, 1}, 60.0);
  const ImageRGBA img = render_mip(v, cam, 8, 8);
  EXPECT_EQ(img.at(4, 4)[0], 128);
}

TEST(Mip, RejectsEmptyImages) {
  const Volume v = constant_volume(4, 0.5f);
  EXPECT_THROW(render_mip(v, axis_camera(v, 10), 0, 5), Error);
}

// ---------------------------------------------------------------- DVR

TEST(Dvr, TransparentTfGivesBackground) {
  const Volume v = random_volume(8, 8);
  RenderOptions opts;
  opts.background = {0.1, 0.2, 0.3, 1.0};
  const ImageRGBA img = render_dvr(v, flat_tf({1, 0, 0, 0}), axis_camera(v, 30), 16, 16, opts);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      EXPECT_EQ(img.at(x, y)[0], 26);
      EXPECT_EQ(img.at(x, y)[1], 51);
      EXPECT_EQ(img.at(x, y)[2], 77);
    }
}

TEST(Dvr, HomogeneousVolumeMatchesClosedFormSeries) {
  struct Case {
    double alpha, step, spacing;
    std::int64_t n;
  };
  for (const Case& k : {Case{0.02, 0.5, 1.0, 16}, Case{0.1, 0.3, 1.0, 16}, Case{0.05, 0.35, 0.5, 20},
                        Case{0.4, 0.5, 1.0, 16}}) {
    const Volume v = constant_volume(k.n, 0.7f, k.spacing);
    const std::array<double, 4> rgba{0.9, 0.5, 0.2, k.alpha};
    const std::array<double, 4> bg{0.1, 0.2, 0.3, 1.0};
    RenderOptions opts;
    opts.step = k.step;
    opts.background = bg;
    // odd image so the centre pixel ray runs straight down the z axis of the box
    const ImageRGBA img = render_dvr(v, flat_tf(rgba), axis_camera(v, 100), 9, 9, opts);
    const double length = static_cast<double>(k.n) * k.spacing;
    const auto expect = closed_form_series(length, k.step, k.spacing, rgba, bg);
    for (int c = 0; c < 4; ++c) {
      EXPECT_LE(std::abs(img.at(4, 4)[c] - expect[static_cast<std::size_t>(c)] * 255.0), 2.0)
          << "alpha " << k.alpha << " channel " << c;
    }
  }
}

TEST(Dvr, OpacityCorrectionMakesStepSizeIrrelevant) {
  const Volume v = smooth_volume(16, 9);
  const TransferFunction tf({{0.0, {0, 0, 0, 0}}, {0.5, {0.2, 0.6, 1.0, 0.03}}, {1.0, {1, 0.8, 0.3, 0.12}}});
  const Camera cam = Camera::orbit(centre(v), 45.0, 20.0, 30.0, 35.0);
  RenderOptions coarse, fine;
  coarse.step = 0.5;
  fine.step = 0.25;
  const ImageRGBA a = render_dvr(v, tf, cam, 32, 32, coarse);
  const ImageRGBA b = render_dvr(v, tf, cam, 32, 32, fine);
  EXPECT_LT(std::abs(int(a.at(16, 16)[0]) - int(b.at(16, 16)[0])), 2);
  EXPECT_LE(max_channel_diff(a, b), 2);
}

TEST(Dvr, MoreOpacityNeverThinsAPixel) {
  const Volume v = smooth_volume(16, 10);
  const Camera cam = Camera::orbit(centre(v), 45.0, 50.0, 10.0, 35.0);
  RenderOptions opts;
  opts.background = {0, 0, 0, 0};  // output alpha is then the accumulated opacity
  ImageRGBA prev;
  for (double a : {0.0, 0.01, 0.03, 0.1, 0.3, 0.6}) {
    const TransferFunction tf({{0.0, {1, 1, 1, 0.2 * a}}, {1.0, {1, 1, 1, a}}});
    const ImageRGBA img = render_dvr(v, tf, cam, 24, 24, opts);
    if (!prev.pixels.empty()) {
      for (std::size_t i = 3; i < img.pixels.size(); i += 4) {
        // past the 0.99 cut-off both rays have stopped; only the stopping point differs
        if (prev.pixels[i] >= 252) continue;
        ASSERT_GE(img.pixels[i], prev.pixels[i]) << "alpha " << a;
      }
    }
    prev = img;
  }
}

TEST(Dvr, EarlyTerminationCapsAccumulation) {
  const Volume v = constant_volume(16, 1.0f);
  RenderOptions opts;
  opts.background = {0, 0, 0, 0};
  const ImageRGBA img = render_dvr(v, flat_tf({1, 1, 1, 0.9}), axis_camera(v, 100), 5, 5, opts);
  EXPECT_GE(img.at(2, 2)[3], 252);
}

TEST(Dvr, DeterministicBytes) {
  const Volume v = random_volume(16, 11);
  const Camera cam = Camera::orbit(centre(v), 40.0, 70.0, -15.0, 40.0);
  const auto tf = TransferFunction::grayscale_ramp(0.2);
  EXPECT_EQ(render_dvr(v, tf, cam, 33, 17), render_dvr(v, tf, cam, 33, 17));
}
