#include "xctlab/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "xctlab/error.hpp"
#include "xctlab/parallel.hpp"

namespace xct {

namespace {

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct Span {
  double t0 = 0.0;
  double t1 = 0.0;
  bool hit = false;
};

/// Slab test against the voxel-cell box in the volume frame, clipped to [t_min, inf).
Span clip_to_box(const Volume& volume, const Ray& ray, double t_min) {
  const auto& meta = volume.meta();
  double t0 = t_min;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = meta.origin[a] - 0.5 * meta.spacing[a];
    const double hi = meta.origin[a] + (static_cast<double>(meta.dims[a]) - 0.5) * meta.spacing[a];
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-12) {
      if (o <= lo || o >= hi) return {};
      continue;
    }
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return {};
  return {t0, t1, true};
}

struct Sampling {
  double step;
  double reference_step;
};

Sampling resolve_steps(const Volume& volume, const RenderOptions& options) {
  const double min_spacing = volume.meta().min_spacing();
  Sampling s{options.step > 0.0 ? options.step : 0.5 * min_spacing,
             options.reference_step > 0.0 ? options.reference_step : min_spacing};
  return s;
}

/// Calls visit(value, segment_length) for each segment midpoint; stops when visit returns false.
template <typename Visit>
void march(const Volume& volume, const Ray& ray, const Span& span, double step, Visit&& visit) {
  const double length = span.t1 - span.t0;
  const auto segments = static_cast<std::int64_t>(std::ceil(length / step - 1e-9));
  for (std::int64_t k = 0; k < std::max<std::int64_t>(segments, 1); ++k) {
    const double a = span.t0 + static_cast<double>(k) * step;
    const double b = std::min(span.t1, a + step);
    if (!(b > a)) break;
    const Vec3 p = ray.origin + (0.5 * (a + b)) * ray.direction;
    if (!visit(sample_trilinear(volume, p), b - a)) break;
  }
}

/// Ray in the volume frame plus the near-plane clamp expressed in that frame's t.
struct ModelRay {
  Ray ray;
  double t_min;
};

ModelRay model_ray(const Camera& camera, const Pose6DoF& to_model, int px, int py, int w, int h) {
  const Ray world = pixel_ray(camera, px, py, w, h);
  const Vec3 forward = normalized(camera.pose.rotation.rotate({0.0, 0.0, -1.0}));
  const double cos_forward = std::max(dot(world.direction, forward), 1e-12);
  const double t_near_world = camera.near / cos_forward;
  const Vec3 origin = to_model.apply(world.origin);
  const Vec3 dir = to_model.apply_vector(world.direction);
  const double len = norm(dir);
  return {{origin, dir / len}, t_near_world * len};
}

template <typename Shade>
ImageRGBA render_rows(int width, int height, Shade&& shade) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "image size must be >= 1");
  ImageRGBA image(width, height);
  parallel_for(
      height,
      [&](std::int64_t begin, std::int64_t end) {
        for (auto y = begin; y < end; ++y) {
          for (int x = 0; x < width; ++x) {
            const auto rgba = shade(x, static_cast<int>(y));
            std::uint8_t* px = image.at(x, static_cast<int>(y));
            for (int c = 0; c < 4; ++c) px[c] = to_u8(rgba[static_cast<std::size_t>(c)]);
          }
        }
      },
      8);
  return image;
}

}  // namespace

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg) {
  const Vec3 back = eye - target;
  if (norm(back) <= 0.0) throw Error(ErrorCode::InvalidArgument, "camera eye and target coincide");
  const Vec3 z = normalized(back);
  Vec3 x = cross(up, z);
  if (norm(x) < 1e-9) x = cross(std::abs(z.y) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0}, z);
  x = normalized(x);
  const Vec3 y = cross(z, x);
  Camera cam;
  cam.pose.rotation = Quat::from_matrix(Mat3::from_columns(x, y, z)).normalized();
  cam.pose.translation = eye;
  cam.fov_y_deg = fov_y_deg;
  return cam;
}

Camera Camera::orbit(const Vec3& target, double distance, double azimuth_deg, double elevation_deg,
                     double fov_y_deg) {
  if (!(distance > 0.0)) throw Error(ErrorCode::InvalidArgument, "orbit distance must be > 0");
  const double az = deg_to_rad(azimuth_deg);
  const double el = deg_to_rad(elevation_deg);
  const Vec3 offset{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  return look_at(target + distance * offset, target, {0.0, 0.0, 1.0}, fov_y_deg);
}

void Camera::validate() const {
  pose.validate();
  if (!(fov_y_deg > 0.0 && fov_y_deg < 180.0)) {
    throw Error(ErrorCode::InvalidArgument, "fov must lie in (0, 180) degrees");
  }
  if (!(near > 0.0)) throw Error(ErrorCode::InvalidArgument, "near must be > 0");
}

Ray pixel_ray(const Camera& camera, int px, int py, int width, int height) {
  const double tan_half = std::tan(0.5 * deg_to_rad(camera.fov_y_deg));
  const double aspect = static_cast<double>(width) / static_cast<double>(height);
  const double sx = (2.0 * (px + 0.5) / width - 1.0) * tan_half * aspect;
  const double sy = (1.0 - 2.0 * (py + 0.5) / height) * tan_half;
  const Vec3 dir = camera.pose.rotation.rotate({sx, sy, -1.0});
  return {camera.pose.translation, normalized(dir)};
}

TransferFunction::TransferFunction(std::vector<ControlPoint> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw Error(ErrorCode::BadTF, "transfer function needs at least 2 points");
  if (points_.front().intensity != 0.0 || points_.back().intensity != 1.0) {
    throw Error(ErrorCode::BadTF, "transfer function must start at 0 and end at 1");
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (i > 0 && !(points_[i].intensity > points_[i - 1].intensity)) {
      throw Error(ErrorCode::BadTF, "intensities must be strictly increasing (point " + std::to_string(i) + ")");
    }
    for (const double c : points_[i].rgba) {
      if (!(c >= 0.0 && c <= 1.0)) {
        throw Error(ErrorCode::BadTF, "rgba components must lie in [0,1] (point " + std::to_string(i) + ")");
      }
    }
  }
}

TransferFunction TransferFunction::grayscale_ramp(double max_alpha) {
  return TransferFunction({{0.0, {0.0, 0.0, 0.0, 0.0}}, {1.0, {1.0, 1.0, 1.0, max_alpha}}});
}

std::array<double, 4> TransferFunction::evaluate(double intensity) const {
  const double x = std::clamp(intensity, 0.0, 1.0);
  auto hi = std::upper_bound(points_.begin(), points_.end(), x,
                             [](double v, const ControlPoint& p) { return v < p.intensity; });
  if (hi == points_.end()) return points_.back().rgba;
  const auto lo = std::prev(hi);
  const double f = (x - lo->intensity) / (hi->intensity - lo->intensity);
  std::array<double, 4> out{};
  for (std::size_t c = 0; c < 4; ++c) out[c] = lo->rgba[c] + f * (hi->rgba[c] - lo->rgba[c]);
  return out;
}

TransferFunction parse_transfer_function(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadTF, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("points") || !doc["points"].is_array()) {
    throw Error(ErrorCode::BadTF, "expected an object with a \"points\" array");
  }
  std::vector<TransferFunction::ControlPoint> points;
  for (const auto& p : doc["points"]) {
    if (!p.is_object() || !p.contains("x") || !p["x"].is_number() || !p.contains("rgba") ||
        !p["rgba"].is_array() || p["rgba"].size() != 4) {
      throw Error(ErrorCode::BadTF, "each point needs a numeric \"x\" and a 4-element \"rgba\"");
    }
    TransferFunction::ControlPoint cp{p["x"].get<double>(), {}};
    for (std::size_t c = 0; c < 4; ++c) {
      if (!p["rgba"][c].is_number()) throw Error(ErrorCode::BadTF, "rgba components must be numbers");
      cp.rgba[c] = p["rgba"][c].get<double>();
    }
    points.push_back(cp);
  }
  return TransferFunction(std::move(points));
}

std::string format_transfer_function(const TransferFunction& tf) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : tf.points()) points.push_back({{"x", p.intensity}, {"rgba", p.rgba}});
  return nlohmann::json{{"points", points}}.dump();
}

double sample_trilinear(const Volume& volume, const Vec3& p) {
  const auto& meta = volume.meta();
  std::array<double, 3> c{};
  for (int a = 0; a < 3; ++a) {
    const double idx = (p[a] - meta.origin[a]) / meta.spacing[a];
    const auto n = static_cast<double>(meta.dims[a]);
    if (!(idx >= -0.5 && idx <= n - 0.5)) return 0.0;
    c[static_cast<std::size_t>(a)] = std::clamp(idx, 0.0, n - 1.0);
  }
  std::array<std::int64_t, 3> i0{};
  std::array<std::int64_t, 3> i1{};
  std::array<double, 3> f{};
  for (std::size_t a = 0; a < 3; ++a) {
    const auto last = meta.dims[a] - 1;
    i0[a] = std::min(static_cast<std::int64_t>(std::floor(c[a])), last);
    i1[a] = std::min(i0[a] + 1, last);
    f[a] = c[a] - static_cast<double>(i0[a]);
  }
  auto v = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return static_cast<double>(volume.at(volume.index(x, y, z)));
  };
  const double c00 = v(i0[0], i0[1], i0[2]) * (1 - f[0]) + v(i1[0], i0[1], i0[2]) * f[0];
  const double c10 = v(i0[0], i1[1], i0[2]) * (1 - f[0]) + v(i1[0], i1[1], i0[2]) * f[0];
  const double c01 = v(i0[0], i0[1], i1[2]) * (1 - f[0]) + v(i1[0], i0[1], i1[2]) * f[0];
  const double c11 = v(i0[0], i1[1], i1[2]) * (1 - f[0]) + v(i1[0], i1[1], i1[2]) * f[0];
  const double c0 = c00 * (1 - f[1]) + c10 * f[1];
  const double c1 = c01 * (1 - f[1]) + c11 * f[1];
  return volume.normalize(c0 * (1 - f[2]) + c1 * f[2]);
}

ImageRGBA render_mip(const Volume& volume, const Camera& camera, int width, int height,
                     const RenderOptions& options) {
  camera.validate();
  options.model.validate();
  const Sampling s = resolve_steps(volume, options);
  const Pose6DoF to_model = inverse(options.model);
  const auto& bg = options.background;
  return render_rows(width, height, [&](int x, int y) {
    const ModelRay mr = model_ray(camera, to_model, x, y, width, height);
    const Span span = clip_to_box(volume, mr.ray, mr.t_min);
    if (!span.hit) return bg;
    double peak = 0.0;
    march(volume, mr.ray, span, s.step, [&](double value, double) {
      peak = std::max(peak, value);
      return true;
    });
    // White emission of strength `peak` over the background; on black this is grey(peak).
    std::array<double, 4> out{};
    for (std::size_t c = 0; c < 4; ++c) out[c] = peak + (1.0 - peak) * bg[c];
    return out;
  });
}

ImageRGBA render_dvr(const Volume& volume, const TransferFunction& tf, const Camera& camera, int width,
                     int height, const RenderOptions& options) {
  camera.validate();
  options.model.validate();
  const Sampling s = resolve_steps(volume, options);
  const Pose6DoF to_model = inverse(options.model);
  const auto& bg = options.background;
  return render_rows(width, height, [&](int x, int y) {
    std::array<double, 4> acc{};
    const ModelRay mr = model_ray(camera, to_model, x, y, width, height);
    const Span span = clip_to_box(volume, mr.ray, mr.t_min);
    if (span.hit) {
      march(volume, mr.ray, span, s.step, [&](double value, double segment) {
        const auto rgba = tf.evaluate(value);
        if (rgba[3] <= 0.0) return true;
        const double alpha = 1.0 - std::pow(1.0 - rgba[3], segment / s.reference_step);
        const double weight = (1.0 - acc[3]) * alpha;
        for (std::size_t c = 0; c < 3; ++c) acc[c] += weight * rgba[c];
        acc[3] += weight;
        return acc[3] < 0.99;
      });
    }
    const double rest = 1.0 - acc[3];
    for (std::size_t c = 0; c < 3; ++c) acc[c] += rest * bg[3] * bg[c];
    acc[3] += rest * bg[3];
    return acc;
  });
}

}  // namespace xct
