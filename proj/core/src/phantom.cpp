#include "xctlab/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "xctlab/error.hpp"
#include "xctlab/fiber_extraction.hpp"

namespace xct {

namespace {

Vec3 random_direction(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

bool inside_capped(const Vec3& p, const Vec3& start, const Vec3& axis, double length, double radius) {
  const Vec3 rel = p - start;
  const double t = dot(rel, axis);
  if (t < 0.0 || t > length) return false;
  const Vec3 radial = rel - t * axis;
  return dot(radial, radial) <= radius * radius;
}

}  // namespace

double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  const Vec3 d1 = p1 - p0;
  const Vec3 d2 = q1 - q0;
  const Vec3 r = p0 - q0;
  const double a = dot(d1, d1);
  const double e = dot(d2, d2);
  const double f = dot(d2, r);
  double s = 0.0;
  double t = 0.0;
  if (a <= 1e-18 && e <= 1e-18) return norm(r);
  if (a <= 1e-18) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = dot(d1, r);
    if (e <= 1e-18) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = dot(d1, d2);
      const double denom = a * e - b * b;
      s = denom > 1e-18 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return distance(p0 + s * d1, q0 + t * d2);
}

Volume render_phantom(const VolumeMeta& meta, const std::vector<CylinderSpec>& cylinders,
                      const PhantomOptions& options) {
  if (options.supersample < 1) throw Error(ErrorCode::InvalidArgument, "supersample must be >= 1");
  const auto& d = meta.dims;
  const auto& sp = meta.spacing;
  const auto& o = meta.origin;
  std::vector<float> coverage(meta.voxel_count(), 0.0f);
  const double half_diag = 0.5 * std::sqrt(sp[0] * sp[0] + sp[1] * sp[1] + sp[2] * sp[2]);
  const int ss = options.supersample;

  for (const auto& cyl : cylinders) {
    const double length = distance(cyl.start, cyl.end);
    if (!(length > 0.0) || !(cyl.radius > 0.0)) continue;
    const Vec3 axis = (cyl.end - cyl.start) / length;
    std::array<std::int64_t, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
      const int ai = static_cast<int>(a);
      const double mn = std::min(cyl.start[ai], cyl.end[ai]) - cyl.radius - sp[a];
      const double mx = std::max(cyl.start[ai], cyl.end[ai]) + cyl.radius + sp[a];
      lo[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((mn - o[a]) / sp[a])), 0, d[a] - 1);
      hi[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil((mx - o[a]) / sp[a])), 0, d[a] - 1);
    }
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
          const Vec3 c{o[0] + static_cast<double>(x) * sp[0], o[1] + static_cast<double>(y) * sp[1],
                       o[2] + static_cast<double>(z) * sp[2]};
          const Vec3 rel = c - cyl.start;
          const double t = dot(rel, axis);
          const double rho = norm(rel - t * axis);
          double cov;
          if (rho <= cyl.radius - half_diag && t >= half_diag && t <= length - half_diag) {
            cov = 1.0;
          } else if (rho >= cyl.radius + half_diag || t <= -half_diag || t >= length + half_diag) {
            cov = 0.0;
          } else {
            int inside = 0;
            for (int k = 0; k < ss; ++k)
              for (int j = 0; j < ss; ++j)
                for (int i = 0; i < ss; ++i) {
                  const Vec3 p = c + Vec3{((i + 0.5) / ss - 0.5) * sp[0], ((j + 0.5) / ss - 0.5) * sp[1],
                                          ((k + 0.5) / ss - 0.5) * sp[2]};
                  if (inside_capped(p, cyl.start, axis, length, cyl.radius)) ++inside;
                }
            cov = static_cast<double>(inside) / static_cast<double>(ss * ss * ss);
          }
          auto& slot = coverage[static_cast<std::size_t>(x + d[0] * (y + d[1] * z))];
          slot = std::max(slot, static_cast<float>(cov));
        }
  }

  Rng rng(options.seed);
  std::vector<float> values(coverage.size());
  double vmax = 0.0;
  switch (meta.dtype) {
    case DType::UInt8: vmax = 255.0; break;
    case DType::UInt16: vmax = 65535.0; break;
    case DType::Float32: vmax = 0.0; break;
  }
  for (std::size_t i = 0; i < coverage.size(); ++i) {
    double v = options.background + (options.foreground - options.background) * coverage[i];
    if (options.noise_sigma > 0.0) v += rng.normal(0.0, options.noise_sigma);
    if (meta.dtype != DType::Float32) v = std::clamp(std::round(v), 0.0, vmax);
    values[i] = static_cast<float>(v);
  }
  return Volume(meta, std::move(values));
}

std::vector<CylinderSpec> random_cylinders(Rng& rng, const VolumeMeta& meta, const RandomCylinderOptions& opt) {
  const double vox = meta.min_spacing();
  std::vector<CylinderSpec> out;
  for (int attempt = 0; attempt < opt.max_attempts && static_cast<int>(out.size()) < opt.count; ++attempt) {
    CylinderSpec c;
    c.radius = rng.uniform(opt.radius_min, opt.radius_max) * vox;
    const double length = rng.uniform(opt.length_min, opt.length_max) * vox;
    const Vec3 dir = random_direction(rng);
    Vec3 center;
    for (int a = 0; a < 3; ++a) {
      const auto au = static_cast<std::size_t>(a);
      const double lo = meta.origin[au];
      const double hi = meta.origin[au] + static_cast<double>(meta.dims[au] - 1) * meta.spacing[au];
      center[a] = rng.uniform(lo, hi);
    }
    c.start = center - 0.5 * length * dir;
    c.end = center + 0.5 * length * dir;
    bool ok = true;
    for (int a = 0; a < 3 && ok; ++a) {
      const auto au = static_cast<std::size_t>(a);
      const double clear = c.radius + opt.margin * vox;
      const double lo = meta.origin[au] + clear;
      const double hi = meta.origin[au] + static_cast<double>(meta.dims[au] - 1) * meta.spacing[au] - clear;
      ok = std::min(c.start[a], c.end[a]) >= lo && std::max(c.start[a], c.end[a]) <= hi;
    }
    for (const auto& other : out) {
      if (!ok) break;
      ok = segment_distance(c.start, c.end, other.start, other.end) >= c.radius + other.radius + opt.min_gap * vox;
    }
    if (ok) out.push_back(c);
  }
  return out;
}

FiberTable cylinder_table(const std::vector<CylinderSpec>& cylinders) {
  FiberTable table;
  std::int64_t id = 1;
  for (const auto& c : cylinders) {
    FiberTrace trace;
    trace.points = {c.start, c.end};
    trace.radius_estimates = {c.radius, c.radius};
    trace.responses = {0.0, 0.0};
    table.add(characterize(trace, id++));
  }
  return table;
}

FiberTable random_fiber_table(Rng& rng, int count, const Vec3& extent) {
  const double scale = std::min({extent.x, extent.y, extent.z});
  FiberTable table;
  for (int id = 1; id <= count; ++id) {
    const double curved = rng.uniform(0.08, 0.35) * scale;
    const double ratio = rng.uniform(1.0, 1.12);
    // Arc with arc/chord = ratio: solve sin(h)/h = 1/ratio for the half angle h.
    double lo = 0.0, hi = kPi;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      ((mid == 0.0 ? 1.0 : std::sin(mid) / mid) > 1.0 / ratio ? lo : hi) = mid;
    }
    const double half_angle = 0.5 * (lo + hi);
    const Vec3 dir = random_direction(rng);
    const Vec3 ref = std::abs(dir.z) > 0.9 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
    const Vec3 bend = normalized(cross(ref, dir));
    const Vec3 center{rng.uniform(0.2, 0.8) * extent.x, rng.uniform(0.2, 0.8) * extent.y,
                      rng.uniform(0.2, 0.8) * extent.z};
    FiberTrace trace;
    constexpr int kPoints = 33;
    const double radius = rng.uniform(0.006, 0.02) * scale;
    for (int k = 0; k < kPoints; ++k) {
      const double u = static_cast<double>(k) / (kPoints - 1);
      Vec3 p;
      if (half_angle < 1e-9) {
        p = center + (u - 0.5) * curved * dir;
      } else {
        const double r_arc = curved / (2.0 * half_angle);
        const double a = (2.0 * u - 1.0) * half_angle;
        p = center + r_arc * std::sin(a) * dir + r_arc * (std::cos(a) - std::cos(half_angle)) * bend;
      }
      trace.points.push_back(p);
      trace.radius_estimates.push_back(radius * rng.uniform(0.9, 1.1));
      trace.responses.push_back(rng.uniform(0.2, 0.8));
    }
    table.add(characterize(trace, id));
  }
  return table;
}

}  // namespace xct
