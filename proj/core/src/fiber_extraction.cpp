#include "xctlab/fiber_extraction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "xctlab/error.hpp"
#include "xctlab/parallel.hpp"

namespace xct {

namespace {

using Dims = std::array<std::int64_t, 3>;

std::int64_t clamp_index(std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); }

/// Trilinear sample in index coordinates, clamped to the grid.
double sample_index(std::span<const float> values, const Dims& d, const Vec3& p) {
  const double px = std::clamp(p.x, 0.0, static_cast<double>(d[0] - 1));
  const double py = std::clamp(p.y, 0.0, static_cast<double>(d[1] - 1));
  const double pz = std::clamp(p.z, 0.0, static_cast<double>(d[2] - 1));
  const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(px), std::max<std::int64_t>(d[0] - 2, 0));
  const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(py), std::max<std::int64_t>(d[1] - 2, 0));
  const auto z0 = std::min<std::int64_t>(static_cast<std::int64_t>(pz), std::max<std::int64_t>(d[2] - 2, 0));
  const double fx = px - static_cast<double>(x0);
  const double fy = py - static_cast<double>(y0);
  const double fz = pz - static_cast<double>(z0);
  const std::int64_t x1 = std::min(x0 + 1, d[0] - 1);
  const std::int64_t y1 = std::min(y0 + 1, d[1] - 1);
  const std::int64_t z1 = std::min(z0 + 1, d[2] - 1);
  auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return static_cast<double>(values[static_cast<std::size_t>(x + d[0] * (y + d[1] * z))]);
  };
  const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
  const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
  const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
  const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

Mat3 hessian_unchecked(std::span<const float> v, const Dims& d, const std::array<double, 3>& sp,
                       std::int64_t x, std::int64_t y, std::int64_t z) {
  const std::int64_t sx = 1;
  const std::int64_t sy = d[0];
  const std::int64_t sz = d[0] * d[1];
  const std::int64_t c = x + d[0] * (y + d[1] * z);
  auto f = [&](std::int64_t off) { return static_cast<double>(v[static_cast<std::size_t>(c + off)]); };
  const double f0 = f(0);
  Mat3 h;
  h(0, 0) = (f(sx) - 2 * f0 + f(-sx)) / (sp[0] * sp[0]);
  h(1, 1) = (f(sy) - 2 * f0 + f(-sy)) / (sp[1] * sp[1]);
  h(2, 2) = (f(sz) - 2 * f0 + f(-sz)) / (sp[2] * sp[2]);
  h(0, 1) = h(1, 0) = (f(sx + sy) - f(sx - sy) - f(-sx + sy) + f(-sx - sy)) / (4 * sp[0] * sp[1]);
  h(0, 2) = h(2, 0) = (f(sx + sz) - f(sx - sz) - f(-sx + sz) + f(-sx - sz)) / (4 * sp[0] * sp[2]);
  h(1, 2) = h(2, 1) = (f(sy + sz) - f(sy - sz) - f(-sy + sz) + f(-sy - sz)) / (4 * sp[1] * sp[2]);
  return h;
}

Vec3 gradient_unchecked(std::span<const float> v, const Dims& d, const std::array<double, 3>& sp,
                        std::int64_t x, std::int64_t y, std::int64_t z) {
  const std::int64_t c = x + d[0] * (y + d[1] * z);
  auto f = [&](std::int64_t off) { return static_cast<double>(v[static_cast<std::size_t>(c + off)]); };
  return {(f(1) - f(-1)) / (2 * sp[0]), (f(d[0]) - f(-d[0])) / (2 * sp[1]),
          (f(d[0] * d[1]) - f(-d[0] * d[1])) / (2 * sp[2])};
}

void sort_by_magnitude(HessianEigen& e) {
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ma = std::abs(e.values[static_cast<std::size_t>(a)]);
    const double mb = std::abs(e.values[static_cast<std::size_t>(b)]);
    return ma < mb || (ma == mb && a < b);
  });
  HessianEigen sorted;
  for (std::size_t i = 0; i < 3; ++i) {
    sorted.values[i] = e.values[static_cast<std::size_t>(order[i])];
    sorted.vectors[i] = e.vectors[static_cast<std::size_t>(order[i])];
  }
  e = sorted;
}

/// Perpendicular unit pair (u, w) for a unit direction, reference +z unless
/// nearly parallel, then +x.
std::pair<Vec3, Vec3> perpendicular_frame(const Vec3& dir) {
  const Vec3 ref = std::abs(dir.z) > 0.9 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
  const Vec3 u = normalized(cross(ref, dir));
  return {u, cross(dir, u)};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

/// State shared by all traces of one extraction run. Positions are in index
/// space; directions and differential quantities are physical (mm).
class Tracer {
 public:
  Tracer(const Volume& raw, const Volume& blurred, const TubularityField& field, const ExtractionConfig& cfg)
      : raw_(raw),
        blurred_(blurred),
        field_(field),
        cfg_(cfg),
        d_(raw.dims()),
        sp_(raw.meta().spacing),
        min_sp_(raw.meta().min_spacing()),
        consumed_(raw.size(), 0) {}

  std::vector<FiberTrace> run();

 private:
  struct Probe {
    HessianEigen eigen;
    Vec3 gradient;
    double response = 0.0;
  };

  [[nodiscard]] bool interior(const Vec3& q) const {
    for (int a = 0; a < 3; ++a) {
      if (!(q[a] >= 1.0 && q[a] <= static_cast<double>(d_[static_cast<std::size_t>(a)] - 2))) return false;
    }
    return true;
  }

  [[nodiscard]] Vec3 to_index_delta(const Vec3& mm) const { return {mm.x / sp_[0], mm.y / sp_[1], mm.z / sp_[2]}; }
  [[nodiscard]] Vec3 to_mm_delta(const Vec3& idx) const { return {idx.x * sp_[0], idx.y * sp_[1], idx.z * sp_[2]}; }
  [[nodiscard]] Vec3 to_world(const Vec3& idx) const {
    const auto& o = raw_.meta().origin;
    return {o[0] + idx.x * sp_[0], o[1] + idx.y * sp_[1], o[2] + idx.z * sp_[2]};
  }

  /// Hessian and gradient interpolated trilinearly from the eight
  /// surrounding voxels; q must be interior().
  [[nodiscard]] Probe probe(const Vec3& q) const {
    const auto bv = blurred_.values();
    const std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(q.x), d_[0] - 3);
    const std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(q.y), d_[1] - 3);
    const std::int64_t z0 = std::min<std::int64_t>(static_cast<std::int64_t>(q.z), d_[2] - 3);
    const double fx = q.x - static_cast<double>(x0);
    const double fy = q.y - static_cast<double>(y0);
    const double fz = q.z - static_cast<double>(z0);
    Mat3 h;
    Vec3 g;
    for (int k = 0; k < 8; ++k) {
      const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
      const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
      if (w == 0.0) continue;
      const Mat3 hk = hessian_unchecked(bv, d_, sp_, x0 + dx, y0 + dy, z0 + dz);
      for (std::size_t i = 0; i < 9; ++i) h.m[i] += w * hk.m[i];
      g += w * gradient_unchecked(bv, d_, sp_, x0 + dx, y0 + dy, z0 + dz);
    }
    Probe p;
    p.eigen = eigen_symmetric(h);
    p.gradient = g;
    p.response = tubularity(p.eigen, field_.structure_scale);
    return p;
  }

  /// Newton step towards the ridge centre inside the cross-section plane.
  [[nodiscard]] Vec3 centering(const Probe& p) const {
    Vec3 delta;
    for (std::size_t i = 1; i < 3; ++i) {
      const double l = p.eigen.values[i];
      if (l < 0.0) delta -= (dot(p.gradient, p.eigen.vectors[i]) / l) * p.eigen.vectors[i];
    }
    const double n = norm(delta);
    const double cap = 0.5 * min_sp_;
    if (n > cap) delta *= cap / n;
    return to_index_delta(delta);
  }

  [[nodiscard]] bool consumed_at(const Vec3& q) const {
    const auto x = clamp_index(std::llround(q.x), d_[0]);
    const auto y = clamp_index(std::llround(q.y), d_[1]);
    const auto z = clamp_index(std::llround(q.z), d_[2]);
    return consumed_[raw_.index(x, y, z)] != 0;
  }

  void consume_around(const std::vector<Vec3>& points) {
    const double r = cfg_.seed_suppression_radius;
    const auto ri = static_cast<std::int64_t>(std::ceil(r));
    for (const auto& q : points) {
      const std::int64_t cx = std::llround(q.x), cy = std::llround(q.y), cz = std::llround(q.z);
      for (std::int64_t z = std::max<std::int64_t>(0, cz - ri); z <= std::min(d_[2] - 1, cz + ri); ++z)
        for (std::int64_t y = std::max<std::int64_t>(0, cy - ri); y <= std::min(d_[1] - 1, cy + ri); ++y)
          for (std::int64_t x = std::max<std::int64_t>(0, cx - ri); x <= std::min(d_[0] - 1, cx + ri); ++x) {
            const double dx = static_cast<double>(x) - q.x;
            const double dy = static_cast<double>(y) - q.y;
            const double dz = static_cast<double>(z) - q.z;
            if (dx * dx + dy * dy + dz * dz <= r * r) consumed_[raw_.index(x, y, z)] = 1;
          }
    }
  }

  void walk(const Vec3& seed, Vec3 dir, std::vector<Vec3>& points, std::vector<double>& responses) const {
    const double cos_max = std::cos(deg_to_rad(cfg_.max_angle));
    const auto max_steps = static_cast<std::int64_t>(4.0 * static_cast<double>(d_[0] + d_[1] + d_[2]) / cfg_.step);
    const double step_mm = cfg_.step * min_sp_;
    Vec3 q = seed;
    for (std::int64_t k = 0; k < max_steps; ++k) {
      Vec3 next = q + to_index_delta(step_mm * dir);
      if (!interior(next) || consumed_at(next)) break;
      const Probe p = probe(next);
      Vec3 v = p.eigen.vectors[0];
      if (dot(v, dir) < 0.0) v = -v;
      if (dot(v, dir) < cos_max) break;
      if (p.response < cfg_.ridge_threshold) break;
      next += centering(p);
      if (!interior(next)) break;
      if (norm(to_mm_delta(next - q)) < 1e-9) break;
      if (k > 8 && norm(to_mm_delta(next - seed)) < 0.5 * step_mm) break;
      points.push_back(next);
      responses.push_back(p.response);
      dir = v;
      q = next;
    }
  }

  std::optional<FiberTrace> trace_from(const Vec3& seed_voxel);

  const Volume& raw_;
  const Volume& blurred_;
  const TubularityField& field_;
  const ExtractionConfig& cfg_;
  Dims d_;
  std::array<double, 3> sp_;
  double min_sp_;
  std::vector<std::uint8_t> consumed_;
};

std::optional<FiberTrace> Tracer::trace_from(const Vec3& seed_voxel) {
  Probe p0 = probe(seed_voxel);
  Vec3 seed = seed_voxel + centering(p0);
  if (!interior(seed)) seed = seed_voxel;
  p0 = probe(seed);
  const Vec3 dir = p0.eigen.vectors[0];

  std::vector<Vec3> fwd, bwd;
  std::vector<double> fwd_r, bwd_r;
  walk(seed, dir, fwd, fwd_r);
  walk(seed, -dir, bwd, bwd_r);

  std::vector<Vec3> pts(bwd.rbegin(), bwd.rend());
  std::vector<double> resp(bwd_r.rbegin(), bwd_r.rend());
  pts.push_back(seed);
  resp.push_back(p0.response);
  pts.insert(pts.end(), fwd.begin(), fwd.end());
  resp.insert(resp.end(), fwd_r.begin(), fwd_r.end());
  consume_around(pts);
  if (pts.size() < 2) return std::nullopt;

  const auto rv = raw_.values();
  auto raw_at = [&](const Vec3& q) { return sample_index(rv, d_, q); };
  const double r_max_mm = std::max(8.0, 4.0 * cfg_.sigma) * min_sp_;
  const double ray_step_mm = 0.05 * min_sp_;

  // Global profile levels for this fiber.
  std::vector<double> centers, floors;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    centers.push_back(raw_at(pts[i]));
    const Vec3 t = normalized(to_mm_delta(pts[std::min(i + 1, pts.size() - 1)] - pts[i > 0 ? i - 1 : 0]));
    const auto [u, w] = perpendicular_frame(t);
    double lo = centers.back();
    for (const Vec3& axis : {u, -u, w, -w}) {
      for (double s = ray_step_mm; s <= r_max_mm; s += ray_step_mm) {
        lo = std::min(lo, raw_at(pts[i] + to_index_delta(s * axis)));
      }
    }
    floors.push_back(lo);
  }
  const double level_hi = median(centers);
  const double level_lo = median(floors);
  const double half = 0.5 * (level_hi + level_lo);
  const bool contrast = level_hi > level_lo;

  if (contrast) {
    // Trim ends that overshoot the half-maximum, then extend to the crossing.
    while (pts.size() > 2 && raw_at(pts.back()) < half) {
      pts.pop_back();
      resp.pop_back();
    }
    while (pts.size() > 2 && raw_at(pts.front()) < half) {
      pts.erase(pts.begin());
      resp.erase(resp.begin());
    }
    const auto back_k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(2.0 / cfg_.step)));
    auto extend = [&](const Vec3& end, const Vec3& before) -> std::optional<Vec3> {
      const Vec3 dmm = to_mm_delta(end - before);
      if (norm(dmm) < 1e-12) return std::nullopt;
      const Vec3 dir_mm = normalized(dmm);
      const double limit = (3.0 * cfg_.sigma + 4.0) * min_sp_;
      double prev_s = 0.0;
      double prev_v = raw_at(end);
      if (prev_v < half) return std::nullopt;
      for (double s = 0.1 * min_sp_; s <= limit; s += 0.1 * min_sp_) {
        const Vec3 q = end + to_index_delta(s * dir_mm);
        const double v = raw_at(q);
        if (v < half) {
          const double f = (prev_v - half) / (prev_v - v);
          const double sc = prev_s + f * (s - prev_s);
          if (sc < 1e-6 * min_sp_) return std::nullopt;
          return end + to_index_delta(sc * dir_mm);
        }
        prev_s = s;
        prev_v = v;
      }
      return std::nullopt;
    };
    if (const auto e = extend(pts.back(), pts[pts.size() - 1 - std::min(back_k, pts.size() - 1)])) {
      pts.push_back(*e);
      resp.push_back(resp.back());
    }
    if (const auto s = extend(pts.front(), pts[std::min(back_k, pts.size() - 1)])) {
      pts.insert(pts.begin(), *s);
      resp.insert(resp.begin(), resp.front());
    }
  }

  FiberTrace trace;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 w = to_world(pts[i]);
    if (!trace.points.empty() && distance(trace.points.back(), w) < 1e-9) continue;
    trace.points.push_back(w);
    trace.responses.push_back(resp[i]);
  }
  if (trace.points.size() < 2 || trace.arc_length() < cfg_.min_length) return std::nullopt;

  // Half-width at half-maximum across two perpendicular lines per point.
  const std::size_t n = trace.points.size();
  std::vector<std::optional<double>> radii(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 t = normalized(trace.points[std::min(i + 1, n - 1)] - trace.points[i > 0 ? i - 1 : 0]);
    const auto& o = raw_.meta().origin;
    const Vec3 c{(trace.points[i].x - o[0]) / sp_[0], (trace.points[i].y - o[1]) / sp_[1],
                 (trace.points[i].z - o[2]) / sp_[2]};
    if (!contrast || raw_at(c) < half) continue;
    const auto [u, w] = perpendicular_frame(t);
    auto crossing = [&](const Vec3& axis) {
      double prev_s = 0.0;
      double prev_v = raw_at(c);
      for (double s = ray_step_mm; s <= r_max_mm; s += ray_step_mm) {
        const double v = raw_at(c + to_index_delta(s * axis));
        if (v < half) return prev_s + (prev_v - half) / (prev_v - v) * (s - prev_s);
        prev_s = s;
        prev_v = v;
      }
      return r_max_mm;
    };
    const double ru = 0.5 * (crossing(u) + crossing(-u));
    const double rw = 0.5 * (crossing(w) + crossing(-w));
    radii[i] = 0.5 * (ru + rw);
  }
  trace.radius_estimates.assign(n, cfg_.sigma * min_sp_);
  for (std::size_t i = 0; i < n; ++i) {
    if (radii[i]) {
      trace.radius_estimates[i] = *radii[i];
      continue;
    }
    // Borrow the nearest valid estimate (ends sit at the half-maximum).
    for (std::size_t k = 1; k < n; ++k) {
      if (i >= k && radii[i - k]) {
        trace.radius_estimates[i] = *radii[i - k];
        break;
      }
      if (i + k < n && radii[i + k]) {
        trace.radius_estimates[i] = *radii[i + k];
        break;
      }
    }
  }
  return trace;
}

std::vector<FiberTrace> Tracer::run() {
  const auto& T = field_.values;
  struct Seed {
    float response;
    std::size_t index;
  };
  std::vector<Seed> seeds;
  for (std::int64_t z = 1; z + 1 < d_[2]; ++z)
    for (std::int64_t y = 1; y + 1 < d_[1]; ++y)
      for (std::int64_t x = 1; x + 1 < d_[0]; ++x) {
        const std::size_t i = raw_.index(x, y, z);
        const float t = T[i];
        if (!(t > cfg_.ridge_threshold)) continue;
        bool is_max = true;
        for (int dz = -1; dz <= 1 && is_max; ++dz)
          for (int dy = -1; dy <= 1 && is_max; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (T[raw_.index(x + dx, y + dy, z + dz)] > t) {
                is_max = false;
                break;
              }
            }
        if (is_max) seeds.push_back({t, i});
      }
  std::sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) {
    return a.response > b.response || (a.response == b.response && a.index < b.index);
  });

  std::vector<FiberTrace> traces;
  const std::int64_t plane = d_[0] * d_[1];
  for (const auto& s : seeds) {
    if (consumed_[s.index]) continue;
    const auto flat = static_cast<std::int64_t>(s.index);
    const Vec3 q{static_cast<double>(flat % d_[0]), static_cast<double>((flat / d_[0]) % d_[1]),
                 static_cast<double>(flat / plane)};
    if (auto t = trace_from(q)) traces.push_back(std::move(*t));
  }
  return traces;
}

}  // namespace

ExtractionConfig ExtractionConfig::for_spacing(const std::array<double, 3>& spacing) {
  ExtractionConfig cfg;
  cfg.min_length = 5.0 * std::min({spacing[0], spacing[1], spacing[2]});
  cfg.seed_suppression_radius = 2.0 * cfg.sigma;
  return cfg;
}

void ExtractionConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (!(sigma > 0.0)) fail("sigma must be > 0");
  if (!(ridge_threshold > 0.0)) fail("ridge_threshold must be > 0");
  if (!(step > 0.0 && step <= 1.0)) fail("step must be in (0, 1]");
  if (!(min_length > 0.0)) fail("min_length must be > 0");
  if (!(max_angle > 0.0 && max_angle < 90.0)) fail("max_angle must be in (0, 90)");
  if (!(seed_suppression_radius > 0.0)) fail("seed_suppression_radius must be > 0");
}

HessianEigen eigen_symmetric(const Mat3& m) {
  double a[3][3];
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a[r][c] = 0.5 * (m(r, c) + m(c, r));
  const double scale = frobenius_norm(m);
  constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off <= 1e-30 * scale * scale || off == 0.0) break;
    for (const auto& pq : kPairs) {
      const int p = pq[0], q = pq[1];
      const double apq = a[p][q];
      if (apq == 0.0) continue;
      const double theta = (a[q][q] - a[p][p]) / (2.0 * apq);
      const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
      const double c = 1.0 / std::sqrt(t * t + 1.0);
      const double s = t * c;
      a[p][p] -= t * apq;
      a[q][q] += t * apq;
      a[p][q] = a[q][p] = 0.0;
      const int r = 3 - p - q;
      const double arp = a[r][p], arq = a[r][q];
      a[r][p] = a[p][r] = c * arp - s * arq;
      a[r][q] = a[q][r] = s * arp + c * arq;
      for (int k = 0; k < 3; ++k) {
        const double vkp = v[k][p], vkq = v[k][q];
        v[k][p] = c * vkp - s * vkq;
        v[k][q] = s * vkp + c * vkq;
      }
    }
  }
  HessianEigen e;
  for (int i = 0; i < 3; ++i) {
    e.values[static_cast<std::size_t>(i)] = a[i][i];
    e.vectors[static_cast<std::size_t>(i)] = {v[0][i], v[1][i], v[2][i]};
  }
  sort_by_magnitude(e);
  return e;
}

std::array<double, 3> symmetric_eigenvalues(const Mat3& m) {
  const double p1 = m(0, 1) * m(0, 1) + m(0, 2) * m(0, 2) + m(1, 2) * m(1, 2);
  std::array<double, 3> ev;
  if (p1 == 0.0) {
    ev = {m(0, 0), m(1, 1), m(2, 2)};
  } else {
    const double q = (m(0, 0) + m(1, 1) + m(2, 2)) / 3.0;
    const double a = m(0, 0) - q, b = m(1, 1) - q, c = m(2, 2) - q;
    const double p2 = a * a + b * b + c * c + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    // det((m - qI) / p) / 2
    const double det = a * (b * c - m(1, 2) * m(1, 2)) - m(0, 1) * (m(0, 1) * c - m(1, 2) * m(0, 2)) +
                       m(0, 2) * (m(0, 1) * m(1, 2) - b * m(0, 2));
    const double r = std::clamp(det / (2.0 * p * p * p), -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double e1 = q + 2.0 * p * std::cos(phi);
    const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
    ev = {e1, 3.0 * q - e1 - e3, e3};
  }
  std::sort(ev.begin(), ev.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
  return ev;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be > 0");
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

Volume gaussian_blur(const Volume& volume, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::int64_t>(kernel.size() / 2);
  const Dims d = volume.dims();
  const auto src_values = volume.values();
  std::vector<float> a(src_values.begin(), src_values.end());
  std::vector<float> b(a.size());

  const std::array<std::int64_t, 3> stride{1, d[0], d[0] * d[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const auto ax = static_cast<std::size_t>(axis);
    const std::int64_t len = d[ax];
    const std::int64_t st = stride[ax];
    // Lines are enumerated by their start index over the other two axes.
    const std::size_t o1 = axis == 0 ? 1 : 0;
    const std::size_t o2 = axis == 2 ? 1 : 2;
    const std::int64_t lines = d[o1] * d[o2];
    parallel_for(lines, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t l = begin; l < end; ++l) {
        const std::int64_t i1 = l % d[o1];
        const std::int64_t i2 = l / d[o1];
        const std::int64_t base = i1 * stride[o1] + i2 * stride[o2];
        for (std::int64_t i = 0; i < len; ++i) {
          double acc = 0.0;
          for (std::int64_t k = -radius; k <= radius; ++k) {
            const std::int64_t j = clamp_index(i + k, len);
            acc += kernel[static_cast<std::size_t>(k + radius)] * a[static_cast<std::size_t>(base + j * st)];
          }
          b[static_cast<std::size_t>(base + i * st)] = static_cast<float>(acc);
        }
      }
    }, 64);
    std::swap(a, b);
  }

  VolumeMeta meta = volume.meta();
  meta.dtype = DType::Float32;
  return Volume(meta, std::move(a), volume.range_lo(), volume.range_hi());
}

Mat3 hessian_matrix_at(const Volume& volume, std::int64_t x, std::int64_t y, std::int64_t z) {
  const Dims& d = volume.dims();
  if (x < 1 || y < 1 || z < 1 || x > d[0] - 2 || y > d[1] - 2 || z > d[2] - 2) {
    throw Error(ErrorCode::BorderVoxel, "(" + std::to_string(x) + "," + std::to_string(y) + "," +
                                            std::to_string(z) + ") needs a one-voxel margin");
  }
  return hessian_unchecked(volume.values(), d, volume.meta().spacing, x, y, z);
}

HessianEigen hessian_at(const Volume& volume, std::int64_t x, std::int64_t y, std::int64_t z) {
  return eigen_symmetric(hessian_matrix_at(volume, x, y, z));
}

double tubularity_scale() { return 1.0 - std::exp(-1.0 / (2.0 * kTubularityAlpha * kTubularityAlpha)); }

double tubularity(const std::array<double, 3>& v, double structure_scale) {
  const double l1 = v[0], l2 = v[1], l3 = v[2];
  if (l2 >= 0.0 || l3 >= 0.0) return 0.0;
  const double ra = std::abs(l2) / std::abs(l3);
  const double rb = std::abs(l1) / std::sqrt(std::abs(l2 * l3));
  const double s2 = l1 * l1 + l2 * l2 + l3 * l3;
  constexpr double a2 = 2.0 * kTubularityAlpha * kTubularityAlpha;
  constexpr double b2 = 2.0 * kTubularityBeta * kTubularityBeta;
  const double structure =
      structure_scale > 0.0 ? 1.0 - std::exp(-s2 / (2.0 * structure_scale * structure_scale)) : 1.0;
  return (1.0 - std::exp(-ra * ra / a2)) * std::exp(-rb * rb / b2) * structure;
}

TubularityField tubularity_field(const Volume& blurred) {
  const Dims d = blurred.dims();
  const auto values = blurred.values();
  const auto& sp = blurred.meta().spacing;
  TubularityField field;
  field.values.assign(blurred.size(), 0.0f);
  if (d[0] < 3 || d[1] < 3 || d[2] < 3) return field;

  const std::int64_t slabs = d[2] - 2;
  std::vector<double> slab_max(static_cast<std::size_t>(slabs), 0.0);
  parallel_for(slabs, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t s = begin; s < end; ++s) {
      double m = 0.0;
      const std::int64_t z = s + 1;
      for (std::int64_t y = 1; y + 1 < d[1]; ++y)
        for (std::int64_t x = 1; x + 1 < d[0]; ++x) {
          m = std::max(m, frobenius_norm(hessian_unchecked(values, d, sp, x, y, z)));
        }
      slab_max[static_cast<std::size_t>(s)] = m;
    }
  });
  const double max_norm = *std::max_element(slab_max.begin(), slab_max.end());
  field.structure_scale = 0.5 * max_norm;
  if (max_norm == 0.0) return field;

  parallel_for(slabs, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t s = begin; s < end; ++s) {
      const std::int64_t z = s + 1;
      for (std::int64_t y = 1; y + 1 < d[1]; ++y)
        for (std::int64_t x = 1; x + 1 < d[0]; ++x) {
          const Mat3 h = hessian_unchecked(values, d, sp, x, y, z);
          // Bright tubes need a negative trace; skip the cubic elsewhere.
          if (h(0, 0) + h(1, 1) + h(2, 2) >= 0.0) continue;
          field.values[blurred.index(x, y, z)] =
              static_cast<float>(tubularity(symmetric_eigenvalues(h), field.structure_scale));
        }
    }
  });
  return field;
}

double FiberTrace::arc_length() const {
  double len = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) len += distance(points[i - 1], points[i]);
  return len;
}

std::vector<FiberTrace> trace_fibers(const Volume& volume, const ExtractionConfig& cfg) {
  cfg.validate();
  const Dims& d = volume.dims();
  if (d[0] < 4 || d[1] < 4 || d[2] < 4) return {};
  const Volume blurred = gaussian_blur(volume, cfg.sigma);
  const TubularityField field = tubularity_field(blurred);
  Tracer tracer(volume, blurred, field, cfg);
  return tracer.run();
}

FiberRecord characterize(const FiberTrace& trace, std::int64_t id) {
  const auto& pts = trace.points;
  if (pts.size() < 2) throw Error(ErrorCode::DegenerateTrace, "trace needs at least 2 points");
  const Vec3 start = pts.front();
  const Vec3 end = pts.back();
  const double straight = distance(start, end);
  if (!(straight > 0.0)) throw Error(ErrorCode::DegenerateTrace, "start and end coincide");

  double curved = 0.0;
  Vec3 weighted;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double seg = distance(pts[i - 1], pts[i]);
    curved += seg;
    weighted += seg * 0.5 * (pts[i - 1] + pts[i]);
  }
  curved = std::max(curved, straight);
  const Vec3 cog = weighted / curved;

  double radius = 0.0;
  if (!trace.radius_estimates.empty()) {
    radius = std::accumulate(trace.radius_estimates.begin(), trace.radius_estimates.end(), 0.0) /
             static_cast<double>(trace.radius_estimates.size());
  }
  const double diameter = 2.0 * radius;

  Vec3 axis = (end - start) / straight;
  if (axis.z < 0.0) axis = -axis;
  const double theta = rad_to_deg(std::acos(std::clamp(axis.z, 0.0, 1.0)));
  double phi = 0.0;
  if (std::hypot(axis.x, axis.y) > 1e-12) {
    phi = rad_to_deg(std::atan2(axis.y, axis.x));
    if (phi < 0.0) phi += 360.0;
    if (phi >= 360.0) phi -= 360.0;
  }

  double mean_response = 0.0;
  if (!trace.responses.empty()) {
    mean_response = std::accumulate(trace.responses.begin(), trace.responses.end(), 0.0) /
                    static_cast<double>(trace.responses.size());
  }

  FiberRecord r;
  r.id = id;
  r.start_x = start.x;
  r.start_y = start.y;
  r.start_z = start.z;
  r.end_x = end.x;
  r.end_y = end.y;
  r.end_z = end.z;
  r.straight_length = straight;
  r.curved_length = curved;
  r.curvature_ratio = std::max(1.0, curved / straight);
  r.diameter = diameter;
  r.surface_area = kPi * diameter * curved;
  r.volume = kPi * radius * radius * curved;
  r.theta = theta;
  r.phi = phi;
  r.cog_x = cog.x;
  r.cog_y = cog.y;
  r.cog_z = cog.z;
  r.point_count = static_cast<std::int64_t>(pts.size());
  r.mean_tubularity = mean_response;
  return r;
}

FiberTable extract_fibers(const Volume& volume, const ExtractionConfig& cfg) {
  FiberTable table;
  std::int64_t id = 1;
  for (const auto& t : trace_fibers(volume, cfg)) table.add(characterize(t, id++));
  return table;
}

}  // namespace xct
