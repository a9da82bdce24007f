#include "xctlab/tracking.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "xctlab/error.hpp"
#include "xctlab/random.hpp"

namespace xct {

// ---------------------------------------------------------------- codes

MarkerCode encode_marker_word(std::uint16_t data) {
  data &= (1u << kMarkerDataBits) - 1u;
  unsigned even = 0;
  unsigned odd = 0;
  for (int i = 0; i < kMarkerDataBits; ++i) {
    const unsigned bit = (data >> i) & 1u;
    (i % 2 == 0 ? even : odd) ^= bit;
  }
  return static_cast<MarkerCode>(data | (even << 14) | (odd << 15));
}

bool parity_ok(MarkerCode code) {
  return encode_marker_word(static_cast<std::uint16_t>(code & ((1u << kMarkerDataBits) - 1u))) == code;
}

MarkerCode rotate_code(MarkerCode code) {
  // Quarter turn clockwise: new (r, c) takes old (3 - c, r).
  MarkerCode out = 0;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const int src = (3 - c) * 4 + r;
      if ((code >> src) & 1u) out = static_cast<MarkerCode>(out | (1u << (r * 4 + c)));
    }
  }
  return out;
}

int hamming(MarkerCode a, MarkerCode b) { return std::popcount(static_cast<unsigned>(a ^ b)); }

std::array<bool, kMarkerGrid * kMarkerGrid> MarkerDescriptor::grid() const {
  std::array<bool, kMarkerGrid * kMarkerGrid> g{};
  for (int i = 0; i < kMarkerBits; ++i) {
    const int r = 1 + i / 4;
    const int c = 1 + i % 4;
    g[static_cast<std::size_t>(r * kMarkerGrid + c)] = ((code >> i) & 1u) != 0;
  }
  return g;
}

namespace {

int min_rotated_distance(MarkerCode a, MarkerCode b) {
  int best = kMarkerBits;
  MarkerCode rb = b;
  for (int k = 0; k < 4; ++k) {
    best = std::min(best, hamming(a, rb));
    rb = rotate_code(rb);
  }
  return best;
}

int self_rotation_distance(MarkerCode a) {
  int best = kMarkerBits;
  MarkerCode r = a;
  for (int k = 1; k < 4; ++k) {
    r = rotate_code(r);
    best = std::min(best, hamming(a, r));
  }
  return best;
}

void check_dictionary(const std::vector<MarkerDescriptor>& markers) {
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const auto& m = markers[i];
    if (!parity_ok(m.code)) {
      throw Error(ErrorCode::BadDictionary, "marker " + std::to_string(m.id) + " fails the parity check");
    }
    if (!(m.side_mm > 0.0)) throw Error(ErrorCode::BadDictionary, "marker side_mm must be > 0");
    if (self_rotation_distance(m.code) < 3) {
      throw Error(ErrorCode::BadDictionary, "marker " + std::to_string(m.id) + " is too rotation-symmetric");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (markers[j].id == m.id) throw Error(ErrorCode::BadDictionary, "duplicate marker id " + std::to_string(m.id));
      if (min_rotated_distance(markers[j].code, m.code) < 3) {
        throw Error(ErrorCode::BadDictionary, "markers " + std::to_string(markers[j].id) + " and " +
                                                  std::to_string(m.id) + " are closer than 3 bits");
      }
    }
  }
}

}  // namespace

MarkerDictionary::MarkerDictionary(std::vector<MarkerDescriptor> markers) : markers_(std::move(markers)) {
  check_dictionary(markers_);
}

MarkerDictionary MarkerDictionary::generate(int count, double side_mm) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "dictionary size must be >= 1");
  std::vector<std::uint16_t> order(1u << kMarkerDataBits);
  std::iota(order.begin(), order.end(), std::uint16_t{0});
  Rng rng(0x6d61726b);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  }
  std::vector<MarkerDescriptor> out;
  for (const auto data : order) {
    if (static_cast<int>(out.size()) == count) break;
    const MarkerCode code = encode_marker_word(data);
    const int white = std::popcount(static_cast<unsigned>(code));
    if (white < 3 || white > kMarkerBits - 3) continue;
    if (self_rotation_distance(code) < 3) continue;
    const bool far = std::all_of(out.begin(), out.end(),
                                 [&](const MarkerDescriptor& m) { return min_rotated_distance(m.code, code) >= 3; });
    if (far) out.push_back({static_cast<int>(out.size()), code, side_mm});
  }
  if (static_cast<int>(out.size()) < count) {
    throw Error(ErrorCode::InvalidArgument, "only " + std::to_string(out.size()) + " markers satisfy the distance bound");
  }
  return MarkerDictionary(std::move(out));
}

const MarkerDictionary& MarkerDictionary::standard() {
  static const MarkerDictionary dict = generate(32);
  return dict;
}

const MarkerDescriptor& MarkerDictionary::at(int id) const {
  for (const auto& m : markers_)
    if (m.id == id) return m;
  throw Error(ErrorCode::UnknownMarker, "marker " + std::to_string(id) + " is not in the dictionary");
}

bool MarkerDictionary::contains(int id) const {
  return std::any_of(markers_.begin(), markers_.end(), [&](const MarkerDescriptor& m) { return m.id == id; });
}

MarkerDictionary parse_marker_dictionary(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadDictionary, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("markers") || !doc["markers"].is_array()) {
    throw Error(ErrorCode::BadDictionary, "expected an object with a \"markers\" array");
  }
  std::vector<MarkerDescriptor> markers;
  for (const auto& m : doc["markers"]) {
    if (!m.is_object() || !m.contains("id") || !m["id"].is_number_integer() || !m.contains("bits") ||
        !m["bits"].is_array() || m["bits"].size() != kMarkerGrid) {
      throw Error(ErrorCode::BadDictionary, "each marker needs an integer id and a 6x6 bits array");
    }
    MarkerDescriptor d;
    d.id = m["id"].get<int>();
    d.side_mm = m.value("side_mm", 50.0);
    for (int r = 0; r < kMarkerGrid; ++r) {
      const auto& row = m["bits"][static_cast<std::size_t>(r)];
      if (!row.is_array() || row.size() != kMarkerGrid) {
        throw Error(ErrorCode::BadDictionary, "marker " + std::to_string(d.id) + ": each row needs 6 cells");
      }
      for (int c = 0; c < kMarkerGrid; ++c) {
        const auto& cell = row[static_cast<std::size_t>(c)];
        if (!cell.is_number_integer() || (cell.get<int>() != 0 && cell.get<int>() != 1)) {
          throw Error(ErrorCode::BadDictionary, "marker " + std::to_string(d.id) + ": cells must be 0 or 1");
        }
        const bool white = cell.get<int>() == 1;
        const bool border = r == 0 || c == 0 || r == kMarkerGrid - 1 || c == kMarkerGrid - 1;
        if (border && white) {
          throw Error(ErrorCode::BadDictionary, "marker " + std::to_string(d.id) + ": border cells must be black");
        }
        if (!border && white) d.code = static_cast<MarkerCode>(d.code | (1u << ((r - 1) * 4 + (c - 1))));
      }
    }
    markers.push_back(d);
  }
  return MarkerDictionary(std::move(markers));
}

std::string format_marker_dictionary(const MarkerDictionary& dict) {
  nlohmann::json markers = nlohmann::json::array();
  for (const auto& m : dict.markers()) {
    const auto g = m.grid();
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < kMarkerGrid; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < kMarkerGrid; ++c) row.push_back(g[static_cast<std::size_t>(r * kMarkerGrid + c)] ? 1 : 0);
      rows.push_back(row);
    }
    markers.push_back({{"id", m.id}, {"bits", rows}, {"side_mm", m.side_mm}});
  }
  return nlohmann::json{{"markers", markers}}.dump(2);
}

// ---------------------------------------------------------------- camera

CameraIntrinsics CameraIntrinsics::for_frame(int width, int height, double focal_px) {
  return {focal_px, focal_px, 0.5 * (width - 1), 0.5 * (height - 1)};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be > 0");
}

Point2 CameraIntrinsics::project(const Vec3& p) const { return {fx * p.x / p.z + cx, fy * p.y / p.z + cy}; }

std::array<Vec3, 4> marker_corners_3d(double side_mm) {
  const double h = 0.5 * side_mm;
  return {Vec3{-h, -h, 0.0}, Vec3{-h, h, 0.0}, Vec3{h, h, 0.0}, Vec3{h, -h, 0.0}};
}

// ---------------------------------------------------------------- pose

namespace {

using Homography = Eigen::Matrix3d;

/// Normalized DLT from exactly four correspondences.
std::optional<Homography> fit_homography(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
  auto normalizer = [](const std::array<Point2, 4>& pts) {
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : pts) {
      mx += p.x / 4.0;
      my += p.y / 4.0;
    }
    double mean_dist = 0.0;
    for (const auto& p : pts) mean_dist += std::hypot(p.x - mx, p.y - my) / 4.0;
    const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d ts = normalizer(src);
  const Eigen::Matrix3d td = normalizer(dst);
  Eigen::Matrix<double, 8, 9> a;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d s = ts * Eigen::Vector3d(src[static_cast<std::size_t>(i)].x, src[static_cast<std::size_t>(i)].y, 1.0);
    const Eigen::Vector3d d = td * Eigen::Vector3d(dst[static_cast<std::size_t>(i)].x, dst[static_cast<std::size_t>(i)].y, 1.0);
    a.row(2 * i) << -s.x(), -s.y(), -1.0, 0.0, 0.0, 0.0, d.x() * s.x(), d.x() * s.y(), d.x();
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -s.x(), -s.y(), -1.0, d.y() * s.x(), d.y() * s.y(), d.y();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Homography out = td.inverse() * hn * ts;
  if (!out.allFinite() || std::abs(out(2, 2)) < 1e-300) return std::nullopt;
  return out / out(2, 2);
}

Point2 apply_homography(const Homography& h, double x, double y) {
  const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1.0);
  return {p.x() / p.z(), p.y() / p.z()};
}

double triangle_area(const Point2& a, const Point2& b, const Point2& c) {
  return 0.5 * std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
}

Eigen::Matrix<double, 8, 1> corner_residuals(const Pose6DoF& pose, const std::array<Vec3, 4>& obj,
                                             const std::array<Point2, 4>& corners, const CameraIntrinsics& intr) {
  Eigen::Matrix<double, 8, 1> r;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point2 p = intr.project(pose.apply(obj[i]));
    r(static_cast<Eigen::Index>(2 * i)) = p.x - corners[i].x;
    r(static_cast<Eigen::Index>(2 * i + 1)) = p.y - corners[i].y;
  }
  return r;
}

// Rotation increment applied in the camera frame, then translation.
Pose6DoF perturbed(const Pose6DoF& pose, const Eigen::Matrix<double, 6, 1>& d) {
  Pose6DoF out = pose;
  const Vec3 w{d(0), d(1), d(2)};
  const double angle = norm(w);
  if (angle > 0.0) out.rotation = (Quat::from_axis_angle(w * (1.0 / angle), angle) * pose.rotation).normalized();
  out.translation = pose.translation + Vec3{d(3), d(4), d(5)};
  return out;
}

/// Levenberg-Marquardt on corner reprojection error from the closed-form
/// start. The exact four-point homography absorbs corner noise in a way no
/// rigid pose can reproduce, and at steep tilts the decomposed pose
/// reprojects more than a pixel off; a few damped steps fix that.
Pose6DoF refine_pose(Pose6DoF pose, const std::array<Vec3, 4>& obj, const std::array<Point2, 4>& corners,
                     const CameraIntrinsics& intr) {
  auto res = corner_residuals(pose, obj, corners, intr);
  double cost = res.squaredNorm();
  double damping = 1e-3;
  for (int iter = 0; iter < 20 && cost > 1e-18; ++iter) {
    Eigen::Matrix<double, 8, 6> jac;
    for (int k = 0; k < 6; ++k) {
      const double h = k < 3 ? 1e-7 : 1e-6 * std::max(1.0, std::abs(pose.translation.z));
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d(k) = h;
      const auto plus = corner_residuals(perturbed(pose, d), obj, corners, intr);
      d(k) = -h;
      const auto minus = corner_residuals(perturbed(pose, d), obj, corners, intr);
      jac.col(k) = (plus - minus) / (2.0 * h);
    }
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> g = jac.transpose() * res;
    bool improved = false;
    while (damping < 1e8) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      a.diagonal() += damping * jtj.diagonal();
      const Eigen::Matrix<double, 6, 1> step = a.ldlt().solve(-g);
      if (!step.allFinite()) break;
      const Pose6DoF candidate = perturbed(pose, step);
      const auto cand_res = corner_residuals(candidate, obj, corners, intr);
      const double cand_cost = cand_res.squaredNorm();
      if (candidate.translation.z > 0.0 && cand_cost < cost) {
        const bool converged = cost - cand_cost < 1e-12 * (1.0 + cost);
        pose = candidate;
        res = cand_res;
        cost = cand_cost;
        damping = std::max(damping * 0.1, 1e-9);
        improved = !converged;
        break;
      }
      damping *= 10.0;
    }
    if (!improved) break;
  }
  return pose;
}

}  // namespace

Pose6DoF estimate_pose(const std::array<Point2, 4>& corners, double side_mm, const CameraIntrinsics& intr) {
  intr.validate();
  if (!(side_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "marker side must be > 0");
  double extent = 0.0;
  for (const auto& p : corners) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw Error(ErrorCode::DegenerateCorners, "non-finite corner");
    extent = std::max(extent, std::hypot(p.x - corners[0].x, p.y - corners[0].y));
  }
  const double min_area = 1e-6 * extent * extent;
  for (int i = 0; i < 4; ++i) {
    const auto& a = corners[static_cast<std::size_t>(i)];
    const auto& b = corners[static_cast<std::size_t>((i + 1) % 4)];
    const auto& c = corners[static_cast<std::size_t>((i + 2) % 4)];
    if (!(triangle_area(a, b, c) > min_area)) {
      throw Error(ErrorCode::DegenerateCorners, "three corners are collinear");
    }
  }
  const auto obj3 = marker_corners_3d(side_mm);
  std::array<Point2, 4> obj{};
  for (std::size_t i = 0; i < 4; ++i) obj[i] = {obj3[i].x, obj3[i].y};
  const auto h = fit_homography(obj, corners);
  if (!h) throw Error(ErrorCode::DegenerateCorners, "homography fit failed");

  Eigen::Matrix3d k_inv;
  k_inv << 1.0 / intr.fx, 0.0, -intr.cx / intr.fx, 0.0, 1.0 / intr.fy, -intr.cy / intr.fy, 0.0, 0.0, 1.0;
  const Eigen::Matrix3d m = k_inv * *h;
  double lambda = 2.0 / (m.col(0).norm() + m.col(1).norm());
  if (m(2, 2) * lambda < 0.0) lambda = -lambda;
  // Nearest orthonormal pair to the first two columns (polar factor), then the
  // cross product completes the rotation.
  Eigen::MatrixXd pair(3, 2);
  pair.col(0) = lambda * m.col(0);
  pair.col(1) = lambda * m.col(1);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(pair, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd polar = svd.matrixU() * svd.matrixV().transpose();
  Eigen::Matrix3d rot;
  rot.col(0) = polar.col(0);
  rot.col(1) = polar.col(1);
  rot.col(2) = rot.col(0).cross(rot.col(1));
  // With the rotation fixed the projection constraints are linear in t:
  // u * (R p + t).z = (R p + t).x, same for v. Least squares over 8 rows.
  Eigen::Matrix<double, 8, 3> a;
  Eigen::Matrix<double, 8, 1> b;
  for (std::size_t i = 0; i < 4; ++i) {
    const Eigen::Vector3d rp = rot * Eigen::Vector3d(obj[i].x, obj[i].y, 0.0);
    const double u = (corners[i].x - intr.cx) / intr.fx;
    const double v = (corners[i].y - intr.cy) / intr.fy;
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << 1.0, 0.0, -u;
    a.row(r + 1) << 0.0, 1.0, -v;
    b(r) = u * rp.z() - rp.x();
    b(r + 1) = v * rp.z() - rp.y();
  }
  const Eigen::Vector3d t = a.colPivHouseholderQr().solve(b);
  if (!rot.allFinite() || !t.allFinite() || !(t.z() > 0.0)) {
    throw Error(ErrorCode::DegenerateCorners, "pose decomposition failed");
  }
  Mat3 rm;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rm(i, j) = rot(i, j);
  Pose6DoF pose;
  pose.rotation = Quat::from_matrix(rm).normalized();
  pose.translation = {t.x(), t.y(), t.z()};
  return refine_pose(pose, obj3, corners, intr);
}

double reprojection_rms(const std::array<Point2, 4>& corners, double side_mm, const Pose6DoF& pose,
                        const CameraIntrinsics& intr) {
  const auto obj = marker_corners_3d(side_mm);
  double ss = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point2 p = intr.project(pose.apply(obj[i]));
    ss += (p.x - corners[i].x) * (p.x - corners[i].x) + (p.y - corners[i].y) * (p.y - corners[i].y);
  }
  return std::sqrt(ss / 4.0);
}

// ---------------------------------------------------------------- synthetic frames

std::array<Point2, 4> project_marker(const MarkerPlacement& placement, double side_mm, const CameraIntrinsics& intr) {
  const auto obj = marker_corners_3d(side_mm);
  std::array<Point2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = intr.project(placement.pose.apply(obj[i]));
  return out;
}

GrayImage render_marker_frame(const std::vector<MarkerPlacement>& placements, const MarkerDictionary& dict,
                              const CameraIntrinsics& intr, const SyntheticFrameOptions& options) {
  intr.validate();
  if (options.width < 1 || options.height < 1 || options.supersample < 1) {
    throw Error(ErrorCode::InvalidArgument, "frame size and supersample must be >= 1");
  }
  struct Placed {
    Mat3 to_marker;  // camera to marker rotation
    Vec3 origin;     // marker origin in camera frame
    Vec3 normal;     // marker z in camera frame
    double side;
    std::array<bool, kMarkerGrid * kMarkerGrid> grid;
    int x0, y0, x1, y1;  // pixel bounds of the printed area, inclusive
  };
  std::vector<Placed> placed;
  for (const auto& p : placements) {
    const auto& desc = dict.at(p.id);
    const Mat3 r = p.pose.rotation.to_matrix();
    Placed m{r.transposed(), p.pose.translation, r.column(2), desc.side_mm * p.pose.scale, desc.grid(),
             0, 0, options.width - 1, options.height - 1};
    // Project the printed square; if it is wholly in front of the camera the
    // pixel bounds limit where supersampling is needed.
    const double half = 0.5 * m.side * (1.0 + 2.0 * options.quiet_zone_cells / kMarkerGrid);
    double bx0 = std::numeric_limits<double>::infinity();
    double by0 = bx0;
    double bx1 = -bx0;
    double by1 = -bx0;
    bool in_front = true;
    for (const Vec3 corner : {Vec3{-half, -half, 0}, Vec3{half, -half, 0}, Vec3{half, half, 0}, Vec3{-half, half, 0}}) {
      const Vec3 c = p.pose.rotation.rotate(p.pose.scale * corner) + p.pose.translation;
      if (!(c.z > 1e-9)) {
        in_front = false;
        break;
      }
      const Point2 px = intr.project(c);
      bx0 = std::min(bx0, px.x);
      bx1 = std::max(bx1, px.x);
      by0 = std::min(by0, px.y);
      by1 = std::max(by1, px.y);
    }
    if (in_front) {
      m.x0 = static_cast<int>(std::clamp(std::floor(bx0 - 1.0), -1.0, static_cast<double>(options.width)));
      m.y0 = static_cast<int>(std::clamp(std::floor(by0 - 1.0), -1.0, static_cast<double>(options.height)));
      m.x1 = static_cast<int>(std::clamp(std::ceil(bx1 + 1.0), -1.0, static_cast<double>(options.width)));
      m.y1 = static_cast<int>(std::clamp(std::ceil(by1 + 1.0), -1.0, static_cast<double>(options.height)));
    }
    placed.push_back(m);
  }
  GrayImage frame(options.width, options.height);
  const int s = options.supersample;
  const double q = options.quiet_zone_cells;
  for (int y = 0; y < options.height; ++y) {
    for (int x = 0; x < options.width; ++x) {
      const bool covered = std::any_of(placed.begin(), placed.end(), [&](const Placed& m) {
        return x >= m.x0 && x <= m.x1 && y >= m.y0 && y <= m.y1;
      });
      if (!covered) {
        frame.at(x, y) = options.background;
        continue;
      }
      double acc = 0.0;
      for (int sy = 0; sy < s; ++sy) {
        for (int sx = 0; sx < s; ++sx) {
          const double u = x - 0.5 + (sx + 0.5) / s;
          const double v = y - 0.5 + (sy + 0.5) / s;
          const Vec3 d{(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0};
          double value = options.background;
          double nearest = std::numeric_limits<double>::infinity();
          for (const auto& m : placed) {
            const double denom = dot(m.normal, d);
            if (std::abs(denom) < 1e-12) continue;
            const double lambda = dot(m.normal, m.origin) / denom;
            if (!(lambda > 0.0) || lambda >= nearest) continue;
            const Vec3 local = m.to_marker * (lambda * d - m.origin);
            const double gc = (local.x / m.side + 0.5) * kMarkerGrid;
            const double gr = (local.y / m.side + 0.5) * kMarkerGrid;
            if (gc < -q || gr < -q || gc >= kMarkerGrid + q || gr >= kMarkerGrid + q) continue;
            nearest = lambda;
            if (gc < 0.0 || gr < 0.0 || gc >= kMarkerGrid || gr >= kMarkerGrid) {
              value = 255.0;
            } else {
              const auto cell = static_cast<std::size_t>(static_cast<int>(gr) * kMarkerGrid + static_cast<int>(gc));
              value = m.grid[cell] ? 255.0 : 0.0;
            }
          }
          acc += value;
        }
      }
      frame.at(x, y) = static_cast<std::uint8_t>(std::lround(acc / (s * s)));
    }
  }
  return frame;
}

// ---------------------------------------------------------------- detection

namespace {

double bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, img.width - 1.0);
  y = std::clamp(y, 0.0, img.height - 1.0);
  const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bottom = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return top * (1 - fy) + bottom * fy;
}

std::vector<std::uint8_t> adaptive_mask(const GrayImage& img, int window, double offset) {
  const int w = img.width;
  const int h = img.height;
  std::vector<std::int64_t> integral(static_cast<std::size_t>((w + 1) * (h + 1)), 0);
  for (int y = 0; y < h; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += img.at(x, y);
      integral[static_cast<std::size_t>((y + 1) * (w + 1) + x + 1)] =
          integral[static_cast<std::size_t>(y * (w + 1) + x + 1)] + row;
    }
  }
  const int r = window / 2;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(w * h), 0);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r);
    const int y1 = std::min(h, y + r + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r);
      const int x1 = std::min(w, x + r + 1);
      const auto sum = integral[static_cast<std::size_t>(y1 * (w + 1) + x1)] -
                       integral[static_cast<std::size_t>(y0 * (w + 1) + x1)] -
                       integral[static_cast<std::size_t>(y1 * (w + 1) + x0)] +
                       integral[static_cast<std::size_t>(y0 * (w + 1) + x0)];
      const double mean = static_cast<double>(sum) / ((x1 - x0) * (y1 - y0));
      mask[static_cast<std::size_t>(y * w + x)] = img.at(x, y) < mean - offset ? 1 : 0;
    }
  }
  return mask;
}

int otsu_threshold(const std::vector<std::uint8_t>& pixels) {
  std::array<double, 256> hist{};
  for (const auto p : pixels) hist[p] += 1.0;
  const double total = static_cast<double>(pixels.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  int best_t = 127;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

struct Component {
  std::vector<Point2> pixels;
  int min_x, min_y, max_x, max_y;
};

std::vector<Component> dark_components(const std::vector<std::uint8_t>& mask, int w, int h, int min_side) {
  std::vector<int> label(mask.size(), -1);
  std::vector<Component> out;
  std::vector<int> stack;
  for (int start = 0; start < w * h; ++start) {
    if (!mask[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
    Component comp{{}, w, h, -1, -1};
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = 0;
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      const int x = idx % w;
      const int y = idx / w;
      comp.pixels.push_back({static_cast<double>(x), static_cast<double>(y)});
      comp.min_x = std::min(comp.min_x, x);
      comp.max_x = std::max(comp.max_x, x);
      comp.min_y = std::min(comp.min_y, y);
      comp.max_y = std::max(comp.max_y, y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const auto n = static_cast<std::size_t>(ny * w + nx);
          if (mask[n] && label[n] < 0) {
            label[n] = 0;
            stack.push_back(static_cast<int>(n));
          }
        }
      }
    }
    const bool touches = comp.min_x == 0 || comp.min_y == 0 || comp.max_x == w - 1 || comp.max_y == h - 1;
    if (!touches && comp.max_x - comp.min_x + 1 >= min_side && comp.max_y - comp.min_y + 1 >= min_side) {
      out.push_back(std::move(comp));
    }
  }
  return out;
}

double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double polygon_area(const std::vector<Point2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

/// Quadrilateral approximating a convex hull, in visual counter-clockwise
/// order (negative shoelace area with y down).
std::optional<std::array<Point2, 4>> hull_quad(const std::vector<Point2>& hull, double min_side) {
  if (hull.size() < 4) return std::nullopt;
  std::size_t ia = 0;
  std::size_t ic = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    for (std::size_t j = i + 1; j < hull.size(); ++j) {
      const double d = std::hypot(hull[i].x - hull[j].x, hull[i].y - hull[j].y);
      if (d > best) {
        best = d;
        ia = i;
        ic = j;
      }
    }
  }
  const Point2 a = hull[ia];
  const Point2 c = hull[ic];
  std::optional<Point2> b;
  std::optional<Point2> d;
  double best_pos = 0.0;
  double best_neg = 0.0;
  for (const auto& p : hull) {
    const double s = cross2(a, c, p);
    if (s > best_pos) {
      best_pos = s;
      b = p;
    }
    if (s < best_neg) {
      best_neg = s;
      d = p;
    }
  }
  if (!b || !d) return std::nullopt;
  std::array<Point2, 4> quad{a, *b, c, *d};
  const double quad_area = polygon_area({quad.begin(), quad.end()});
  const double hull_area = std::abs(polygon_area(hull));
  if (!(std::abs(quad_area) >= 0.85 * hull_area)) return std::nullopt;
  if (quad_area > 0.0) std::swap(quad[1], quad[3]);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& p = quad[i];
    const auto& q = quad[(i + 1) % 4];
    if (std::hypot(p.x - q.x, p.y - q.y) < min_side) return std::nullopt;
  }
  return quad;
}

struct Line {
  Point2 point;
  Point2 dir;
};

std::optional<Point2> intersect(const Line& l1, const Line& l2) {
  const double det = l1.dir.x * l2.dir.y - l1.dir.y * l2.dir.x;
  if (std::abs(det) < 1e-9) return std::nullopt;
  const double t = ((l2.point.x - l1.point.x) * l2.dir.y - (l2.point.y - l1.point.y) * l2.dir.x) / det;
  return Point2{l1.point.x + t * l1.dir.x, l1.point.y + t * l1.dir.y};
}

/// Fits each side to sub-pixel edge crossings and intersects adjacent lines.
std::array<Point2, 4> refine_corners(const GrayImage& img, const std::array<Point2, 4>& quad) {
  std::array<Line, 4> lines{};
  for (std::size_t i = 0; i < 4; ++i) {
    const Point2 p = quad[i];
    const Point2 q = quad[(i + 1) % 4];
    const double len = std::hypot(q.x - p.x, q.y - p.y);
    const Point2 e{(q.x - p.x) / len, (q.y - p.y) / len};
    const Point2 n{-e.y, e.x};
    // Stay within one cell of the edge: the border inside, the quiet zone outside.
    double across = std::numeric_limits<double>::infinity();
    for (std::size_t j : {(i + 2) % 4, (i + 3) % 4}) {
      across = std::min(across, std::abs((quad[j].x - p.x) * n.x + (quad[j].y - p.y) * n.y));
    }
    const double reach = std::clamp(0.4 * across / kMarkerGrid, 0.8, 3.0);
    const int samples = std::clamp(static_cast<int>(len), 8, 200);
    std::vector<Point2> edge_points;
    for (int k = 0; k < samples; ++k) {
      const double s = len * (0.1 + 0.8 * (k + 0.5) / samples);
      const Point2 base{p.x + s * e.x, p.y + s * e.y};
      constexpr double kStep = 0.1;
      const int steps = static_cast<int>(reach / kStep);
      std::vector<double> profile;
      for (int j = -steps; j <= steps; ++j) {
        profile.push_back(bilinear(img, base.x + j * kStep * n.x, base.y + j * kStep * n.y));
      }
      const auto [mn, mx] = std::minmax_element(profile.begin(), profile.end());
      if (*mx - *mn < 20.0) continue;
      // For a blurred step the area under the normalized profile fixes the
      // edge position independent of the blur shape.
      double area = 0.0;
      for (std::size_t j = 0; j < profile.size(); ++j) {
        const double weight = (j == 0 || j + 1 == profile.size()) ? 0.5 : 1.0;
        area += weight * (profile[j] - *mn) / (*mx - *mn) * kStep;
      }
      const double half = steps * kStep;
      const double best_offset = profile.back() > profile.front() ? half - area : area - half;
      if (std::abs(best_offset) < half) edge_points.push_back({base.x + best_offset * n.x, base.y + best_offset * n.y});
    }
    if (edge_points.size() < 4) return quad;
    double mx = 0.0;
    double my = 0.0;
    for (const auto& ep : edge_points) {
      mx += ep.x;
      my += ep.y;
    }
    mx /= static_cast<double>(edge_points.size());
    my /= static_cast<double>(edge_points.size());
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (const auto& ep : edge_points) {
      sxx += (ep.x - mx) * (ep.x - mx);
      sxy += (ep.x - mx) * (ep.y - my);
      syy += (ep.y - my) * (ep.y - my);
    }
    const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    lines[i] = {{mx, my}, {std::cos(angle), std::sin(angle)}};
  }
  std::array<Point2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto c = intersect(lines[(i + 3) % 4], lines[i]);
    if (!c || std::hypot(c->x - quad[i].x, c->y - quad[i].y) > 4.0) return quad;
    out[i] = *c;
  }
  return out;
}

struct Decoded {
  int id = -1;
  int errors = kMarkerBits;
  int start = 0;
};

Decoded decode_quad(const GrayImage& img, const std::array<Point2, 4>& corners, const MarkerDictionary& dict,
                    int max_bit_errors) {
  Decoded best;
  const std::array<Point2, 4> unit{Point2{0, 0}, Point2{0, 1}, Point2{1, 1}, Point2{1, 0}};
  for (int start = 0; start < 4; ++start) {
    std::array<Point2, 4> rotated{};
    for (std::size_t i = 0; i < 4; ++i) rotated[i] = corners[(i + static_cast<std::size_t>(start)) % 4];
    const auto h = fit_homography(unit, rotated);
    if (!h) return best;
    std::array<double, kMarkerGrid * kMarkerGrid> cells{};
    for (int r = 0; r < kMarkerGrid; ++r) {
      for (int c = 0; c < kMarkerGrid; ++c) {
        double sum = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const Point2 p = apply_homography(*h, (c + 0.5 + 0.25 * dx) / kMarkerGrid, (r + 0.5 + 0.25 * dy) / kMarkerGrid);
            sum += bilinear(img, p.x, p.y);
          }
        }
        cells[static_cast<std::size_t>(r * kMarkerGrid + c)] = sum / 9.0;
      }
    }
    const auto [mn, mx] = std::minmax_element(cells.begin(), cells.end());
    if (*mx - *mn < 30.0) return best;
    // Two-class split of the cell means.
    std::vector<double> sorted(cells.begin(), cells.end());
    std::sort(sorted.begin(), sorted.end());
    double threshold = 0.5 * (*mn + *mx);
    double best_between = -1.0;
    for (std::size_t k = 1; k < sorted.size(); ++k) {
      const double m0 = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / k;
      const double m1 = std::accumulate(sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end(), 0.0) /
                        static_cast<double>(sorted.size() - k);
      const double between = static_cast<double>(k) * static_cast<double>(sorted.size() - k) * (m1 - m0) * (m1 - m0);
      if (between > best_between) {
        best_between = between;
        threshold = 0.5 * (sorted[k - 1] + sorted[k]);
      }
    }
    int border_white = 0;
    MarkerCode code = 0;
    for (int r = 0; r < kMarkerGrid; ++r) {
      for (int c = 0; c < kMarkerGrid; ++c) {
        const bool white = cells[static_cast<std::size_t>(r * kMarkerGrid + c)] > threshold;
        const bool border = r == 0 || c == 0 || r == kMarkerGrid - 1 || c == kMarkerGrid - 1;
        if (border) {
          border_white += white ? 1 : 0;
        } else if (white) {
          code = static_cast<MarkerCode>(code | (1u << ((r - 1) * 4 + (c - 1))));
        }
      }
    }
    if (border_white > 1) continue;
    for (const auto& m : dict.markers()) {
      const int errors = hamming(m.code, code);
      if (errors <= max_bit_errors && errors < best.errors) best = {m.id, errors, start};
    }
  }
  return best;
}

}  // namespace

std::vector<Detection> detect_markers(const GrayImage& frame, const CameraIntrinsics& intr,
                                      const MarkerDictionary& dict, const DetectorOptions& options) {
  std::vector<Detection> found;
  if (frame.width < 32 || frame.height < 32 || dict.markers().empty()) return found;
  intr.validate();

  const int window = (std::max(15, std::min(frame.width, frame.height) / 10)) | 1;
  std::vector<std::vector<std::uint8_t>> masks;
  masks.push_back(adaptive_mask(frame, window, options.threshold_offset));
  const int t = otsu_threshold(frame.pixels);
  std::vector<std::uint8_t> global(frame.pixels.size());
  for (std::size_t i = 0; i < global.size(); ++i) global[i] = frame.pixels[i] <= t ? 1 : 0;
  masks.push_back(std::move(global));

  for (const auto& mask : masks) {
    for (const auto& comp : dark_components(mask, frame.width, frame.height, options.min_side_px)) {
      const auto hull = convex_hull(comp.pixels);
      const auto quad = hull_quad(hull, 0.5 * options.min_side_px);
      if (!quad) continue;
      const auto corners = refine_corners(frame, refine_corners(frame, *quad));
      const Decoded dec = decode_quad(frame, corners, dict, options.max_bit_errors);
      if (dec.id < 0) continue;
      Detection det;
      det.id = dec.id;
      for (std::size_t i = 0; i < 4; ++i) det.corners[i] = corners[(i + static_cast<std::size_t>(dec.start)) % 4];
      det.bit_errors = dec.errors;
      const double side = dict.at(dec.id).side_mm;
      try {
        det.pose = estimate_pose(det.corners, side, intr);
      } catch (const Error&) {
        continue;
      }
      det.reprojection_rms = reprojection_rms(det.corners, side, det.pose, intr);
      auto same = std::find_if(found.begin(), found.end(), [&](const Detection& d) { return d.id == det.id; });
      if (same == found.end()) {
        found.push_back(det);
      } else if (std::tie(det.bit_errors, det.reprojection_rms) < std::tie(same->bit_errors, same->reprojection_rms)) {
        *same = det;
      }
    }
  }
  std::sort(found.begin(), found.end(), [](const Detection& a, const Detection& b) { return a.id < b.id; });
  return found;
}

// ---------------------------------------------------------------- registry

void DatasetRegistry::link(int marker_id, std::string dataset_id) {
  if (dataset_id.empty()) throw Error(ErrorCode::InvalidArgument, "dataset id must not be empty");
  const auto it = links_.find(marker_id);
  if (it != links_.end() && it->second != dataset_id) {
    throw Error(ErrorCode::InvalidArgument,
                "marker " + std::to_string(marker_id) + " is already linked to '" + it->second + "'");
  }
  links_[marker_id] = std::move(dataset_id);
}

const std::string& DatasetRegistry::resolve(int marker_id) const {
  const auto it = links_.find(marker_id);
  if (it == links_.end()) {
    throw Error(ErrorCode::UnknownMarker, "marker " + std::to_string(marker_id) + " is not linked to a dataset");
  }
  return it->second;
}

DatasetRegistry parse_registry(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("invalid registry JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("markers") || !doc["markers"].is_object()) {
    throw Error(ErrorCode::InvalidArgument, "registry needs a \"markers\" object");
  }
  DatasetRegistry reg;
  for (const auto& [key, value] : doc["markers"].items()) {
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "registry marker key '" + key + "' is not an integer");
    }
    if (!value.is_string()) throw Error(ErrorCode::InvalidArgument, "registry values must be dataset id strings");
    reg.link(id, value.get<std::string>());
  }
  return reg;
}

}  // namespace xct
