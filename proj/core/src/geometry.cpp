#include "xctlab/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "xctlab/error.hpp"

namespace xct {

namespace {

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::vector<std::byte>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

}  // namespace

void Pose6DoF::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-6) {
    throw Error(ErrorCode::InvalidArgument, "pose rotation must be a unit quaternion");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::InvalidArgument, "pose scale must be > 0");
  }
}

nlohmann::json pose_to_json(const Pose6DoF& pose) {
  const Quat& q = pose.rotation;
  const Vec3& t = pose.translation;
  return {{"rotation", {q.w, q.x, q.y, q.z}}, {"translation", {t.x, t.y, t.z}}, {"scale", pose.scale}};
}

Pose6DoF pose_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "pose must be a JSON object");
  auto numbers = [&](const char* key, std::size_t n) {
    std::vector<double> out;
    const auto& arr = j.at(key);
    if (!arr.is_array() || arr.size() != n) {
      throw Error(ErrorCode::InvalidArgument, std::string("pose ") + key + " needs " + std::to_string(n) + " numbers");
    }
    for (const auto& v : arr) {
      if (!v.is_number()) throw Error(ErrorCode::InvalidArgument, std::string("pose ") + key + " must be numeric");
      out.push_back(v.get<double>());
    }
    return out;
  };
  Pose6DoF pose;
  if (j.contains("rotation")) {
    const auto q = numbers("rotation", 4);
    pose.rotation = {q[0], q[1], q[2], q[3]};
  }
  if (j.contains("translation")) {
    const auto t = numbers("translation", 3);
    pose.translation = {t[0], t[1], t[2]};
  }
  if (j.contains("scale")) {
    if (!j["scale"].is_number()) throw Error(ErrorCode::InvalidArgument, "pose scale must be numeric");
    pose.scale = j["scale"].get<double>();
  }
  pose.validate();
  return pose;
}

Pose6DoF compose(const Pose6DoF& parent, const Pose6DoF& child) {
  Pose6DoF out;
  out.rotation = (parent.rotation * child.rotation).normalized();
  out.scale = parent.scale * child.scale;
  out.translation = parent.rotation.rotate(parent.scale * child.translation) + parent.translation;
  return out;
}

Pose6DoF inverse(const Pose6DoF& pose) {
  Pose6DoF out;
  out.rotation = pose.rotation.conjugate();
  out.scale = 1.0 / pose.scale;
  out.translation = -(out.rotation.rotate(pose.translation) * out.scale);
  return out;
}

double pinch_scale(double d0, double d1, double scale) {
  if (!(d0 > 0.0) || !(d1 > 0.0)) throw Error(ErrorCode::InvalidArgument, "pinch distances must be > 0");
  return std::clamp(scale * (d1 / d0), kMinZoom, kMaxZoom);
}

CylinderMesh fiber_to_cylinder(const FiberRecord& record, int segments) {
  if (segments < 3) throw Error(ErrorCode::InvalidArgument, "segments must be >= 3");
  const Vec3 start{record.start_x, record.start_y, record.start_z};
  const Vec3 end{record.end_x, record.end_y, record.end_z};
  const double length = distance(start, end);
  if (!(length > 0.0)) {
    throw Error(ErrorCode::DegenerateFiber, "fiber " + std::to_string(record.id) + " has zero length");
  }
  const double radius = 0.5 * record.diameter;
  const Vec3 axis = (end - start) / length;
  const Vec3 ref = std::abs(axis.z) > 0.9 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
  const Vec3 u = normalized(cross(ref, axis));
  const Vec3 w = cross(axis, u);

  const auto s = static_cast<std::uint32_t>(segments);
  CylinderMesh mesh;
  mesh.fiber_id = record.id;
  mesh.vertices.reserve(4 * s + 2);
  std::vector<Vec3> radial(s);
  for (std::uint32_t k = 0; k < s; ++k) {
    const double a = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(s);
    radial[k] = std::cos(a) * u + std::sin(a) * w;
  }
  for (const Vec3& base : {start, end}) {
    for (std::uint32_t k = 0; k < s; ++k) {
      mesh.vertices.push_back(base + radius * radial[k]);
      mesh.normals.push_back(radial[k]);
    }
  }
  mesh.vertices.push_back(start);
  mesh.normals.push_back(-axis);
  mesh.vertices.push_back(end);
  mesh.normals.push_back(axis);
  for (std::uint32_t k = 0; k < s; ++k) {
    mesh.vertices.push_back(start + radius * radial[k]);
    mesh.normals.push_back(-axis);
  }
  for (std::uint32_t k = 0; k < s; ++k) {
    mesh.vertices.push_back(end + radius * radial[k]);
    mesh.normals.push_back(axis);
  }

  const std::uint32_t bottom_center = 2 * s;
  const std::uint32_t top_center = 2 * s + 1;
  const std::uint32_t bottom_ring = 2 * s + 2;
  const std::uint32_t top_ring = 3 * s + 2;
  auto tri = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c) {
    mesh.indices.insert(mesh.indices.end(), {a, b, c});
  };
  // u, w, axis is right-handed, so increasing k runs counter-clockwise about +axis.
  for (std::uint32_t k = 0; k < s; ++k) {
    const std::uint32_t n = (k + 1) % s;
    tri(k, n, s + n);
    tri(k, s + n, s + k);
    tri(bottom_center, bottom_ring + n, bottom_ring + k);
    tri(top_center, top_ring + k, top_ring + n);
  }
  return mesh;
}

double mesh_volume(const CylinderMesh& mesh) {
  double v = 0.0;
  for (std::size_t t = 0; t + 2 < mesh.indices.size(); t += 3) {
    const Vec3& a = mesh.vertices[mesh.indices[t]];
    const Vec3& b = mesh.vertices[mesh.indices[t + 1]];
    const Vec3& c = mesh.vertices[mesh.indices[t + 2]];
    v += dot(a, cross(b, c));
  }
  return v / 6.0;
}

std::vector<std::byte> encode_mesh(const CylinderMesh& mesh) {
  const std::size_t vbytes = mesh.vertices.size() * 12;
  const std::size_t ibytes = mesh.indices.size() * 4;
  nlohmann::json header = {
      {"fiber_id", mesh.fiber_id},
      {"vertex_count", mesh.vertices.size()},
      {"index_count", mesh.indices.size()},
      {"positions", {{"offset", 0}, {"bytes", vbytes}, {"type", "float32"}}},
      {"normals", {{"offset", vbytes}, {"bytes", vbytes}, {"type", "float32"}}},
      {"indices", {{"offset", 2 * vbytes}, {"bytes", ibytes}, {"type", "uint32"}}},
  };
  const std::string text = header.dump();
  std::vector<std::byte> out;
  out.reserve(4 + text.size() + 2 * vbytes + ibytes);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  for (const char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto* list : {&mesh.vertices, &mesh.normals}) {
    for (const Vec3& p : *list) {
      put_f32(out, p.x);
      put_f32(out, p.y);
      put_f32(out, p.z);
    }
  }
  for (const auto i : mesh.indices) put_u32(out, i);
  return out;
}

CylinderMesh decode_mesh(std::span<const std::byte> bytes, std::size_t* consumed) {
  auto fail = [] { throw Error(ErrorCode::InvalidArgument, "truncated or malformed mesh frame"); };
  if (bytes.size() < 4) fail();
  const std::uint32_t hlen = get_u32(bytes.data());
  if (bytes.size() < 4 + static_cast<std::size_t>(hlen)) fail();
  const auto header = nlohmann::json::parse(
      std::string_view(reinterpret_cast<const char*>(bytes.data() + 4), hlen));
  const auto nv = header.at("vertex_count").get<std::size_t>();
  const auto ni = header.at("index_count").get<std::size_t>();
  const std::byte* payload = bytes.data() + 4 + hlen;
  const std::size_t total = 4 + hlen + nv * 24 + ni * 4;
  if (bytes.size() < total) fail();

  CylinderMesh mesh;
  mesh.fiber_id = header.at("fiber_id").get<std::int64_t>();
  auto read_vec3s = [&](std::size_t offset, std::vector<Vec3>& dst) {
    dst.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      const std::byte* p = payload + offset + 12 * i;
      dst[i] = {std::bit_cast<float>(get_u32(p)), std::bit_cast<float>(get_u32(p + 4)),
                std::bit_cast<float>(get_u32(p + 8))};
    }
  };
  read_vec3s(header.at("positions").at("offset").get<std::size_t>(), mesh.vertices);
  read_vec3s(header.at("normals").at("offset").get<std::size_t>(), mesh.normals);
  const auto ioff = header.at("indices").at("offset").get<std::size_t>();
  mesh.indices.resize(ni);
  for (std::size_t i = 0; i < ni; ++i) mesh.indices[i] = get_u32(payload + ioff + 4 * i);
  if (consumed != nullptr) *consumed = total;
  return mesh;
}

}  // namespace xct
