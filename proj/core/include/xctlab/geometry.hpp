#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "xctlab/fiber_table.hpp"
#include "xctlab/vec.hpp"

namespace xct {

/// Rigid transform with uniform scale: apply(p) = rotation * (scale * p) + translation.
struct Pose6DoF {
  Quat rotation;
  Vec3 translation;
  double scale = 1.0;

  static Pose6DoF identity() { return {}; }

  [[nodiscard]] Vec3 apply(const Vec3& p) const { return rotation.rotate(scale * p) + translation; }
  /// Rotation and scale only.
  [[nodiscard]] Vec3 apply_vector(const Vec3& v) const { return rotation.rotate(scale * v); }

  /// Throws InvalidArgument unless |rotation| = 1 within 1e-6 and scale > 0.
  void validate() const;

  friend bool operator==(const Pose6DoF&, const Pose6DoF&) = default;
};

/// {"rotation": [w, x, y, z], "translation": [x, y, z], "scale": s}. Missing
/// members default to the identity; the parsed pose is validated.
nlohmann::json pose_to_json(const Pose6DoF& pose);
Pose6DoF pose_from_json(const nlohmann::json& j);

/// Pose equivalent to applying child first, then parent.
Pose6DoF compose(const Pose6DoF& parent, const Pose6DoF& child);
Pose6DoF inverse(const Pose6DoF& pose);

inline constexpr double kMinZoom = 0.05;
inline constexpr double kMaxZoom = 50.0;

/// Two-point zoom: scale * (d1 / d0), clamped to [kMinZoom, kMaxZoom].
double pinch_scale(double d0, double d1, double scale);

/// Closed cylinder mesh for one fiber. Layout for s segments:
///   [0, s)        bottom side ring, radial normals
///   [s, 2s)       top side ring, radial normals
///   2s, 2s+1      bottom / top cap centres
///   [2s+2, 3s+2)  bottom cap ring, normal -axis
///   [3s+2, 4s+2)  top cap ring, normal +axis
/// Triangles wind counter-clockwise seen from outside: 2s side + 2s cap = 4s.
struct CylinderMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  std::vector<std::uint32_t> indices;
  std::int64_t fiber_id = 0;

  [[nodiscard]] std::size_t triangle_count() const { return indices.size() / 3; }
};

/// Builds the mesh from start to end with radius diameter / 2. Ring vertex k
/// sits at angle 2 pi k / segments in the frame u = normalize(ref x axis),
/// w = axis x u, where ref = +z unless |axis . z| > 0.9, then +x.
/// Throws DegenerateFiber for zero length, InvalidArgument for segments < 3.
CylinderMesh fiber_to_cylinder(const FiberRecord& record, int segments);

/// Enclosed volume by the divergence theorem (sum of signed tetrahedra).
double mesh_volume(const CylinderMesh& mesh);

/// Wire format for meshes:
///   u32 LE   header length H
///   H bytes  UTF-8 JSON {"fiber_id", "vertex_count", "index_count",
///            "positions": {"offset", "bytes"}, "normals": {...}, "indices": {...}}
///   payload  positions and normals as float32 LE xyz triples, indices as u32 LE;
///            offsets are relative to the start of the payload.
std::vector<std::byte> encode_mesh(const CylinderMesh& mesh);
/// Decodes one framed mesh starting at bytes[0]; consumed receives the frame size.
CylinderMesh decode_mesh(std::span<const std::byte> bytes, std::size_t* consumed = nullptr);

}  // namespace xct
