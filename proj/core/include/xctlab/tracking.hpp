#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xctlab/geometry.hpp"
#include "xctlab/image_io.hpp"

namespace xct {

/// Image coordinates put pixel centres on integers; x right, y down.
struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline constexpr int kMarkerGrid = 6;   ///< cells per side, border included
inline constexpr int kMarkerBits = 16;  ///< 4x4 interior cells
inline constexpr int kMarkerDataBits = 14;

/// Interior bits in row-major order, bit i for cell (1 + i / 4, 1 + i % 4);
/// 1 is white. Cells 0..13 carry data, cell 14 is the parity of the even data
/// bits and cell 15 the parity of the odd ones.
using MarkerCode = std::uint16_t;

MarkerCode encode_marker_word(std::uint16_t data);
bool parity_ok(MarkerCode code);
/// Code of the bit grid turned a quarter clockwise, as seen in the image.
MarkerCode rotate_code(MarkerCode code);
int hamming(MarkerCode a, MarkerCode b);

struct MarkerDescriptor {
  int id = 0;
  MarkerCode code = 0;
  double side_mm = 50.0;  ///< outer edge of the black border

  /// Full 6x6 grid, row-major, true = white. The border is black.
  [[nodiscard]] std::array<bool, kMarkerGrid * kMarkerGrid> grid() const;
};

/// Codes with a minimum Hamming distance of 3 over all four rotations of every
/// pair (and of each code against its own rotations), so single-bit errors
/// decode unambiguously.
class MarkerDictionary {
 public:
  MarkerDictionary() = default;
  /// Throws BadDictionary on duplicate ids, a bad parity or distance < 3.
  explicit MarkerDictionary(std::vector<MarkerDescriptor> markers);

  /// Deterministic greedy construction; ids are 0..count-1.
  static MarkerDictionary generate(int count, double side_mm = 50.0);
  static const MarkerDictionary& standard();

  [[nodiscard]] const std::vector<MarkerDescriptor>& markers() const { return markers_; }
  /// Throws UnknownMarker.
  [[nodiscard]] const MarkerDescriptor& at(int id) const;
  [[nodiscard]] bool contains(int id) const;

 private:
  std::vector<MarkerDescriptor> markers_;
};

/// {"markers": [{"id": 7, "bits": [[0,0,0,0,0,0], ...6 rows], "side_mm": 50}]}
MarkerDictionary parse_marker_dictionary(std::string_view json_text);
std::string format_marker_dictionary(const MarkerDictionary& dict);

struct CameraIntrinsics {
  double fx = 1600.0;
  double fy = 1600.0;
  double cx = 639.5;
  double cy = 479.5;

  static CameraIntrinsics for_frame(int width, int height, double focal_px);
  void validate() const;
  /// Camera-frame point to pixel; the camera looks down +z, y down.
  [[nodiscard]] Point2 project(const Vec3& p) const;
};

/// Marker frame: centred, x along the top edge to the right, y down the left
/// edge, z into the marker. Corners in detection order TL, BL, BR, TR.
std::array<Vec3, 4> marker_corners_3d(double side_mm);

struct Detection {
  int id = 0;
  std::array<Point2, 4> corners;  ///< TL, BL, BR, TR of the marker
  Pose6DoF pose;                  ///< marker to camera
  int bit_errors = 0;
  double reprojection_rms = 0.0;  ///< px
};

struct DetectorOptions {
  int min_side_px = 12;
  double threshold_offset = 7.0;  ///< adaptive: dark if below local mean minus this
  int max_bit_errors = 1;
};

/// Empty for frames below 32x32 or without markers. One detection per id.
std::vector<Detection> detect_markers(const GrayImage& frame, const CameraIntrinsics& intr,
                                      const MarkerDictionary& dict, const DetectorOptions& options = {});

/// Planar pose from the four corners (TL, BL, BR, TR) via a normalized DLT
/// homography and orthonormalization, polished by a few damped Gauss-Newton
/// steps on the corner reprojection error. Throws DegenerateCorners.
Pose6DoF estimate_pose(const std::array<Point2, 4>& corners, double side_mm, const CameraIntrinsics& intr);

double reprojection_rms(const std::array<Point2, 4>& corners, double side_mm, const Pose6DoF& pose,
                        const CameraIntrinsics& intr);

struct MarkerPlacement {
  int id = 0;
  Pose6DoF pose;  ///< marker to camera
};

struct SyntheticFrameOptions {
  int width = 1280;
  int height = 960;
  std::uint8_t background = 160;
  int supersample = 4;  ///< per axis
  double quiet_zone_cells = 1.0;  ///< white margin printed around each marker
};

/// Area-sampled render of markers seen by a pinhole camera. Nearer markers
/// occlude farther ones.
GrayImage render_marker_frame(const std::vector<MarkerPlacement>& placements, const MarkerDictionary& dict,
                              const CameraIntrinsics& intr, const SyntheticFrameOptions& options = {});

/// Projected corners of a placed marker, in detection order.
std::array<Point2, 4> project_marker(const MarkerPlacement& placement, double side_mm, const CameraIntrinsics& intr);

/// Marker id to dataset id; several markers may share a dataset.
class DatasetRegistry {
 public:
  /// Throws InvalidArgument when the marker is already linked elsewhere.
  void link(int marker_id, std::string dataset_id);
  /// Throws UnknownMarker.
  [[nodiscard]] const std::string& resolve(int marker_id) const;
  [[nodiscard]] bool contains(int marker_id) const { return links_.contains(marker_id); }
  [[nodiscard]] const std::map<int, std::string>& links() const { return links_; }

 private:
  std::map<int, std::string> links_;
};

/// {"markers": {"7": "fiber_sample_A", "8": "fiber_sample_A"}}
DatasetRegistry parse_registry(std::string_view json_text);

}  // namespace xct
