#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "xctlab/geometry.hpp"
#include "xctlab/image_io.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

/// Pinhole camera. The pose maps camera to world; the camera looks down its
/// local -z with +y up and +x to the right.
struct Camera {
  Pose6DoF pose;
  double fov_y_deg = 45.0;  ///< Vertical field of view, (0, 180).
  double near = 1e-3;       ///< mm, > 0.

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg = 45.0);
  /// Orbit around target: azimuth about +z from +x, elevation above the xy plane.
  static Camera orbit(const Vec3& target, double distance, double azimuth_deg, double elevation_deg,
                      double fov_y_deg = 45.0);

  void validate() const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  ///< unit
};

/// World-space ray through the centre of pixel (px, py).
Ray pixel_ray(const Camera& camera, int px, int py, int width, int height);

/// Piecewise-linear map from normalized intensity to RGBA, components in [0,1].
class TransferFunction {
 public:
  struct ControlPoint {
    double intensity;
    std::array<double, 4> rgba;
  };

  /// Throws BadTF unless there are >= 2 points, the first at 0 and the last
  /// at 1, intensities strictly increasing and components within [0,1].
  explicit TransferFunction(std::vector<ControlPoint> points);

  static TransferFunction grayscale_ramp(double max_alpha = 0.1);

  [[nodiscard]] std::array<double, 4> evaluate(double intensity) const;
  [[nodiscard]] const std::vector<ControlPoint>& points() const { return points_; }

 private:
  std::vector<ControlPoint> points_;
};

/// JSON: {"points": [{"x": 0, "rgba": [r, g, b, a]}, ...]}. Errors surface as BadTF.
TransferFunction parse_transfer_function(std::string_view json_text);
std::string format_transfer_function(const TransferFunction& tf);

struct RenderOptions {
  double step = 0.0;            ///< mm; 0 selects 0.5 * min spacing.
  double reference_step = 0.0;  ///< mm over which TF alpha applies; 0 selects min spacing.
  std::array<double, 4> background{0.0, 0.0, 0.0, 1.0};
  Pose6DoF model;               ///< Volume frame to world.
};

/// Trilinear interpolation of normalized intensity at a point in the
/// volume's frame (mm). The sampled domain is the voxel-cell box
/// [origin - spacing/2, origin + (dims - 1/2) spacing]; values inside the
/// outer half voxel clamp to the edge voxel, points outside the box give 0.
double sample_trilinear(const Volume& volume, const Vec3& p);

/// Maximum intensity projection. Each ray is clipped to the volume box and the
/// near plane, split into segments of the step length (last one shorter) and
/// sampled at segment midpoints; pixel = grey(round(255 * max)).
ImageRGBA render_mip(const Volume& volume, const Camera& camera, int width, int height,
                     const RenderOptions& options = {});

/// Emission-absorption compositing, front to back over the same samples as
/// MIP. Opacity per sample is 1 - (1 - a)^(segment / reference_step); rays
/// stop once accumulated alpha reaches 0.99; the background goes last. Flat
/// shading, no gamma.
ImageRGBA render_dvr(const Volume& volume, const TransferFunction& tf, const Camera& camera, int width,
                     int height, const RenderOptions& options = {});

}  // namespace xct
