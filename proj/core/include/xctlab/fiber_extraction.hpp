#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "xctlab/fiber_table.hpp"
#include "xctlab/vec.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

/// Parameters of the medial-axis extraction pipeline.
struct ExtractionConfig {
  double sigma = 2.0;              ///< Gaussian scale, voxels.
  double ridge_threshold = 0.05;   ///< Minimum tubularity to seed or continue a trace.
  double step = 0.5;               ///< Tracing step, voxels, in (0, 1].
  double min_length = 5.0;         ///< Traces shorter than this (mm) are dropped.
  double max_angle = 30.0;         ///< Maximum direction change per step, degrees.
  double seed_suppression_radius = 4.0;  ///< Voxels consumed around every traced point.

  /// Defaults with min_length = 5 voxels at the volume's smallest spacing and
  /// suppression radius = 2 sigma.
  static ExtractionConfig for_spacing(const std::array<double, 3>& spacing);

  /// Throws InvalidArgument when a field is outside its documented range.
  void validate() const;
};

/// Eigen-decomposition of a symmetric 3x3 matrix, sorted by |value| ascending.
struct HessianEigen {
  std::array<double, 3> values{};
  std::array<Vec3, 3> vectors{};
};

/// Cyclic Jacobi rotations until the off-diagonal mass is below 1e-15 of the
/// Frobenius norm; eigenvectors come out orthonormal by construction.
HessianEigen eigen_symmetric(const Mat3& m);

/// Eigenvalues only, via the closed-form trigonometric solution of the
/// characteristic cubic; sorted by |value| ascending. Used for dense fields.
std::array<double, 3> symmetric_eigenvalues(const Mat3& m);

/// Normalized discrete Gaussian, radius ceil(3 sigma), weights sum to 1.
std::vector<double> gaussian_kernel(double sigma);

/// Separable 3-pass Gaussian with clamp-to-edge borders. The result is a
/// float32 volume keeping the input geometry and normalization range.
Volume gaussian_blur(const Volume& volume, double sigma);

/// Hessian from central second differences scaled by spacing (raw intensity
/// per mm^2). Throws BorderVoxel closer than one voxel to any face.
Mat3 hessian_matrix_at(const Volume& volume, std::int64_t x, std::int64_t y, std::int64_t z);
HessianEigen hessian_at(const Volume& volume, std::int64_t x, std::int64_t y, std::int64_t z);

/// Frangi weights used by tubularity().
inline constexpr double kTubularityAlpha = 0.5;
inline constexpr double kTubularityBeta = 0.5;
/// Supremum of tubularity(): the plate/line factor at |l2| = |l3| with the
/// blob and structure factors saturated at 1.
double tubularity_scale();

/// Bright-tube Frangi response
///   (1 - exp(-Ra^2 / 2a^2)) * exp(-Rb^2 / 2b^2) * (1 - exp(-S^2 / 2c^2))
/// with Ra = |l2|/|l3|, Rb = |l1|/sqrt(|l2 l3|), S the Frobenius norm and
/// c = structure_scale. Zero unless l2 < 0 and l3 < 0. Range [0, 1).
double tubularity(const std::array<double, 3>& sorted_values, double structure_scale);
inline double tubularity(const HessianEigen& e, double structure_scale) {
  return tubularity(e.values, structure_scale);
}

/// Dense tubularity of an already blurred volume. structure_scale is half the
/// maximum Hessian Frobenius norm over the interior; border voxels are 0.
struct TubularityField {
  std::vector<float> values;
  double structure_scale = 1.0;
};
TubularityField tubularity_field(const Volume& blurred);

struct FiberTrace {
  std::vector<Vec3> points;             ///< mm, world frame of the volume.
  std::vector<double> radius_estimates; ///< mm, one per point.
  std::vector<double> responses;        ///< tubularity at each point.

  [[nodiscard]] double arc_length() const;
};

/// Seeds at local tubularity maxima (ties: lowest flat index first), traces
/// both ways along the smallest-magnitude Hessian eigenvector with sub-voxel
/// centering, refines ends to the half-maximum of the axial intensity profile
/// and estimates radii as half-width at half-maximum across two perpendicular
/// lines through each point.
std::vector<FiberTrace> trace_fibers(const Volume& volume, const ExtractionConfig& cfg);

/// Turns a trace into a schema v1 record. Throws DegenerateTrace when the
/// trace has fewer than 2 points or coincident ends.
FiberRecord characterize(const FiberTrace& trace, std::int64_t id);

/// trace_fibers followed by characterize, ids numbered from 1.
FiberTable extract_fibers(const Volume& volume, const ExtractionConfig& cfg);

}  // namespace xct
