#pragma once

#include <cstdint>
#include <vector>

#include "xctlab/fiber_table.hpp"
#include "xctlab/random.hpp"
#include "xctlab/vec.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

/// Straight capped cylinder in world millimetres.
struct CylinderSpec {
  Vec3 start;
  Vec3 end;
  double radius = 1.0;
};

struct PhantomOptions {
  double foreground = 200.0;
  double background = 20.0;
  double noise_sigma = 0.0;  ///< Additive Gaussian noise, raw units.
  int supersample = 4;       ///< Partial-volume subsamples per axis on boundary voxels.
  std::uint64_t seed = 1;    ///< Noise seed.
};

/// Voxelizes cylinders with partial-volume coverage: each voxel holds
/// background + (foreground - background) * covered fraction, rounded to the
/// dtype. Overlaps take the larger coverage.
Volume render_phantom(const VolumeMeta& meta, const std::vector<CylinderSpec>& cylinders,
                      const PhantomOptions& options = {});

struct RandomCylinderOptions {
  int count = 20;
  double radius_min = 2.0, radius_max = 4.0;     ///< voxels
  double length_min = 20.0, length_max = 60.0;   ///< voxels
  double min_gap = 6.0;   ///< Minimum surface-to-surface distance, voxels.
  double margin = 4.0;    ///< Minimum clearance from the volume faces, voxels.
  int max_attempts = 20000;
};

/// Rejection-samples non-overlapping cylinders with uniform random direction
/// inside the volume described by meta. Returns fewer than requested only if
/// max_attempts is exhausted.
std::vector<CylinderSpec> random_cylinders(Rng& rng, const VolumeMeta& meta,
                                           const RandomCylinderOptions& options);

/// Shortest distance between segments [p0,p1] and [q0,q1].
double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1);

/// Exact schema v1 records for the given cylinders, ids from 1.
FiberTable cylinder_table(const std::vector<CylinderSpec>& cylinders);

/// Random but internally consistent fiber table (curved fibers modelled as
/// arcs), for exercising the table, chart and service paths at a given size.
FiberTable random_fiber_table(Rng& rng, int count, const Vec3& extent_mm);

}  // namespace xct
