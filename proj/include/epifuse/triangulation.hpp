// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "epifuse/geometry.hpp"

namespace epifuse {

struct Observation2D {
  int view = 0;
  Vec2 point = Vec2::Zero();       // pixels
  double confidence = 1.0;
};

struct RansacResult {
  Vec3 point = Vec3::Zero();
  std::vector<bool> inliers;       // parallel to the observation list
};

// Homogeneous least-squares triangulation from the stacked cross-product
// constraints (two rows per view), observations normalized by image size
// before building the rows. Throws DegenerateSolution when the homogeneous
// w-component vanishes.
Vec3 triangulate_dlt(const std::vector<Observation2D>& obs,
                     const std::vector<CameraModel>& cameras);

// DLT with each view's rows scaled by its confidence (relative to the
// largest confidence); zero-confidence observations are dropped.
Vec3 triangulate_weighted(const std::vector<Observation2D>& obs,
                          const std::vector<CameraModel>& cameras);

// Deterministic consensus: every view pair is enumerated as a hypothesis,
// inliers counted by reprojection error strictly below the threshold, the
// winner re-triangulated on its inliers. Ties go to the smallest mean inlier
// reprojection error, then the smallest pair index.
RansacResult triangulate_ransac(const std::vector<Observation2D>& obs,
                                const std::vector<CameraModel>& cameras,
                                double threshold_px, int min_inliers = 2);

}  // namespace epifuse
