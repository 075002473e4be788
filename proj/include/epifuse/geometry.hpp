// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "epifuse/errors.hpp"

namespace epifuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Pinhole camera: x = K [R | t] X. Pixel (0,0) is the center of the
// top-left pixel; all pixel coordinates are continuous.
struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();   // upper triangular, K(2,2) == 1
  Mat3 rotation = Mat3::Identity();     // world -> camera
  Vec3 translation = Vec3::Zero();      // camera frame, meters
  int width = 0;
  int height = 0;

  Mat34 projection() const;
  Vec3 center() const;  // camera center in world coordinates, -R^T t

  // Camera viewing the same scene at a different pixel resolution.
  CameraModel scaled_to(int new_width, int new_height) const;

  // Throws Error when an invariant (triangular K, orthonormal R with
  // det +1, rank-3 P) is violated.
  void validate(double tol = 1e-9) const;
};

struct FundamentalMatrix {
  // Unit Frobenius norm; first entry in row-major order with magnitude
  // above 1e-12 is positive.
  Mat3 m = Mat3::Zero();
};

struct EpipolarLine {
  // a*u + b*v + c = 0 with a^2 + b^2 == 1
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

// Projects a world point. Throws ZeroDepth when |z| < 1e-12 in the camera
// frame; with strict=true also throws BehindCamera when z < 0.
Vec2 project(const CameraModel& camera, const Vec3& point, bool strict = true);

// Depth of a world point along the camera's optical axis.
double depth_in_camera(const CameraModel& camera, const Vec3& point);

// F with x2^T F x1 = 0, built as [e2]_x P2 P1^+ and normalized.
// Throws DegenerateBaseline when the camera centers coincide.
FundamentalMatrix fundamental_from_projections(const CameraModel& p1,
                                               const CameraModel& p2);
FundamentalMatrix fundamental_from_projection_matrices(const Mat34& p1,
                                                       const Mat34& p2);

// Applies the normalization convention of FundamentalMatrix to an arbitrary
// nonzero 3x3 matrix.
Mat3 normalize_fundamental(const Mat3& f);
// Sign convention only (first non-negligible row-major entry positive); used
// where the input is already unit-norm and must not be perturbed.
Mat3 fix_fundamental_sign(const Mat3& f);

// Epipolar line of x in the other view: l' = F x~. Throws DegenerateLine
// when x is the epipole.
EpipolarLine epipolar_line(const FundamentalMatrix& f, const Vec2& x);

// Squared first-order approximation of the reprojection error (pixels^2).
// Bit-exact under swapping (x, x') -> (x', x) together with F -> F^T.
double sampson_distance(const FundamentalMatrix& f, const Vec2& x,
                        const Vec2& x_prime);

// Gold-standard two-view reprojection distance (pixels): triangulates with
// DLT and refines the 3D point by damped least squares. Test oracle for
// sampson_distance; throws NoConvergence after 200 refinement iterations.
double reprojection_distance_oracle(const CameraModel& p1, const CameraModel& p2,
                                    const Vec2& x, const Vec2& x_prime);

// Rig serialization: JSON document with row-major K, R and t per camera.
std::string rig_to_json(const std::vector<CameraModel>& cameras);
std::vector<CameraModel> rig_from_json(const std::string& json_text);
void save_rig_json(const std::string& path, const std::vector<CameraModel>& cameras);
std::vector<CameraModel> load_rig_json(const std::string& path);

}  // namespace epifuse
