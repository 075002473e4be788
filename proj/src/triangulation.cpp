// SPDX-License-Identifier: Apache-2.0
#include "epifuse/triangulation.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <limits>

namespace epifuse {

namespace {

Mat34 normalized_projection(const CameraModel& cam) {
  Mat3 n = Mat3::Identity();
  n(0, 0) = 1.0 / cam.width;
  n(1, 1) = 1.0 / cam.height;
  return n * cam.projection();
}

Vec3 solve_rows(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) < 1e-12) throw DegenerateSolution();
  return x.head<3>() / x(3);
}

Vec3 dlt_rows(const std::vector<Observation2D>& obs,
              const std::vector<CameraModel>& cameras,
              const std::vector<double>* row_scale) {
  Eigen::MatrixXd a(2 * obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const CameraModel& cam = cameras.at(obs[i].view);
    Mat34 p = normalized_projection(cam);
    double u = obs[i].point.x() / cam.width;
    double v = obs[i].point.y() / cam.height;
    double s = row_scale ? (*row_scale)[i] : 1.0;
    a.row(2 * i + 0) = s * (u * p.row(2) - p.row(0));
    a.row(2 * i + 1) = s * (v * p.row(2) - p.row(1));
  }
  return solve_rows(a);
}

}  // namespace

Vec3 triangulate_dlt(const std::vector<Observation2D>& obs,
                     const std::vector<CameraModel>& cameras) {
  if (obs.size() < 2) throw InsufficientViews();
  return dlt_rows(obs, cameras, nullptr);
}

Vec3 triangulate_weighted(const std::vector<Observation2D>& obs,
                          const std::vector<CameraModel>& cameras) {
  std::vector<Observation2D> kept;
  double max_conf = 0.0;
  for (const auto& o : obs) {
    if (!(o.confidence >= 0.0) || !std::isfinite(o.confidence))
      throw Error("confidence must be finite and >= 0");
    if (o.confidence > 0.0) {
      kept.push_back(o);
      max_conf = std::max(max_conf, o.confidence);
    }
  }
  if (kept.size() < 2) throw InsufficientConfidentViews();
  std::vector<double> scale(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) scale[i] = kept[i].confidence / max_conf;
  return dlt_rows(kept, cameras, &scale);
}

RansacResult triangulate_ransac(const std::vector<Observation2D>& obs,
                                const std::vector<CameraModel>& cameras,
                                double threshold_px, int min_inliers) {
  const std::size_t n = obs.size();
  if (n < 3) throw InsufficientViews();

  auto reprojection_error = [&](const Vec3& point, const Observation2D& o) {
    const CameraModel& cam = cameras.at(o.view);
    Vec3 pc = cam.rotation * point + cam.translation;
    if (pc.z() <= 1e-12) return std::numeric_limits<double>::infinity();
    Vec3 h = cam.intrinsics * pc;
    return (Vec2(h.x() / h.z(), h.y() / h.z()) - o.point).norm();
  };

  int best_count = -1;
  double best_mean_err = std::numeric_limits<double>::infinity();
  std::vector<bool> best_mask;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      Vec3 hypothesis;
      try {
        hypothesis = triangulate_dlt({obs[i], obs[j]}, cameras);
      } catch (const Error&) {
        continue;  // degenerate pair
      }
      std::vector<bool> mask(n, false);
      int count = 0;
      double err_sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double e = reprojection_error(hypothesis, obs[k]);
        if (e < threshold_px) {
          mask[k] = true;
          ++count;
          err_sum += e;
        }
      }
      double mean_err = count > 0 ? err_sum / count : std::numeric_limits<double>::infinity();
      if (count > best_count || (count == best_count && mean_err < best_mean_err)) {
        best_count = count;
        best_mean_err = mean_err;
        best_mask = mask;
      }
    }
  }

  if (best_count < std::max(min_inliers, 2)) throw NoConsensus();
  std::vector<Observation2D> inlier_obs;
  for (std::size_t k = 0; k < n; ++k)
    if (best_mask[k]) inlier_obs.push_back(obs[k]);
  return RansacResult{triangulate_dlt(inlier_obs, cameras), best_mask};
}

}  // namespace epifuse
