// SPDX-License-Identifier: Apache-2.0
#include "epifuse/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace epifuse {

namespace {

Eigen::Vector4d null_vector(const Mat34& p) {
  Eigen::JacobiSVD<Mat34> svd(p, Eigen::ComputeFullV);
  return svd.matrixV().col(3);
}

Eigen::Matrix<double, 4, 3> pseudo_inverse(const Mat34& p) {
  Eigen::JacobiSVD<Mat34> svd(p, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double cutoff = 1e-12 * sv(0);
  Eigen::Matrix<double, 4, 3> inv = Eigen::Matrix<double, 4, 3>::Zero();
  for (int i = 0; i < 3; ++i) {
    if (sv(i) > cutoff)
      inv += svd.matrixV().col(i) * (1.0 / sv(i)) * svd.matrixU().col(i).transpose();
  }
  return inv;
}

Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace

Mat34 CameraModel::projection() const {
  Mat34 rt;
  rt.block<3, 3>(0, 0) = rotation;
  rt.col(3) = translation;
  return intrinsics * rt;
}

Vec3 CameraModel::center() const { return -rotation.transpose() * translation; }

CameraModel CameraModel::scaled_to(int new_width, int new_height) const {
  CameraModel out = *this;
  double sx = static_cast<double>(new_width) / width;
  double sy = static_cast<double>(new_height) / height;
  Mat3 s = Mat3::Identity();
  s(0, 0) = sx;
  s(1, 1) = sy;
  out.intrinsics = s * intrinsics;
  out.width = new_width;
  out.height = new_height;
  return out;
}

void CameraModel::validate(double tol) const {
  if (std::abs(intrinsics(1, 0)) > tol || std::abs(intrinsics(2, 0)) > tol ||
      std::abs(intrinsics(2, 1)) > tol)
    throw Error("intrinsics not upper-triangular");
  if (intrinsics(2, 2) != 1.0) throw Error("intrinsics(2,2) must be 1");
  if ((rotation * rotation.transpose() - Mat3::Identity()).norm() > tol)
    throw Error("rotation not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > tol)
    throw Error("rotation determinant not +1");
  Eigen::JacobiSVD<Mat34> svd(projection());
  if (svd.singularValues()(2) <= 1e-12 * svd.singularValues()(0))
    throw Error("projection not rank 3");
}

double depth_in_camera(const CameraModel& camera, const Vec3& point) {
  return (camera.rotation * point + camera.translation).z();
}

Vec2 project(const CameraModel& camera, const Vec3& point, bool strict) {
  Vec3 pc = camera.rotation * point + camera.translation;
  if (std::abs(pc.z()) < 1e-12) throw ZeroDepth();
  if (strict && pc.z() < 0.0) throw BehindCamera();
  Vec3 h = camera.intrinsics * pc;
  return Vec2(h.x() / h.z(), h.y() / h.z());
}

Mat3 fix_fundamental_sign(const Mat3& f) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double v = f(r, c);
      if (std::abs(v) > 1e-12) return v < 0.0 ? Mat3(-f) : f;
    }
  }
  return f;
}

Mat3 normalize_fundamental(const Mat3& f) {
  double n = f.norm();
  if (n <= 0.0 || !std::isfinite(n)) throw Error("zero fundamental matrix");
  return fix_fundamental_sign(f / n);
}

FundamentalMatrix fundamental_from_projection_matrices(const Mat34& p1,
                                                       const Mat34& p2) {
  Eigen::Vector4d c1 = null_vector(p1);
  Eigen::Vector4d c2 = null_vector(p2);
  bool finite1 = std::abs(c1(3)) > 1e-12 * c1.norm();
  bool finite2 = std::abs(c2(3)) > 1e-12 * c2.norm();
  if (finite1 && finite2) {
    Vec3 e1 = c1.head<3>() / c1(3);
    Vec3 e2 = c2.head<3>() / c2(3);
    if ((e1 - e2).norm() <= 1e-9) throw DegenerateBaseline();
  } else {
    // centers at infinity: compare directions up to sign
    Eigen::Vector4d u1 = c1.normalized(), u2 = c2.normalized();
    if (std::min((u1 - u2).norm(), (u1 + u2).norm()) <= 1e-12)
      throw DegenerateBaseline();
  }
  Vec3 e_prime = p2 * c1;
  Mat3 f = cross_matrix(e_prime) * (p2 * pseudo_inverse(p1));
  return FundamentalMatrix{normalize_fundamental(f)};
}

FundamentalMatrix fundamental_from_projections(const CameraModel& p1,
                                               const CameraModel& p2) {
  return fundamental_from_projection_matrices(p1.projection(), p2.projection());
}

EpipolarLine epipolar_line(const FundamentalMatrix& f, const Vec2& x) {
  Vec3 xt(x.x(), x.y(), 1.0);
  Vec3 l = f.m * xt;
  double n = std::hypot(l.x(), l.y());
  if (n <= 1e-9 * xt.norm()) throw DegenerateLine();
  return EpipolarLine{l.x() / n, l.y() / n, l.z() / n};
}

double sampson_distance(const FundamentalMatrix& f, const Vec2& x,
                        const Vec2& x_prime) {
  const Mat3& F = f.m;
  const double xt[3] = {x.x(), x.y(), 1.0};
  const double xp[3] = {x_prime.x(), x_prime.y(), 1.0};

  // numerator x'^T F x, accumulated in a transpose/swap-symmetric order so
  // that sampson(F, x, x') == sampson(F^T, x', x) bit-exactly
  double num = 0.0;
  for (int i = 0; i < 3; ++i) num += F(i, i) * (xp[i] * xt[i]);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      double upper = F(i, j) * (xp[i] * xt[j]);
      double lower = F(j, i) * (xp[j] * xt[i]);
      num += upper + lower;
    }

  auto line_sq = [](const Mat3& m, const double v[3], bool transpose) {
    double l0, l1;
    if (!transpose) {
      l0 = m(0, 0) * v[0] + m(0, 1) * v[1] + m(0, 2);
      l1 = m(1, 0) * v[0] + m(1, 1) * v[1] + m(1, 2);
    } else {
      l0 = m(0, 0) * v[0] + m(1, 0) * v[1] + m(2, 0);
      l1 = m(0, 1) * v[0] + m(1, 1) * v[1] + m(2, 1);
    }
    return l0 * l0 + l1 * l1;
  };
  double a = line_sq(F, xt, false);    // (F x)_1^2 + (F x)_2^2
  double b = line_sq(F, xp, true);     // (F^T x')_1^2 + (F^T x')_2^2
  double den = a + b;
  if (den <= 1e-18) throw DegenerateDenominator();
  return (num * num) / den;
}

namespace {

// DLT triangulation of a two-view correspondence (homogeneous LS).
Eigen::Vector4d triangulate_pair(const Mat34& p1, const Mat34& p2, const Vec2& x,
                                 const Vec2& xp) {
  Eigen::Matrix4d a;
  a.row(0) = x.x() * p1.row(2) - p1.row(0);
  a.row(1) = x.y() * p1.row(2) - p1.row(1);
  a.row(2) = xp.x() * p2.row(2) - p2.row(0);
  a.row(3) = xp.y() * p2.row(2) - p2.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  return svd.matrixV().col(3);
}

}  // namespace

double reprojection_distance_oracle(const CameraModel& p1, const CameraModel& p2,
                                    const Vec2& x, const Vec2& x_prime) {
  Mat34 pm1 = p1.projection();
  Mat34 pm2 = p2.projection();
  {
    // reuse the baseline check
    (void)fundamental_from_projection_matrices(pm1, pm2);
  }
  Eigen::Vector4d xh = triangulate_pair(pm1, pm2, x, x_prime);
  if (std::abs(xh(3)) < 1e-15) xh(3) = 1e-15;
  Vec3 point = xh.head<3>() / xh(3);

  auto residual = [&](const Vec3& pt, Eigen::Vector4d& r) {
    Vec3 h1 = pm1 * pt.homogeneous();
    Vec3 h2 = pm2 * pt.homogeneous();
    r(0) = x.x() - h1.x() / h1.z();
    r(1) = x.y() - h1.y() / h1.z();
    r(2) = x_prime.x() - h2.x() / h2.z();
    r(3) = x_prime.y() - h2.y() / h2.z();
    return r.squaredNorm();
  };
  auto jacobian = [&](const Vec3& pt) {
    Eigen::Matrix<double, 4, 3> j;
    const Mat34* pms[2] = {&pm1, &pm2};
    for (int v = 0; v < 2; ++v) {
      const Mat34& pm = *pms[v];
      Vec3 h = pm * pt.homogeneous();
      double iz = 1.0 / h.z();
      for (int c = 0; c < 3; ++c) {
        // d(-u)/dX = -(P0c * z - P2c * x) / z^2
        j(2 * v + 0, c) = -(pm(0, c) * iz - pm(2, c) * h.x() * iz * iz);
        j(2 * v + 1, c) = -(pm(1, c) * iz - pm(2, c) * h.y() * iz * iz);
      }
    }
    return j;
  };

  Eigen::Vector4d r;
  double cost = residual(point, r);
  double mu = 1e-6;
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Matrix<double, 4, 3> j = jacobian(point);
    Mat3 jtj = j.transpose() * j;
    Vec3 g = j.transpose() * r;
    Vec3 step = (jtj + mu * Mat3::Identity()).ldlt().solve(-g);
    Eigen::Vector4d r_new;
    double cost_new = residual(point + step, r_new);
    if (cost_new < cost) {
      double improvement = cost - cost_new;
      point += step;
      r = r_new;
      cost = cost_new;
      mu = std::max(mu * 0.5, 1e-12);
      if (improvement < 1e-12) return std::sqrt(cost);
    } else {
      mu *= 10.0;
      if (mu > 1e12) return std::sqrt(cost);  // stuck at a (local) optimum
    }
  }
  throw NoConvergence();
}

std::string rig_to_json(const std::vector<CameraModel>& cameras) {
  nlohmann::json doc;
  doc["cameras"] = nlohmann::json::array();
  for (const auto& cam : cameras) {
    nlohmann::json jc;
    std::vector<double> k, r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        k.push_back(cam.intrinsics(i, j));
        r.push_back(cam.rotation(i, j));
      }
    jc["K"] = k;
    jc["R"] = r;
    jc["t"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
    jc["image_size"] = {cam.width, cam.height};
    doc["cameras"].push_back(jc);
  }
  return doc.dump(2);
}

std::vector<CameraModel> rig_from_json(const std::string& json_text) {
  nlohmann::json doc = nlohmann::json::parse(json_text);
  std::vector<CameraModel> cameras;
  for (const auto& jc : doc.at("cameras")) {
    CameraModel cam;
    const auto& k = jc.at("K");
    const auto& r = jc.at("R");
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        cam.intrinsics(i, j) = k.at(3 * i + j).get<double>();
        cam.rotation(i, j) = r.at(3 * i + j).get<double>();
      }
    const auto& t = jc.at("t");
    cam.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(),
                           t.at(2).get<double>());
    cam.width = jc.at("image_size").at(0).get<int>();
    cam.height = jc.at("image_size").at(1).get<int>();
    cam.validate();
    cameras.push_back(cam);
  }
  return cameras;
}

void save_rig_json(const std::string& path, const std::vector<CameraModel>& cameras) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << rig_to_json(cameras);
}

std::vector<CameraModel> load_rig_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return rig_from_json(ss.str());
}

}  // namespace epifuse
