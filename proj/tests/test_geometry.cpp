// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "epifuse/geometry.hpp"
#include "epifuse/synthdata.hpp"
#include "test_util.hpp"

using namespace epifuse;
using testutil::random_camera;
using testutil::random_visible_point;

namespace {

CameraModel canonical_camera() {
  CameraModel cam;
  cam.width = 64;
  cam.height = 64;
  return cam;  // K = I, R = I, t = 0
}

}  // namespace

TEST_CASE("project: canonical camera maps the optical axis to the origin") {
  CameraModel cam = canonical_camera();
  Vec2 px = project(cam, Vec3(0, 0, 1));
  CHECK(px.x() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(px.y() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("project: similar triangles") {
  CameraModel cam = canonical_camera();
  cam.intrinsics(0, 0) = 100.0;
  cam.intrinsics(1, 1) = 100.0;
  Vec2 px = project(cam, Vec3(1, 1, 2));
  CHECK(px.x() == doctest::Approx(50.0));
  CHECK(px.y() == doctest::Approx(50.0));
}

TEST_CASE("project: ring camera sees the rig center at its principal point") {
  auto rig = build_rig(8, 2.0, {0.9, 2.3}, 64, 64, 62.0);
  for (const auto& cam : rig) {
    Vec2 px = project(cam, Vec3(0, 0, 1.0));
    CHECK(std::abs(px.x() - cam.intrinsics(0, 2)) < 1e-9);
    CHECK(std::abs(px.y() - cam.intrinsics(1, 2)) < 1e-9);
  }
}

TEST_CASE("project: zero and negative depth") {
  CameraModel cam = canonical_camera();
  CHECK_THROWS_AS(project(cam, Vec3(0.5, 0.5, 0.0)), ZeroDepth);
  CHECK_THROWS_AS(project(cam, Vec3(0.5, 0.5, -2.0)), BehindCamera);
  CHECK_NOTHROW(project(cam, Vec3(0.5, 0.5, -2.0), /*strict=*/false));
}

TEST_CASE("fundamental: coincident centers are degenerate") {
  Rng rng(42);
  CameraModel cam = random_camera(rng);
  CHECK_THROWS_AS(fundamental_from_projections(cam, cam), DegenerateBaseline);
}

TEST_CASE("fundamental: epipolar constraint on random pairs") {
  Rng rng(7);
  for (int pair = 0; pair < 20; ++pair) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    CHECK(f.m.norm() == doctest::Approx(1.0));
    for (int i = 0; i < 100; ++i) {
      Vec3 p = random_visible_point(rng, {&a, &b});
      Vec2 xa = project(a, p), xb = project(b, p);
      Vec3 ha(xa.x(), xa.y(), 1.0), hb(xb.x(), xb.y(), 1.0);
      CHECK(std::abs(hb.dot(f.m * ha)) < 1e-9);
    }
  }
}

TEST_CASE("fundamental: rank two") {
  Rng rng(11);
  for (int pair = 0; pair < 50; ++pair) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    Eigen::JacobiSVD<Mat3> svd(f.m);
    CHECK(svd.singularValues()(2) < 1e-9 * svd.singularValues()(0));
  }
}

TEST_CASE("fundamental: pure horizontal translation gives [t]_x") {
  CameraModel a = canonical_camera();
  CameraModel b = canonical_camera();
  b.translation = Vec3(-1, 0, 0);
  FundamentalMatrix f = fundamental_from_projections(a, b);

  Mat3 cross;  // [t]_x for t = (-1, 0, 0)
  cross << 0, 0, 0, 0, 0, 1, 0, -1, 0;
  Mat3 expected = normalize_fundamental(cross);
  CHECK((f.m - expected).cwiseAbs().maxCoeff() < 1e-12);

  // epipolar lines are horizontal
  EpipolarLine line = epipolar_line(f, Vec2(3.0, 7.0));
  CHECK(std::abs(line.a) < 1e-12);
}

TEST_CASE("fundamental: projective scale invariance") {
  Rng rng(13);
  CameraModel a = random_camera(rng);
  CameraModel b = random_camera(rng);
  Mat34 pa = a.projection(), pb = b.projection();
  FundamentalMatrix f1 = fundamental_from_projection_matrices(pa, pb);
  FundamentalMatrix f2 = fundamental_from_projection_matrices(3.7 * pa, 0.013 * pb);
  CHECK((f1.m - f2.m).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("epipolar_line: epipole input is degenerate") {
  Rng rng(17);
  CameraModel a = random_camera(rng);
  CameraModel b = random_camera(rng);
  FundamentalMatrix f = fundamental_from_projections(a, b);
  // the epipole in view a is the image of b's center
  Vec2 epipole = project(a, b.center(), false);
  CHECK_THROWS_AS(epipolar_line(f, epipole), DegenerateLine);
}

TEST_CASE("epipolar_line: corresponding points lie on the line") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    Vec3 p = random_visible_point(rng, {&a, &b});
    Vec2 xa = project(a, p), xb = project(b, p);
    EpipolarLine line = epipolar_line(f, xa);
    CHECK(std::abs(line.a * xb.x() + line.b * xb.y() + line.c) < 1e-9);
    CHECK(line.a * line.a + line.b * line.b == doctest::Approx(1.0));
    // transpose relation: l = F^T x' contains x
    EpipolarLine back = epipolar_line(FundamentalMatrix{f.m.transpose()}, xb);
    CHECK(std::abs(back.a * xa.x() + back.b * xa.y() + back.c) < 1e-9);
  }
}

TEST_CASE("sampson: zero on exact correspondences") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    Vec3 p = random_visible_point(rng, {&a, &b});
    CHECK(sampson_distance(f, project(a, p), project(b, p)) < 1e-12);
  }
}

TEST_CASE("sampson: swap arguments and transpose F is bit-exact") {
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    Vec2 x(rng.uniform(0, 255), rng.uniform(0, 255));
    Vec2 xp(rng.uniform(0, 255), rng.uniform(0, 255));
    FundamentalMatrix ft{f.m.transpose()};
    CHECK(sampson_distance(f, x, xp) == sampson_distance(ft, xp, x));
    // the sign-fixed transpose only flips signs, which cannot change it
    FundamentalMatrix ftn{fix_fundamental_sign(f.m.transpose())};
    CHECK(sampson_distance(f, x, xp) == sampson_distance(ftn, xp, x));
  }
}

TEST_CASE("sampson: denominator degenerates only at the epipoles") {
  Rng rng(31);
  CameraModel a = random_camera(rng);
  CameraModel b = random_camera(rng);
  FundamentalMatrix f = fundamental_from_projections(a, b);
  Vec2 ea = project(a, b.center(), false);
  Vec2 eb = project(b, a.center(), false);
  CHECK_THROWS_AS(sampson_distance(f, ea, eb), DegenerateDenominator);
}

TEST_CASE("reprojection oracle: zero on exact correspondences") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    Vec3 p = random_visible_point(rng, {&a, &b});
    CHECK(reprojection_distance_oracle(a, b, project(a, p), project(b, p)) < 1e-9);
  }
}

TEST_CASE("reprojection oracle: shift along the epipolar line stays small") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    Vec3 p = random_visible_point(rng, {&a, &b});
    Vec2 xa = project(a, p), xb = project(b, p);
    EpipolarLine line = epipolar_line(f, xa);
    Vec2 along(-line.b, line.a);  // unit direction of the line
    Vec2 shifted = xb + 2.0 * along;
    double sampson = sampson_distance(f, xa, shifted);
    CHECK(sampson < 1e-12);  // still on the line
    // the rays stay coplanar, so an exact intersection exists and the
    // distance is (numerically) zero rather than merely below the shift
    double reproj = reprojection_distance_oracle(a, b, xa, shifted);
    CHECK(reproj >= 0.0);
    CHECK(reproj <= 1e-6);
  }
}

TEST_CASE("sampson matches the reprojection oracle to first order") {
  Rng rng(43);
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    CameraModel a = random_camera(rng);
    CameraModel b = random_camera(rng);
    FundamentalMatrix f = fundamental_from_projections(a, b);
    Vec3 p = random_visible_point(rng, {&a, &b});
    Vec2 xa = project(a, p), xb = project(b, p);
    EpipolarLine line = epipolar_line(f, xa);
    Vec2 normal(line.a, line.b);

    // 1 px orthogonal perturbation: within 5 percent of the oracle squared
    {
      Vec2 moved = xb + 1.0 * normal;
      double s = sampson_distance(f, xa, moved);
      double r = reprojection_distance_oracle(a, b, xa, moved);
      CHECK(std::abs(s - r * r) <= 0.05 * r * r);
    }
    // sweep 0.1 .. 0.5 px: relative error below 1 percent
    for (double eps : {0.1, 0.2, 0.3, 0.4, 0.5}) {
      Vec2 moved = xb + eps * normal;
      double s = std::sqrt(sampson_distance(f, xa, moved));
      double r = reprojection_distance_oracle(a, b, xa, moved);
      CHECK(std::abs(s - r) <= 0.01 * r);
      ++checked;
    }
    // ratio drilled at 0.1 px
    {
      Vec2 moved = xb + 0.1 * normal;
      double ratio = sampson_distance(f, xa, moved) /
                     std::pow(reprojection_distance_oracle(a, b, xa, moved), 2);
      CHECK(ratio > 0.98);
      CHECK(ratio < 1.02);
    }
  }
  CHECK(checked == 60);
}

TEST_CASE("camera validation catches broken models") {
  Rng rng(47);
  CameraModel cam = random_camera(rng);
  CHECK_NOTHROW(cam.validate());
  CameraModel bad = cam;
  bad.intrinsics(2, 2) = 2.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cam;
  bad.rotation.row(0) *= 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("rig JSON round-trip is bit-exact") {
  auto rig = build_rig(8, 2.0, {0.9, 2.3}, 64, 64, 62.0);
  std::string path = (std::filesystem::temp_directory_path() / "epifuse_rig_test.json").string();
  save_rig_json(path, rig);
  auto loaded = load_rig_json(path);
  REQUIRE(loaded.size() == rig.size());
  for (std::size_t i = 0; i < rig.size(); ++i) {
    CHECK(loaded[i].intrinsics == rig[i].intrinsics);
    CHECK(loaded[i].rotation == rig[i].rotation);
    CHECK(loaded[i].translation == rig[i].translation);
    CHECK(loaded[i].width == rig[i].width);
    CHECK(loaded[i].height == rig[i].height);
  }
  std::filesystem::remove(path);
}
