#include <doctest.h>

#include <cmath>

#include "posediff/errors.hpp"
#include "posediff/geometry.hpp"
#include "posediff/scenegen.hpp"
#include "test_util.hpp"

using namespace posediff;
using testutil::identityCamera;
using testutil::randomCamera;

namespace {

CorrespondenceSet exactMatches(const Camera& ci, const Camera& cj, Rng& rng,
                               int n = 12) {
  CorrespondenceSet cs;
  cs.i = 0;
  cs.j = 1;
  int placed = 0;
  for (int tries = 0; placed < n; ++tries) {
    REQUIRE(tries < 10000);  // cameras share no visible volume
    Eigen::Vector3d p(rng.normal(), rng.normal(), rng.normal() + 4.0);
    Eigen::Vector3d pi_c = ci.extrinsics.toCamera(p);
    Eigen::Vector3d pj_c = cj.extrinsics.toCamera(p);
    if (pi_c.z() < 0.2 || pj_c.z() < 0.2) continue;
    cs.points_i.push_back(project(ci, p));
    cs.points_j.push_back(project(cj, p));
    ++placed;
  }
  return cs;
}

// random camera on a shell around the origin, looking inward: any pair of
// these shares visibility of points near the origin
Camera inwardCamera(Rng& rng) {
  Camera cam;
  cam.intrinsics.log_focal = rng.uniform(-0.3, 0.5);
  Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();
  Eigen::Vector3d center = rng.uniform(3.0, 5.0) * dir;
  Eigen::Vector3d fwd = -center.normalized();
  Eigen::Vector3d up_hint(0, 1, 0);
  if (std::abs(fwd.dot(up_hint)) > 0.95) up_hint = Eigen::Vector3d(1, 0, 0);
  Eigen::Vector3d right = up_hint.cross(fwd).normalized();
  Eigen::Vector3d up = fwd.cross(right);
  Eigen::Matrix3d R;
  R.row(0) = right;
  R.row(1) = up;
  R.row(2) = fwd;
  cam.extrinsics.rotation = Quaternion::fromRotationMatrix(R);
  cam.extrinsics.translation = -(R * center);
  return cam;
}

CorrespondenceSet originMatches(const Camera& ci, const Camera& cj, Rng& rng,
                                int n) {
  CorrespondenceSet cs;
  cs.i = 0;
  cs.j = 1;
  for (int k = 0; k < n; ++k) {
    Eigen::Vector3d p(0.8 * rng.normal(), 0.8 * rng.normal(),
                      0.8 * rng.normal());
    cs.points_i.push_back(project(ci, p));
    cs.points_j.push_back(project(cj, p));
  }
  return cs;
}

}  // namespace

TEST_CASE("project: known values") {
  Camera cam = identityCamera(1.0);
  CHECK(project(cam, {0, 0, 5}).norm() == doctest::Approx(0.0).epsilon(1e-12));

  Camera f2 = identityCamera(2.0);
  Eigen::Vector2d p = project(f2, {1, 0, 2});
  CHECK(p.x() == doctest::Approx(1.0));
  CHECK(p.y() == doctest::Approx(0.0));

  Camera shifted = identityCamera(1.0);
  shifted.extrinsics.translation = Eigen::Vector3d(-1, 0, 0);
  Eigen::Vector2d q = project(shifted, {0, 0, 5});
  CHECK(q.x() == doctest::Approx(-0.2));
  CHECK(q.y() == doctest::Approx(0.0));
}

TEST_CASE("project: behind camera throws") {
  Camera cam = identityCamera();
  CHECK_THROWS_AS(project(cam, {0, 0, -1}), DataError);
  CHECK_THROWS_AS(project(cam, {0, 0, 0}), DataError);
}

TEST_CASE("quaternion: unit norm and sign invariance") {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    Quaternion q = Quaternion::fromAxisAngle(
        {rng.normal(), rng.normal(), rng.normal()}, rng.uniform(0.0, 3.0));
    CHECK(std::abs(q.norm() - 1.0) < 1e-9);
    Quaternion neg{-q.w, -q.x, -q.y, -q.z};
    CHECK((q.toRotationMatrix() - neg.toRotationMatrix()).norm() < 1e-12);
  }
}

TEST_CASE("fundamental matrix: pure x-translation") {
  Camera ci = identityCamera();
  Camera cj = identityCamera();
  cj.extrinsics.translation = Eigen::Vector3d(-1, 0, 0);
  Eigen::Matrix3d F = fundamental_matrix(ci, cj);
  Eigen::Matrix3d expected;
  expected << 0, 0, 0, 0, 0, 1, 0, -1, 0;
  CHECK((F - expected).norm() < 1e-12);
}

TEST_CASE("fundamental matrix: epipolar constraint on projected points") {
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    Camera ci = inwardCamera(rng);
    Camera cj = inwardCamera(rng);
    Eigen::Matrix3d F;
    try {
      F = fundamental_matrix(ci, cj);
    } catch (const DataError&) {
      continue;
    }
    // rank 2
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(F);
    CHECK(svd.singularValues()(2) < 1e-9 * svd.singularValues()(0));
    CorrespondenceSet cs = exactMatches(ci, cj, rng, 6);
    for (std::size_t k = 0; k < cs.size(); ++k) {
      Eigen::Vector3d pi(cs.points_i[k].x(), cs.points_i[k].y(), 1);
      Eigen::Vector3d pj(cs.points_j[k].x(), cs.points_j[k].y(), 1);
      CHECK(std::abs(pj.dot(F * pi)) < 1e-9);
    }
  }
}

TEST_CASE("fundamental matrix: homogeneous in translation scale") {
  Rng rng(13);
  Camera ci = randomCamera(rng);
  Camera cj = randomCamera(rng);
  Eigen::Matrix3d F1 = fundamental_matrix(ci, cj);
  Camera ci2 = ci, cj2 = cj;
  ci2.extrinsics.translation *= 2.0;
  cj2.extrinsics.translation *= 2.0;
  Eigen::Matrix3d F2 = fundamental_matrix(ci2, cj2);
  CHECK((F1 / F1.norm() - F2 / F2.norm()).norm() < 1e-9);
}

TEST_CASE("fundamental matrix: coincident centers throw") {
  Camera ci = identityCamera();
  Camera cj = identityCamera();
  CHECK_THROWS_AS(fundamental_matrix(ci, cj), DataError);
}

TEST_CASE("camera params: flat round trip up to quaternion sign") {
  Rng rng(17);
  for (int it = 0; it < 30; ++it) {
    Camera cam = randomCamera(rng);
    Camera back = Camera::fromParams(cam.toParams());
    CHECK(std::abs(back.intrinsics.log_focal - cam.intrinsics.log_focal) <
          1e-12);
    CHECK(std::abs(std::abs(back.extrinsics.rotation.dot(
              cam.extrinsics.rotation)) -
                   1.0) < 1e-9);
    CHECK((back.extrinsics.translation - cam.extrinsics.translation).norm() <
          1e-12);
  }
}

TEST_CASE("sampson error: exact correspondences give zero") {
  Rng rng(19);
  Camera ci = inwardCamera(rng);
  Camera cj = inwardCamera(rng);
  CorrespondenceSet cs = exactMatches(ci, cj, rng);
  CHECK(sampson_error(ci, cj, cs, 10.0) < 1e-9);
}

TEST_CASE("sampson error: hand-computed value") {
  // F from the pure-translation pair; epipolar line oracle gives
  // num^2 = 0.01, denominator = 2.
  Camera ci = identityCamera();
  Camera cj = identityCamera();
  cj.extrinsics.translation = Eigen::Vector3d(-1, 0, 0);
  CorrespondenceSet cs;
  cs.i = 0;
  cs.j = 1;
  cs.points_i.push_back({0.0, 0.0});
  cs.points_j.push_back({-0.2, 0.1});
  CHECK(sampson_error(ci, cj, cs, 10.0) == doctest::Approx(0.005));
}

TEST_CASE("sampson error: clamp contributes exactly epsilon") {
  // perturb enough that the raw term exceeds the clamp
  Camera ci = identityCamera();
  Camera cj = identityCamera();
  cj.extrinsics.translation = Eigen::Vector3d(-1, 0, 0);
  CorrespondenceSet cs;
  cs.i = 0;
  cs.j = 1;
  cs.points_i.push_back({0.0, 0.0});
  cs.points_j.push_back({-0.2, 0.9});  // raw term 0.9^2/2 = 0.405
  double eps = 0.1;
  SampsonDiagnostics diag;
  CHECK(sampson_error(ci, cj, cs, eps, &diag) == doctest::Approx(eps));
  CHECK(diag.clamped == 1);
}

TEST_CASE("sampson error: epipole-degenerate terms are skipped and counted") {
  Camera ci = identityCamera();
  Camera cj = identityCamera();
  cj.extrinsics.translation = Eigen::Vector3d(0, 0, -1);  // epipole at origin
  CorrespondenceSet cs;
  cs.i = 0;
  cs.j = 1;
  cs.points_i.push_back({0.0, 0.0});  // both epipolar products vanish
  cs.points_j.push_back({0.0, 0.0});
  SampsonDiagnostics diag;
  CHECK(sampson_error(ci, cj, cs, 10.0, &diag) == 0.0);
  CHECK(diag.skipped == 1);
}

TEST_CASE("sampson error: quaternion sign invariance") {
  Rng rng(23);
  Camera ci = inwardCamera(rng);
  Camera cj = inwardCamera(rng);
  CorrespondenceSet cs = exactMatches(ci, cj, rng);
  cs.points_j[0] += Eigen::Vector2d(0.01, -0.02);
  double e1 = sampson_error(ci, cj, cs, 10.0);
  Camera cjn = cj;
  auto& q = cjn.extrinsics.rotation;
  q = Quaternion{-q.w, -q.x, -q.y, -q.z};
  CHECK(sampson_error(ci, cjn, cs, 10.0) == doctest::Approx(e1).epsilon(1e-12));
  // projections are unchanged too
  Eigen::Vector3d p(0.3, -0.2, 5.0);
  Camera cin = ci;
  auto& qi = cin.extrinsics.rotation;
  qi = Quaternion{-qi.w, -qi.x, -qi.y, -qi.z};
  Eigen::Vector3d pw = ci.extrinsics.inverse().toCamera(p);
  CHECK((project(ci, pw) - project(cin, pw)).norm() < 1e-12);
}

TEST_CASE("sampson gradient: zero at consistent configuration") {
  Rng rng(29);
  Camera ci = inwardCamera(rng);
  Camera cj = inwardCamera(rng);
  CorrespondenceSet cs = exactMatches(ci, cj, rng);
  CHECK(sampson_gradient(ci, cj, cs, 10.0).norm() < 1e-6);
}

TEST_CASE("sampson gradient: matches central finite differences") {
  Rng rng(31);
  const double eps = 1e3;  // keep every term unclamped
  const double h = 1e-5;
  int checked = 0;
  for (int it = 0; it < 110; ++it) {
    Camera ci = inwardCamera(rng);
    Camera cj = inwardCamera(rng);
    CorrespondenceSet cs = originMatches(ci, cj, rng, 8);
    for (auto& p : cs.points_j) {
      p += 0.02 * Eigen::Vector2d(rng.normal(), rng.normal());
    }
    CameraParams pi = ci.toParams(), pj = cj.toParams();
    PairGradient g = sampson_gradient(pi, pj, cs, eps);
    for (int k = 0; k < 2 * kCameraParams; ++k) {
      auto eval = [&](double delta) {
        CameraParams a = pi, b = pj;
        if (k < kCameraParams) {
          a(k) += delta;
        } else {
          b(k - kCameraParams) += delta;
        }
        return sampson_error(a, b, cs, eps);
      };
      double fd = (eval(h) - eval(-h)) / (2 * h);
      CHECK(std::abs(g(k) - fd) <= 1e-3 * std::max(1e-4, std::abs(fd)));
    }
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("sampson gradient: fully clamped configuration gives exact zero") {
  Rng rng(37);
  Camera ci = inwardCamera(rng);
  Camera cj = inwardCamera(rng);
  CorrespondenceSet cs = exactMatches(ci, cj, rng);
  for (auto& p : cs.points_j) p += Eigen::Vector2d(0.5, 0.5);
  double tiny_eps = 1e-12;
  SampsonDiagnostics diag;
  PairGradient g = sampson_gradient(ci, cj, cs, tiny_eps, &diag);
  CHECK(diag.clamped == static_cast<int>(cs.size()));
  CHECK(g.norm() == 0.0);
}

TEST_CASE("epipolar consistency on generated scenes") {
  for (int s = 0; s < 10; ++s) {
    SceneRecord rec = generate_scene(testutil::noiselessSpec(1000 + s));
    double total = 0.0;
    for (const auto& cs : rec.matches) {
      total += sampson_error(rec.ground_truth.cameras[cs.i],
                             rec.ground_truth.cameras[cs.j], cs, 10.0);
    }
    CHECK(total < 1e-8);
  }
}

TEST_CASE("camera/correspondence JSON round trip") {
  Rng rng(41);
  std::string dir = testutil::scratchDir("geometry_json");
  std::vector<Camera> cams;
  for (int i = 0; i < 4; ++i) cams.push_back(inwardCamera(rng));
  save_cameras(dir + "/cams.json", cams);
  auto loaded = load_cameras(dir + "/cams.json");
  REQUIRE(loaded.size() == cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CHECK((loaded[i].toParams() - cams[i].toParams()).norm() < 1e-12);
  }

  CorrespondenceSet cs = exactMatches(cams[0], cams[1], rng, 5);
  cs.i = 0;
  cs.j = 1;
  save_correspondences(dir + "/pairs.json", {cs});
  auto pairs = load_correspondences(dir + "/pairs.json");
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].size() == cs.size());
  for (std::size_t k = 0; k < cs.size(); ++k) {
    CHECK((pairs[0].points_i[k] - cs.points_i[k]).norm() < 1e-12);
    CHECK((pairs[0].points_j[k] - cs.points_j[k]).norm() < 1e-12);
  }
}

TEST_CASE("correspondence validation") {
  CorrespondenceSet cs;
  cs.points_i.push_back({0, 0});
  CHECK_THROWS_AS(cs.validate(), DataError);  // mismatched lengths
  cs.points_j.push_back({std::nan(""), 0});
  CHECK_THROWS_AS(cs.validate(), DataError);  // non-finite
  CorrespondenceSet empty;
  CHECK_THROWS_AS(empty.validate(), DataError);
}
