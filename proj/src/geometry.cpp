#include "posediff/geometry.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

using json = nlohmann::json;

Quaternion Quaternion::fromAxisAngle(const Eigen::Vector3d& axis,
                                     double angle) {
  Eigen::Vector3d a = axis.normalized();
  double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), s * a.x(), s * a.y(), s * a.z()};
}

Quaternion Quaternion::fromRotationMatrix(const Eigen::Matrix3d& R) {
  // Shepperd's method: pick the largest diagonal combination for stability.
  double tr = R.trace();
  Quaternion q;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (R(2, 1) - R(1, 2)) / s;
    q.y = (R(0, 2) - R(2, 0)) / s;
    q.z = (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
    double s = std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2)) * 2.0;
    q.w = (R(2, 1) - R(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (R(0, 1) + R(1, 0)) / s;
    q.z = (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) > R(2, 2)) {
    double s = std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2)) * 2.0;
    q.w = (R(0, 2) - R(2, 0)) / s;
    q.x = (R(0, 1) + R(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (R(1, 2) + R(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1)) * 2.0;
    q.w = (R(1, 0) - R(0, 1)) / s;
    q.x = (R(0, 2) + R(2, 0)) / s;
    q.y = (R(1, 2) + R(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized();
}

Quaternion Quaternion::normalized() const {
  double n = norm();
  if (n <= 0.0 || !std::isfinite(n)) {
    throw NumericError("cannot normalize zero or non-finite quaternion");
  }
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::operator*(const Quaternion& r) const {
  return {w * r.w - x * r.x - y * r.y - z * r.z,
          w * r.x + x * r.w + y * r.z - z * r.y,
          w * r.y - x * r.z + y * r.w + z * r.x,
          w * r.z + x * r.y - y * r.x + z * r.w};
}

Eigen::Matrix3d Quaternion::toRotationMatrix() const {
  Quaternion q = normalized();
  Eigen::Matrix3d R;
  R << 1 - 2 * (q.y * q.y + q.z * q.z), 2 * (q.x * q.y - q.w * q.z),
      2 * (q.x * q.z + q.w * q.y),  //
      2 * (q.x * q.y + q.w * q.z), 1 - 2 * (q.x * q.x + q.z * q.z),
      2 * (q.y * q.z - q.w * q.x),  //
      2 * (q.x * q.z - q.w * q.y), 2 * (q.y * q.z + q.w * q.x),
      1 - 2 * (q.x * q.x + q.y * q.y);
  return R;
}

Quaternion Quaternion::canonicalized() const {
  double lead = w;
  if (lead == 0.0) lead = (x != 0.0) ? x : ((y != 0.0) ? y : z);
  if (lead < 0.0) return {-w, -x, -y, -z};
  return *this;
}

Extrinsics Extrinsics::operator*(const Extrinsics& rhs) const {
  Extrinsics out;
  out.rotation = (rotation * rhs.rotation).normalized();
  out.translation =
      rotation.toRotationMatrix() * rhs.translation + translation;
  return out;
}

Extrinsics Extrinsics::inverse() const {
  Extrinsics out;
  out.rotation = rotation.conjugate().normalized();
  out.translation = -(out.rotation.toRotationMatrix() * translation);
  return out;
}

Eigen::Matrix3d Intrinsics::matrix() const {
  double f = focal();
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = f;
  K(1, 1) = f;
  return K;
}

CameraParams Camera::toParams() const {
  CameraParams p;
  p << intrinsics.log_focal, extrinsics.rotation.w, extrinsics.rotation.x,
      extrinsics.rotation.y, extrinsics.rotation.z, extrinsics.translation.x(),
      extrinsics.translation.y(), extrinsics.translation.z();
  return p;
}

Camera Camera::fromParams(const CameraParams& p) {
  Camera cam;
  cam.intrinsics.log_focal = p(0);
  cam.extrinsics.rotation = Quaternion{p(1), p(2), p(3), p(4)}.normalized();
  cam.extrinsics.translation = Eigen::Vector3d(p(5), p(6), p(7));
  return cam;
}

void CorrespondenceSet::validate() const {
  if (points_i.size() != points_j.size()) {
    throw DataError("correspondence set has mismatched point counts");
  }
  if (points_i.empty()) {
    throw DataError("correspondence set is empty");
  }
  for (const auto& list : {points_i, points_j}) {
    for (const auto& p : list) {
      if (!p.allFinite()) throw DataError("non-finite correspondence point");
    }
  }
}

Eigen::Vector2d project(const Camera& camera, const Eigen::Vector3d& p_w) {
  Eigen::Vector3d p_c = camera.extrinsics.toCamera(p_w);
  if (p_c.z() <= 0.0) {
    throw DataError("point behind camera (non-positive depth)");
  }
  double f = camera.intrinsics.focal();
  return Eigen::Vector2d(f * p_c.x() / p_c.z(), f * p_c.y() / p_c.z()) +
         camera.intrinsics.principal_point();
}

namespace {

Eigen::Matrix3d crossMatrix(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

constexpr double kDenomFloor = 1e-300;

}  // namespace

Eigen::Matrix3d fundamental_matrix(const Camera& cam_i, const Camera& cam_j) {
  Extrinsics rel = cam_j.extrinsics * cam_i.extrinsics.inverse();
  Eigen::Matrix3d R_ij = rel.rotation.toRotationMatrix();
  Eigen::Vector3d t_ij = rel.translation;
  if (t_ij.norm() < 1e-12) {
    throw DataError("degenerate geometry: coincident camera centers");
  }
  Eigen::Matrix3d E = crossMatrix(t_ij) * R_ij;
  double fi = cam_i.intrinsics.focal();
  double fj = cam_j.intrinsics.focal();
  Eigen::Vector3d si(1.0 / fi, 1.0 / fi, 1.0);
  Eigen::Vector3d sj(1.0 / fj, 1.0 / fj, 1.0);
  // K_j^-T E K_i^-1 with diagonal K.
  Eigen::Matrix3d F;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) F(r, c) = sj(r) * E(r, c) * si(c);
  return F;
}

double sampson_error(const Camera& cam_i, const Camera& cam_j,
                     const CorrespondenceSet& corr, double epsilon,
                     SampsonDiagnostics* diag) {
  corr.validate();
  if (epsilon <= 0.0) throw ConfigError("sampson epsilon must be positive");
  Eigen::Matrix3d F = fundamental_matrix(cam_i, cam_j);
  double total = 0.0;
  SampsonDiagnostics local;
  for (std::size_t k = 0; k < corr.size(); ++k) {
    Eigen::Vector3d pi(corr.points_i[k].x(), corr.points_i[k].y(), 1.0);
    Eigen::Vector3d pj(corr.points_j[k].x(), corr.points_j[k].y(), 1.0);
    Eigen::Vector3d Fpi = F * pi;
    Eigen::Vector3d Ftpj = F.transpose() * pj;
    double num = pj.dot(Fpi);
    double den = Fpi.x() * Fpi.x() + Fpi.y() * Fpi.y() +
                 Ftpj.x() * Ftpj.x() + Ftpj.y() * Ftpj.y();
    if (den < kDenomFloor) {
      ++local.skipped;
      continue;
    }
    double d = num * num / den;
    if (d >= epsilon) {
      total += epsilon;
      ++local.clamped;
    } else {
      total += d;
    }
  }
  if (diag) *diag = local;
  return total;
}

// --- Forward-mode derivatives over the 16 camera parameters ---------------

namespace {

constexpr int kPairParams = 2 * kCameraParams;

struct Dual {
  double v = 0.0;
  Eigen::Matrix<double, kPairParams, 1> g =
      Eigen::Matrix<double, kPairParams, 1>::Zero();

  Dual() = default;
  Dual(double val) : v(val) {}  // NOLINT: implicit by design
  static Dual seed(double val, int index) {
    Dual d(val);
    d.g(index) = 1.0;
    return d;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r(a.v + b.v);
  r.g = a.g + b.g;
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r(a.v - b.v);
  r.g = a.g - b.g;
  return r;
}
Dual operator-(const Dual& a) {
  Dual r(-a.v);
  r.g = -a.g;
  return r;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  r.g = a.g * b.v + b.g * a.v;
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  r.g = (a.g * b.v - b.g * a.v) / (b.v * b.v);
  return r;
}
Dual dsqrt(const Dual& a) {
  Dual r(std::sqrt(a.v));
  r.g = a.g / (2.0 * r.v);
  return r;
}
Dual dexp(const Dual& a) {
  Dual r(std::exp(a.v));
  r.g = a.g * r.v;
  return r;
}

using DVec3 = std::array<Dual, 3>;
using DMat3 = std::array<std::array<Dual, 3>, 3>;

DMat3 matMul(const DMat3& a, const DMat3& b) {
  DMat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
  return r;
}

DMat3 transpose(const DMat3& a) {
  DMat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = a[j][i];
  return r;
}

DVec3 matVec(const DMat3& a, const DVec3& v) {
  DVec3 r;
  for (int i = 0; i < 3; ++i)
    r[i] = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
  return r;
}

// Rotation from a raw quaternion; normalization is part of the chain so the
// gradient is valid on the unconstrained 4-vector.
DMat3 rotationFromRawQuat(const Dual& w0, const Dual& x0, const Dual& y0,
                          const Dual& z0) {
  Dual n = dsqrt(w0 * w0 + x0 * x0 + y0 * y0 + z0 * z0);
  Dual w = w0 / n, x = x0 / n, y = y0 / n, z = z0 / n;
  Dual two(2.0), one(1.0);
  DMat3 R;
  R[0][0] = one - two * (y * y + z * z);
  R[0][1] = two * (x * y - w * z);
  R[0][2] = two * (x * z + w * y);
  R[1][0] = two * (x * y + w * z);
  R[1][1] = one - two * (x * x + z * z);
  R[1][2] = two * (y * z - w * x);
  R[2][0] = two * (x * z - w * y);
  R[2][1] = two * (y * z + w * x);
  R[2][2] = one - two * (x * x + y * y);
  return R;
}

// F with derivatives w.r.t. the 16 flat parameters (cam_i block first).
DMat3 dualFundamental(const CameraParams& pi, const CameraParams& pj) {
  auto seedCam = [](const CameraParams& p, int base) {
    std::array<Dual, kCameraParams> d;
    for (int k = 0; k < kCameraParams; ++k) d[k] = Dual::seed(p(k), base + k);
    return d;
  };
  auto ci = seedCam(pi, 0);
  auto cj = seedCam(pj, kCameraParams);

  DMat3 Ri = rotationFromRawQuat(ci[1], ci[2], ci[3], ci[4]);
  DMat3 Rj = rotationFromRawQuat(cj[1], cj[2], cj[3], cj[4]);
  DVec3 ti{ci[5], ci[6], ci[7]};
  DVec3 tj{cj[5], cj[6], cj[7]};

  DMat3 Rij = matMul(Rj, transpose(Ri));
  DVec3 Rti = matVec(Rij, ti);
  DVec3 tij{tj[0] - Rti[0], tj[1] - Rti[1], tj[2] - Rti[2]};

  DMat3 Tx;
  Tx[0][0] = Dual(0.0);
  Tx[0][1] = -tij[2];
  Tx[0][2] = tij[1];
  Tx[1][0] = tij[2];
  Tx[1][1] = Dual(0.0);
  Tx[1][2] = -tij[0];
  Tx[2][0] = -tij[1];
  Tx[2][1] = tij[0];
  Tx[2][2] = Dual(0.0);

  DMat3 E = matMul(Tx, Rij);

  Dual fi = dexp(ci[0]);
  Dual fj = dexp(cj[0]);
  Dual one(1.0);
  DVec3 si{one / fi, one / fi, one};
  DVec3 sj{one / fj, one / fj, one};
  DMat3 F;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) F[r][c] = sj[r] * E[r][c] * si[c];
  return F;
}

}  // namespace

double sampson_error(const CameraParams& params_i,
                     const CameraParams& params_j,
                     const CorrespondenceSet& corr, double epsilon,
                     SampsonDiagnostics* diag) {
  return sampson_error(Camera::fromParams(params_i),
                       Camera::fromParams(params_j), corr, epsilon, diag);
}

PairGradient sampson_gradient(const Camera& cam_i, const Camera& cam_j,
                              const CorrespondenceSet& corr, double epsilon,
                              SampsonDiagnostics* diag) {
  return sampson_gradient(cam_i.toParams(), cam_j.toParams(), corr, epsilon,
                          diag);
}

PairGradient sampson_gradient(const CameraParams& params_i,
                              const CameraParams& params_j,
                              const CorrespondenceSet& corr, double epsilon,
                              SampsonDiagnostics* diag) {
  corr.validate();
  if (epsilon <= 0.0) throw ConfigError("sampson epsilon must be positive");
  DMat3 F = dualFundamental(params_i, params_j);

  PairGradient grad = PairGradient::Zero();
  SampsonDiagnostics local;
  for (std::size_t k = 0; k < corr.size(); ++k) {
    DVec3 pi{Dual(corr.points_i[k].x()), Dual(corr.points_i[k].y()),
             Dual(1.0)};
    DVec3 pj{Dual(corr.points_j[k].x()), Dual(corr.points_j[k].y()),
             Dual(1.0)};
    DVec3 Fpi = matVec(F, pi);
    DVec3 Ftpj = matVec(transpose(F), pj);
    Dual num = pj[0] * Fpi[0] + pj[1] * Fpi[1] + pj[2] * Fpi[2];
    Dual den = Fpi[0] * Fpi[0] + Fpi[1] * Fpi[1] + Ftpj[0] * Ftpj[0] +
               Ftpj[1] * Ftpj[1];
    if (den.v < kDenomFloor) {
      ++local.skipped;
      continue;
    }
    Dual d = num * num / den;
    if (d.v >= epsilon) {
      ++local.clamped;  // clamp kills the dependence on the cameras
      continue;
    }
    grad += d.g;
  }
  if (diag) *diag = local;
  return grad;
}

// --- JSON file formats ----------------------------------------------------

namespace {

json readJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void writeJsonFile(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

std::vector<Camera> load_cameras(const std::string& path) {
  json j = readJsonFile(path);
  if (!j.contains("cameras")) throw DataError("camera file missing 'cameras'");
  std::vector<Camera> cams;
  for (const auto& c : j["cameras"]) {
    Camera cam;
    cam.intrinsics.log_focal = c.at("log_focal").get<double>();
    auto q = c.at("quat");
    cam.extrinsics.rotation =
        Quaternion{q[0], q[1], q[2], q[3]}.normalized();
    auto t = c.at("trans");
    cam.extrinsics.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    cams.push_back(cam);
  }
  return cams;
}

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
  json arr = json::array();
  for (const auto& cam : cams) {
    const auto& q = cam.extrinsics.rotation;
    const auto& t = cam.extrinsics.translation;
    arr.push_back({{"log_focal", cam.intrinsics.log_focal},
                   {"quat", {q.w, q.x, q.y, q.z}},
                   {"trans", {t.x(), t.y(), t.z()}}});
  }
  writeJsonFile(path, json{{"cameras", arr}});
}

std::vector<CorrespondenceSet> load_correspondences(const std::string& path) {
  json j = readJsonFile(path);
  if (!j.contains("pairs")) {
    throw DataError("correspondence file missing 'pairs'");
  }
  std::vector<CorrespondenceSet> out;
  for (const auto& p : j["pairs"]) {
    CorrespondenceSet cs;
    cs.i = p.at("i").get<int>();
    cs.j = p.at("j").get<int>();
    for (const auto& pt : p.at("points_i")) {
      cs.points_i.emplace_back(pt[0], pt[1]);
    }
    for (const auto& pt : p.at("points_j")) {
      cs.points_j.emplace_back(pt[0], pt[1]);
    }
    cs.validate();
    out.push_back(std::move(cs));
  }
  return out;
}

void save_correspondences(const std::string& path,
                          const std::vector<CorrespondenceSet>& pairs) {
  json arr = json::array();
  for (const auto& cs : pairs) {
    json pi = json::array(), pj = json::array();
    for (const auto& p : cs.points_i) pi.push_back({p.x(), p.y()});
    for (const auto& p : cs.points_j) pj.push_back({p.x(), p.y()});
    arr.push_back({{"i", cs.i}, {"j", cs.j}, {"points_i", pi},
                   {"points_j", pj}});
  }
  writeJsonFile(path, json{{"pairs", arr}});
}

}  // namespace posediff
