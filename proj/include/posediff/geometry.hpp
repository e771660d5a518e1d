#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace posediff {

inline constexpr int kCameraParams = 8;
using CameraParams = Eigen::Matrix<double, kCameraParams, 1>;
using PairGradient = Eigen::Matrix<double, 2 * kCameraParams, 1>;

// Unit quaternion (w, x, y, z). q and -q describe the same rotation.
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion fromAxisAngle(const Eigen::Vector3d& axis, double angle);
  static Quaternion fromRotationMatrix(const Eigen::Matrix3d& R);

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quaternion normalized() const;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion operator*(const Quaternion& rhs) const;
  Eigen::Matrix3d toRotationMatrix() const;
  double dot(const Quaternion& rhs) const {
    return w * rhs.w + x * rhs.x + y * rhs.y + z * rhs.z;
  }
  // Flips sign so w >= 0 (w == 0 resolved by the first nonzero component).
  Quaternion canonicalized() const;
};

// World-to-camera rigid transform: p_c = R p_w + t.
struct Extrinsics {
  Quaternion rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d toCamera(const Eigen::Vector3d& p_w) const {
    return rotation.toRotationMatrix() * p_w + translation;
  }
  Eigen::Vector3d center() const {  // optical center -R^T t
    return -(rotation.toRotationMatrix().transpose() * translation);
  }
  // Composition as transforms: (a * b)(p) = a(b(p)).
  Extrinsics operator*(const Extrinsics& rhs) const;
  Extrinsics inverse() const;
};

// One degree of freedom: f = exp(log_focal). Principal point is fixed to the
// image center, which is (0, 0) in the normalized coordinates used throughout.
struct Intrinsics {
  double log_focal = 0.0;

  double focal() const { return std::exp(log_focal); }
  Eigen::Vector2d principal_point() const { return Eigen::Vector2d::Zero(); }
  Eigen::Matrix3d matrix() const;
};

struct Camera {
  Intrinsics intrinsics;
  Extrinsics extrinsics;

  // Flat layout: (log_focal, q_w, q_x, q_y, q_z, t_x, t_y, t_z).
  CameraParams toParams() const;
  static Camera fromParams(const CameraParams& p);
};

// Matched 2D points between images i and j, normalized image coordinates.
struct CorrespondenceSet {
  int i = 0, j = 0;
  std::vector<Eigen::Vector2d> points_i;
  std::vector<Eigen::Vector2d> points_j;

  std::size_t size() const { return points_i.size(); }
  void validate() const;  // throws DataError on shape/finiteness violations
};

// Perspective projection into normalized image coordinates.
// Throws DataError when the camera point has non-positive depth.
Eigen::Vector2d project(const Camera& camera, const Eigen::Vector3d& p_w);

// Calibrated two-view fundamental matrix F = K_j^-T [t_ij]_x R_ij K_i^-1 with
// relative pose g_ij = g_j * g_i^-1. Throws DataError when the camera centers
// coincide (F would vanish).
Eigen::Matrix3d fundamental_matrix(const Camera& cam_i, const Camera& cam_j);

struct SampsonDiagnostics {
  int skipped = 0;  // terms with vanishing denominator
  int clamped = 0;  // terms clamped at epsilon
};

// Robust Sampson epipolar error: sum over correspondences of
// min(num^2 / denom, epsilon). Zero iff all epipolar constraints hold.
double sampson_error(const Camera& cam_i, const Camera& cam_j,
                     const CorrespondenceSet& corr, double epsilon,
                     SampsonDiagnostics* diag = nullptr);

// Gradient of sampson_error w.r.t. both cameras' flat parameters
// (cam_i block first). Clamped terms contribute zero gradient. The raw
// quaternion is normalized inside the evaluation, so the gradient is taken on
// the unconstrained 4-vector.
PairGradient sampson_gradient(const Camera& cam_i, const Camera& cam_j,
                              const CorrespondenceSet& corr, double epsilon,
                              SampsonDiagnostics* diag = nullptr);

// Raw flat-parameter variants; the quaternion blocks need not be unit length
// (normalization is part of the differentiated chain).
double sampson_error(const CameraParams& params_i, const CameraParams& params_j,
                     const CorrespondenceSet& corr, double epsilon,
                     SampsonDiagnostics* diag = nullptr);
PairGradient sampson_gradient(const CameraParams& params_i,
                              const CameraParams& params_j,
                              const CorrespondenceSet& corr, double epsilon,
                              SampsonDiagnostics* diag = nullptr);

// JSON file formats.
std::vector<Camera> load_cameras(const std::string& path);
void save_cameras(const std::string& path, const std::vector<Camera>& cams);
std::vector<CorrespondenceSet> load_correspondences(const std::string& path);
void save_correspondences(const std::string& path,
                          const std::vector<CorrespondenceSet>& pairs);

}  // namespace posediff
