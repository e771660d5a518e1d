#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "posediff/diffusion.hpp"
#include "posediff/geometry.hpp"
#include "posediff/rng.hpp"

namespace posediff {

enum class Trajectory { kOrbit, kLinear };

// orbit: camera centers on a sphere looking at the point-cloud centroid
// (turn-table-like). linear: centers along a line with small heading jitter
// (fly-through-like).
struct SceneSpec {
  int n_frames = 5;
  Trajectory trajectory = Trajectory::kOrbit;
  int n_points = 60;
  double focal_lo = 0.8;
  double focal_hi = 1.6;
  double match_noise_sigma = 0.0;  // normalized-coordinate units
  double outlier_rate = 0.0;       // fraction in [0, 1)
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kSceneEmbedDim = 64;

// One training/eval unit: ground-truth poses, per-frame conditioning
// embeddings, correspondences, and the spec that produced it.
struct SceneRecord {
  PoseTuple ground_truth;
  std::vector<Eigen::VectorXd> conditioning;
  std::vector<CorrespondenceSet> matches;
  // hidden diagnostic: per pair, which matches were replaced by outliers
  std::vector<std::vector<bool>> outlier_mask;
  SceneSpec spec;
};

// Per-frame conditioning from projected keypoint statistics (mean,
// covariance, visible count), encoded by a fixed random linear map. A
// deterministic stand-in for image features.
Eigen::VectorXd embed_frame_stats(const std::vector<Eigen::Vector2d>& points);

// Deterministic given spec.seed. Every 3D point is visible (positive depth,
// inside [-1,1]^2) in >= 2 frames or it is resampled; matches come from
// shared visibility. Throws DataError when visibility cannot be reached.
SceneRecord generate_scene(const SceneSpec& spec);

struct Dataset {
  std::vector<SceneRecord> scenes;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

Dataset generate_dataset(int n_scenes, const SceneSpec& base_spec,
                         double train_ratio, std::uint64_t seed);

// Directory layout: scene_%04d.json per scene plus manifest.json with the
// split and generating spec.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

void save_scene(const std::string& path, const SceneRecord& scene);
SceneRecord load_scene(const std::string& path);

}  // namespace posediff
