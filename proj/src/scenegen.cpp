#include "posediff/scenegen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

namespace fs = std::filesystem;
using json = nlohmann::json;

void SceneSpec::validate() const {
  if (n_frames < 2) throw ConfigError("scene needs at least 2 frames");
  if (n_points < 8) throw ConfigError("scene needs at least 8 points");
  if (!(focal_lo > 0.0 && focal_lo <= focal_hi)) {
    throw ConfigError("invalid focal range");
  }
  if (match_noise_sigma < 0.0) throw ConfigError("negative match noise");
  if (outlier_rate < 0.0 || outlier_rate >= 1.0) {
    throw ConfigError("outlier rate must be in [0, 1)");
  }
}

namespace {

// look-at world-to-camera rotation: +z points from the center to the target
Quaternion lookAt(const Eigen::Vector3d& center,
                  const Eigen::Vector3d& target) {
  Eigen::Vector3d fwd = (target - center).normalized();
  Eigen::Vector3d up_hint(0, 1, 0);
  if (std::abs(fwd.dot(up_hint)) > 0.99) up_hint = Eigen::Vector3d(1, 0, 0);
  Eigen::Vector3d right = up_hint.cross(fwd).normalized();
  Eigen::Vector3d up = fwd.cross(right);
  Eigen::Matrix3d R;
  R.row(0) = right;
  R.row(1) = up;
  R.row(2) = fwd;
  return Quaternion::fromRotationMatrix(R);
}

Camera makeCamera(const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                  double focal) {
  Camera cam;
  cam.intrinsics.log_focal = std::log(focal);
  cam.extrinsics.rotation = lookAt(center, target);
  cam.extrinsics.translation =
      -(cam.extrinsics.rotation.toRotationMatrix() * center);
  return cam;
}

bool visibleIn(const Camera& cam, const Eigen::Vector3d& point,
               Eigen::Vector2d* proj) {
  Eigen::Vector3d p_c = cam.extrinsics.toCamera(point);
  if (p_c.z() <= 0.1) return false;
  double f = cam.intrinsics.focal();
  Eigen::Vector2d p(f * p_c.x() / p_c.z(), f * p_c.y() / p_c.z());
  if (std::abs(p.x()) > 1.0 || std::abs(p.y()) > 1.0) return false;
  if (proj) *proj = p;
  return true;
}

const Eigen::MatrixXd& embeddingMap() {
  static const Eigen::MatrixXd map = [] {
    Rng rng(0x50D1FFEEDBEEULL);
    Eigen::MatrixXd m(kSceneEmbedDim, 6);
    double s = 1.0 / std::sqrt(6.0);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-s, s);
    return m;
  }();
  return map;
}

}  // namespace

Eigen::VectorXd embed_frame_stats(
    const std::vector<Eigen::Vector2d>& points) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : points) mean += p;
  if (!points.empty()) mean /= static_cast<double>(points.size());
  double cxx = 0, cxy = 0, cyy = 0;
  for (const auto& p : points) {
    Eigen::Vector2d d = p - mean;
    cxx += d.x() * d.x();
    cxy += d.x() * d.y();
    cyy += d.y() * d.y();
  }
  if (points.size() > 1) {
    double inv = 1.0 / static_cast<double>(points.size() - 1);
    cxx *= inv;
    cxy *= inv;
    cyy *= inv;
  }
  // standardize against typical per-frame spreads so every statistic carries
  // O(1) signal into the random map; raw covariances are ~0.09 +- 0.04 and
  // would otherwise be drowned out by the shared offset
  Eigen::Matrix<double, 6, 1> stats;
  stats << mean.x() * 20.0, mean.y() * 20.0, (cxx - 0.09) * 25.0, cxy * 50.0,
      (cyy - 0.09) * 25.0, static_cast<double>(points.size()) / 100.0;
  return embeddingMap() * stats;
}

SceneRecord generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SceneRecord rec;
  rec.spec = spec;

  // cameras
  Eigen::Vector3d target(0, 0, 0);
  for (int i = 0; i < spec.n_frames; ++i) {
    double focal = rng.uniform(spec.focal_lo, spec.focal_hi);
    Eigen::Vector3d center;
    if (spec.trajectory == Trajectory::kOrbit) {
      double az = 2.0 * M_PI * i / spec.n_frames + rng.uniform(-0.1, 0.1);
      double el = rng.uniform(0.15, 0.5);
      double r = rng.uniform(3.5, 4.5);
      center = r * Eigen::Vector3d(std::cos(el) * std::cos(az), std::sin(el),
                                   std::cos(el) * std::sin(az));
    } else {
      // fly-through toward the cloud along -x with small lateral jitter
      double s = 5.0 - 3.0 * i / std::max(1, spec.n_frames - 1);
      center = Eigen::Vector3d(s, rng.uniform(-0.3, 0.3),
                               rng.uniform(-0.3, 0.3));
      target = Eigen::Vector3d(rng.uniform(-0.2, 0.2),
                               rng.uniform(-0.2, 0.2), 0.0);
    }
    rec.ground_truth.cameras.push_back(makeCamera(center, target, focal));
  }

  // points with >= 2-view visibility
  std::vector<Eigen::Vector3d> points;
  std::vector<std::vector<int>> vis_frames;
  const int max_tries = 200;
  for (int k = 0; k < spec.n_points; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < max_tries && !placed; ++attempt) {
      Eigen::Vector3d p(rng.normal(), rng.normal(), rng.normal());
      std::vector<int> vis;
      for (int i = 0; i < spec.n_frames; ++i) {
        if (visibleIn(rec.ground_truth.cameras[i], p, nullptr)) {
          vis.push_back(i);
        }
      }
      if (vis.size() >= 2) {
        points.push_back(p);
        vis_frames.push_back(std::move(vis));
        placed = true;
      }
    }
    if (!placed) {
      throw DataError("could not place a point visible in >= 2 frames");
    }
  }

  // matches from shared visibility
  for (int i = 0; i < spec.n_frames; ++i) {
    for (int j = i + 1; j < spec.n_frames; ++j) {
      CorrespondenceSet cs;
      cs.i = i;
      cs.j = j;
      std::vector<bool> mask;
      for (std::size_t k = 0; k < points.size(); ++k) {
        Eigen::Vector2d pi, pj;
        if (!visibleIn(rec.ground_truth.cameras[i], points[k], &pi)) continue;
        if (!visibleIn(rec.ground_truth.cameras[j], points[k], &pj)) continue;
        if (spec.match_noise_sigma > 0.0) {
          pi += spec.match_noise_sigma *
                Eigen::Vector2d(rng.normal(), rng.normal());
          pj += spec.match_noise_sigma *
                Eigen::Vector2d(rng.normal(), rng.normal());
        }
        bool outlier = rng.uniform() < spec.outlier_rate;
        if (outlier) {
          pj = Eigen::Vector2d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        }
        cs.points_i.push_back(pi);
        cs.points_j.push_back(pj);
        mask.push_back(outlier);
      }
      if (!cs.points_i.empty()) {
        rec.matches.push_back(std::move(cs));
        rec.outlier_mask.push_back(std::move(mask));
      }
    }
  }

  // conditioning from per-frame projections of all visible points
  for (int i = 0; i < spec.n_frames; ++i) {
    std::vector<Eigen::Vector2d> projs;
    for (const auto& p : points) {
      Eigen::Vector2d proj;
      if (visibleIn(rec.ground_truth.cameras[i], p, &proj)) {
        projs.push_back(proj);
      }
    }
    rec.conditioning.push_back(embed_frame_stats(projs));
  }
  return rec;
}

Dataset generate_dataset(int n_scenes, const SceneSpec& base_spec,
                         double train_ratio, std::uint64_t seed) {
  if (n_scenes < 2) throw ConfigError("dataset needs at least 2 scenes");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw ConfigError("train ratio must be in (0, 1)");
  }
  Dataset ds;
  Rng master(seed);
  for (int i = 0; i < n_scenes; ++i) {
    SceneSpec spec = base_spec;
    spec.seed = seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
    ds.scenes.push_back(generate_scene(spec));
  }
  int n_train = std::max(1, static_cast<int>(n_scenes * train_ratio));
  n_train = std::min(n_train, n_scenes - 1);
  for (int i = 0; i < n_scenes; ++i) {
    (i < n_train ? ds.train_indices : ds.test_indices).push_back(i);
  }
  return ds;
}

// --- serialization --------------------------------------------------------

namespace {

json specToJson(const SceneSpec& s) {
  return {{"n_frames", s.n_frames},
          {"trajectory", s.trajectory == Trajectory::kOrbit ? "orbit"
                                                            : "linear"},
          {"n_points", s.n_points},
          {"focal_lo", s.focal_lo},
          {"focal_hi", s.focal_hi},
          {"match_noise_sigma", s.match_noise_sigma},
          {"outlier_rate", s.outlier_rate},
          {"seed", s.seed}};
}

SceneSpec specFromJson(const json& j) {
  SceneSpec s;
  s.n_frames = j.at("n_frames").get<int>();
  std::string traj = j.at("trajectory").get<std::string>();
  if (traj == "orbit") {
    s.trajectory = Trajectory::kOrbit;
  } else if (traj == "linear") {
    s.trajectory = Trajectory::kLinear;
  } else {
    throw DataError("unknown trajectory: " + traj);
  }
  s.n_points = j.at("n_points").get<int>();
  s.focal_lo = j.at("focal_lo").get<double>();
  s.focal_hi = j.at("focal_hi").get<double>();
  s.match_noise_sigma = j.at("match_noise_sigma").get<double>();
  s.outlier_rate = j.at("outlier_rate").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

void writeJson(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write: " + path);
  out << j.dump(2) << "\n";
}

json readJson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

void save_scene(const std::string& path, const SceneRecord& scene) {
  json cams = json::array();
  for (const auto& cam : scene.ground_truth.cameras) {
    const auto& q = cam.extrinsics.rotation;
    const auto& t = cam.extrinsics.translation;
    cams.push_back({{"log_focal", cam.intrinsics.log_focal},
                    {"quat", {q.w, q.x, q.y, q.z}},
                    {"trans", {t.x(), t.y(), t.z()}}});
  }
  json embeds = json::array();
  for (const auto& e : scene.conditioning) {
    embeds.push_back(std::vector<double>(e.data(), e.data() + e.size()));
  }
  json pairs = json::array();
  for (std::size_t p = 0; p < scene.matches.size(); ++p) {
    const auto& cs = scene.matches[p];
    json pi = json::array(), pj = json::array();
    for (const auto& pt : cs.points_i) pi.push_back({pt.x(), pt.y()});
    for (const auto& pt : cs.points_j) pj.push_back({pt.x(), pt.y()});
    json mask = json::array();
    for (bool b : scene.outlier_mask[p]) mask.push_back(b);
    pairs.push_back({{"i", cs.i},
                     {"j", cs.j},
                     {"points_i", pi},
                     {"points_j", pj},
                     {"outlier_mask", mask}});
  }
  writeJson(path, json{{"cameras", cams},
                       {"embeddings", embeds},
                       {"pairs", pairs},
                       {"spec", specToJson(scene.spec)}});
}

SceneRecord load_scene(const std::string& path) {
  json j = readJson(path);
  SceneRecord rec;
  rec.spec = specFromJson(j.at("spec"));
  for (const auto& c : j.at("cameras")) {
    Camera cam;
    cam.intrinsics.log_focal = c.at("log_focal").get<double>();
    auto q = c.at("quat");
    cam.extrinsics.rotation = Quaternion{q[0], q[1], q[2], q[3]}.normalized();
    auto t = c.at("trans");
    cam.extrinsics.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    rec.ground_truth.cameras.push_back(cam);
  }
  for (const auto& e : j.at("embeddings")) {
    auto v = e.get<std::vector<double>>();
    rec.conditioning.push_back(
        Eigen::Map<Eigen::VectorXd>(v.data(), v.size()));
  }
  for (const auto& p : j.at("pairs")) {
    CorrespondenceSet cs;
    cs.i = p.at("i").get<int>();
    cs.j = p.at("j").get<int>();
    for (const auto& pt : p.at("points_i")) cs.points_i.emplace_back(pt[0], pt[1]);
    for (const auto& pt : p.at("points_j")) cs.points_j.emplace_back(pt[0], pt[1]);
    cs.validate();
    rec.matches.push_back(std::move(cs));
    rec.outlier_mask.push_back(p.at("outlier_mask").get<std::vector<bool>>());
  }
  return rec;
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%04zu.json", i);
    save_scene((fs::path(dir) / name).string(), dataset.scenes[i]);
  }
  json manifest = {{"n_scenes", dataset.scenes.size()},
                   {"train", dataset.train_indices},
                   {"test", dataset.test_indices}};
  if (!dataset.scenes.empty()) {
    manifest["spec"] = specToJson(dataset.scenes.front().spec);
  }
  writeJson((fs::path(dir) / "manifest.json").string(), manifest);
}

Dataset load_dataset(const std::string& dir) {
  json manifest = readJson((fs::path(dir) / "manifest.json").string());
  Dataset ds;
  std::size_t n = manifest.at("n_scenes").get<std::size_t>();
  char name[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof(name), "scene_%04zu.json", i);
    ds.scenes.push_back(load_scene((fs::path(dir) / name).string()));
  }
  ds.train_indices = manifest.at("train").get<std::vector<int>>();
  ds.test_indices = manifest.at("test").get<std::vector<int>>();
  return ds;
}

}  // namespace posediff
