#include "posediff/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json sceneSpecJson(const SceneSpec& s) {
  return {{"n_frames", s.n_frames},
          {"trajectory", s.trajectory == Trajectory::kOrbit ? "orbit"
                                                            : "linear"},
          {"n_points", s.n_points},
          {"focal_lo", s.focal_lo},
          {"focal_hi", s.focal_hi},
          {"match_noise_sigma", s.match_noise_sigma},
          {"outlier_rate", s.outlier_rate}};
}

template <typename T>
void maybeGet(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad config value for '") + key +
                        "': " + e.what());
    }
  }
}

void writeText(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write: " + path);
  out << text;
}

void echoConfig(const RunConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  writeText((fs::path(out_dir) / "effective_config.json").string(),
            run_config_to_json(config) + "\n");
}

}  // namespace

RunConfig parse_run_config(const std::string& config_json) {
  json j;
  try {
    j = json::parse(config_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  static const std::vector<std::string> known = {
      "seed", "dataset", "schedule", "denoiser", "train", "guidance",
      "metrics"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown config key: " + it.key());
    }
  }

  RunConfig c;
  maybeGet(j, "seed", c.seed);
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    maybeGet(d, "n_scenes", c.n_scenes);
    maybeGet(d, "train_ratio", c.train_ratio);
    maybeGet(d, "n_frames", c.scene.n_frames);
    maybeGet(d, "n_points", c.scene.n_points);
    maybeGet(d, "focal_lo", c.scene.focal_lo);
    maybeGet(d, "focal_hi", c.scene.focal_hi);
    maybeGet(d, "match_noise_sigma", c.scene.match_noise_sigma);
    maybeGet(d, "outlier_rate", c.scene.outlier_rate);
    if (d.contains("trajectory")) {
      std::string t = d["trajectory"].get<std::string>();
      if (t == "orbit") {
        c.scene.trajectory = Trajectory::kOrbit;
      } else if (t == "linear") {
        c.scene.trajectory = Trajectory::kLinear;
      } else {
        throw ConfigError("unknown trajectory: " + t);
      }
    }
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    maybeGet(s, "T", c.schedule_T);
    maybeGet(s, "beta_start", c.beta_start);
    maybeGet(s, "beta_end", c.beta_end);
  }
  if (j.contains("denoiser")) {
    const json& d = j["denoiser"];
    maybeGet(d, "width", c.denoiser.width);
    maybeGet(d, "n_blocks", c.denoiser.n_blocks);
    maybeGet(d, "n_heads", c.denoiser.n_heads);
    maybeGet(d, "ff_width", c.denoiser.ff_width);
    maybeGet(d, "scene_embed_dim", c.denoiser.scene_embed_dim);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    maybeGet(t, "learning_rate", c.training.learning_rate);
    maybeGet(t, "epochs", c.training.epochs);
    maybeGet(t, "lr_decay_epoch", c.training.lr_decay_epoch);
    maybeGet(t, "min_frames", c.training.min_frames);
    maybeGet(t, "max_frames", c.training.max_frames);
    maybeGet(t, "regression_mode", c.training.regression_mode);
  }
  if (j.contains("guidance")) {
    const json& g = j["guidance"];
    maybeGet(g, "epsilon", c.guidance.epsilon);
    maybeGet(g, "alpha", c.guidance.alpha);
    maybeGet(g, "ggs_iters", c.guidance.ggs_iters);
    maybeGet(g, "guided_last_steps", c.guidance.guided_last_steps);
    maybeGet(g, "fixed_strength", c.guidance.fixed_strength);
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    maybeGet(m, "rotation_deg", c.metrics.rotation_deg);
    maybeGet(m, "ate_scale_fractions", c.metrics.ate_scale_fractions);
  }

  if (const char* env = std::getenv("POSEDIFF_SEED")) {
    c.seed = std::strtoull(env, nullptr, 10);
  }
  c.training.seed = c.seed;
  c.guidance.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json d = sceneSpecJson(c.scene);
  d["n_scenes"] = c.n_scenes;
  d["train_ratio"] = c.train_ratio;
  json j = {
      {"seed", c.seed},
      {"dataset", d},
      {"schedule",
       {{"T", c.schedule_T},
        {"beta_start", c.beta_start},
        {"beta_end", c.beta_end}}},
      {"denoiser",
       {{"width", c.denoiser.width},
        {"n_blocks", c.denoiser.n_blocks},
        {"n_heads", c.denoiser.n_heads},
        {"ff_width", c.denoiser.ff_width},
        {"scene_embed_dim", c.denoiser.scene_embed_dim}}},
      {"train",
       {{"learning_rate", c.training.learning_rate},
        {"epochs", c.training.epochs},
        {"lr_decay_epoch", c.training.lr_decay_epoch},
        {"min_frames", c.training.min_frames},
        {"max_frames", c.training.max_frames},
        {"regression_mode", c.training.regression_mode}}},
      {"guidance",
       {{"epsilon", c.guidance.epsilon},
        {"alpha", c.guidance.alpha},
        {"ggs_iters", c.guidance.ggs_iters},
        {"guided_last_steps", c.guidance.guided_last_steps},
        {"fixed_strength", c.guidance.fixed_strength}}},
      {"metrics",
       {{"rotation_deg", c.metrics.rotation_deg},
        {"ate_scale_fractions", c.metrics.ate_scale_fractions}}}};
  return j.dump(2);
}

std::vector<TrainScene> to_train_scenes(const Dataset& dataset,
                                        const std::vector<int>& indices) {
  std::vector<TrainScene> out;
  for (int i : indices) {
    const SceneRecord& rec = dataset.scenes.at(i);
    TrainScene ts;
    ts.gt_flat = rec.ground_truth.flat();
    ts.cond.frame_embeds = rec.conditioning;
    out.push_back(std::move(ts));
  }
  return out;
}

PoseTuple sample_scene(const DenoiserParams& params, const SceneRecord& scene,
                       const GuidanceConfig& guidance, bool use_ggs,
                       std::uint64_t seed,
                       std::vector<SampleTraceRow>* trace) {
  SceneConditioning cond;
  cond.frame_embeds = scene.conditioning;
  GuidanceConfig cfg = guidance;
  if (!use_ggs) cfg.guided_last_steps = 0;
  Rng rng(seed);
  return guided_ddpm_sample(params, cond, scene.matches, cfg, rng, trace);
}

PoseTuple posereg_predict(const DenoiserParams& params,
                          const SceneRecord& scene,
                          const GuidanceConfig* ggs) {
  const int n = scene.ground_truth.size();
  std::vector<FrameToken> tokens(n);
  for (int i = 0; i < n; ++i) {
    tokens[i].noisy_pose = CameraParams::Zero();
    tokens[i].scene_embed = scene.conditioning[i];
    tokens[i].t = params.schedule.T;
    tokens[i].pivot_flag = (i == 0) ? 1 : 0;
  }
  auto preds = denoiser_forward(params, tokens);
  Eigen::VectorXd flat(n * kCameraParams);
  for (int i = 0; i < n; ++i) {
    flat.segment<kCameraParams>(i * kCameraParams) = preds[i];
  }
  if (ggs) {
    // same total refinement budget as guided diffusion sampling
    for (int rep = 0; rep < std::max(1, ggs->guided_last_steps); ++rep) {
      flat = guided_mean(flat, flat, scene.matches, *ggs);
    }
  }
  return PoseTuple::fromFlat(flat);
}

MetricReport evaluate_scene(const PoseTuple& pred, const SceneRecord& scene,
                            const MetricThresholds& thresholds) {
  return compute_metrics(pred, scene.ground_truth, thresholds);
}

// --- commands -------------------------------------------------------------

void cmd_synth(const RunConfig& config, const std::string& out_dir) {
  config.scene.validate();
  Dataset ds = generate_dataset(config.n_scenes, config.scene,
                                config.train_ratio, config.seed);
  save_dataset(out_dir, ds);
  echoConfig(config, out_dir);
}

void cmd_train(const RunConfig& config, const std::string& dataset_dir,
               const std::string& out_dir) {
  Dataset ds = load_dataset(dataset_dir);
  std::vector<TrainScene> scenes = to_train_scenes(ds, ds.train_indices);
  DenoiserConfig dcfg = config.denoiser;
  dcfg.scene_embed_dim = kSceneEmbedDim;
  TrainResult result =
      train(scenes, dcfg, config.schedule(), config.training);

  fs::create_directories(out_dir);
  save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(),
                  result.params);
  std::ostringstream csv;
  csv << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, result.loss_curve[i]);
    csv << buf;
  }
  writeText((fs::path(out_dir) / "loss_curve.csv").string(), csv.str());
  echoConfig(config, out_dir);
}

void cmd_sample(const RunConfig& config, const std::string& checkpoint,
                const std::string& dataset_dir, int scene_index, bool use_ggs,
                const std::string& out_dir) {
  DenoiserParams params = load_checkpoint(checkpoint);
  Dataset ds = load_dataset(dataset_dir);
  if (scene_index < 0 ||
      scene_index >= static_cast<int>(ds.scenes.size())) {
    throw DataError("scene index out of range");
  }
  const SceneRecord& scene = ds.scenes[scene_index];

  std::vector<SampleTraceRow> trace;
  std::uint64_t scene_seed =
      config.seed ^ (0x9e3779b97f4a7c15ULL * (scene_index + 1));
  PoseTuple pred = sample_scene(params, scene, config.guidance, use_ggs,
                                scene_seed, &trace);

  fs::create_directories(out_dir);
  save_cameras((fs::path(out_dir) / "predicted_cameras.json").string(),
               pred.cameras);
  save_cameras((fs::path(out_dir) / "gt_cameras.json").string(),
               scene.ground_truth.cameras);
  std::ostringstream csv;
  csv << "t,sampson_before,sampson_after\n";
  char buf[96];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.t,
                  row.sampson_before, row.sampson_after);
    csv << buf;
  }
  writeText((fs::path(out_dir) / "sampson_trace.csv").string(), csv.str());
  echoConfig(config, out_dir);
}

MetricReport cmd_eval(const RunConfig& config, const std::string& pred_path,
                      const std::string& gt_path,
                      const std::string& out_dir) {
  PoseTuple pred, gt;
  pred.cameras = load_cameras(pred_path);
  gt.cameras = load_cameras(gt_path);
  MetricReport report = compute_metrics(pred, gt, config.metrics);

  fs::create_directories(out_dir);
  save_report_json((fs::path(out_dir) / "report.json").string(), report,
                   config.metrics);
  save_reports_csv((fs::path(out_dir) / "report.csv").string(), {report},
                   config.metrics);
  echoConfig(config, out_dir);
  return report;
}

// --- plotting -------------------------------------------------------------

namespace {

struct CsvRow {
  int scene;
  std::string metric;
  double threshold;
  double accuracy;
};

std::vector<CsvRow> readReportCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report CSV: " + path);
  std::vector<CsvRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    CsvRow row;
    std::getline(ss, field, ',');
    row.scene = std::stoi(field);
    std::getline(ss, row.metric, ',');
    std::getline(ss, field, ',');
    row.threshold = std::stod(field);
    std::getline(ss, field, ',');
    row.accuracy = std::stod(field);
    rows.push_back(row);
  }
  return rows;
}

const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                         "#9467bd", "#8c564b"};

// minimal line chart; deterministic output, no timestamps
std::string svgChart(const std::string& title, const std::string& xlabel,
                     const std::vector<std::string>& labels,
                     const std::vector<std::vector<double>>& xs,
                     const std::vector<std::vector<double>>& ys) {
  const double W = 480, H = 360, ml = 56, mr = 16, mt = 36, mb = 48;
  double xmin = 1e300, xmax = -1e300;
  for (const auto& v : xs) {
    for (double x : v) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
  }
  if (xmin >= xmax) xmax = xmin + 1.0;
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  auto py = [&](double y) { return H - mb - y * (H - mt - mb); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
    << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" "
       "font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << W - mr
    << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << ml
    << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  for (double yt : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    s << "<text x=\"" << ml - 6 << "\" y=\"" << py(yt) + 4
      << "\" text-anchor=\"end\" font-size=\"10\">" << yt << "</text>\n";
  }
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel
    << "</text>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const char* color = kColors[i % 6];
    s << "<polyline fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      s << px(xs[i][k]) << "," << py(std::clamp(ys[i][k], 0.0, 1.0)) << " ";
    }
    s << "\"/>\n";
    s << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * (i + 1)
      << "\" text-anchor=\"end\" font-size=\"10\" fill=\"" << color << "\">"
      << labels[i] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

void cmd_plot(const RunConfig& config,
              const std::vector<std::pair<std::string, std::string>>& inputs,
              const std::string& out_dir) {
  if (inputs.empty()) throw ConfigError("cmd_plot needs at least one CSV");
  fs::create_directories(out_dir);

  const std::vector<std::string> metrics = {"ARE", "ATE", "RRE", "RTE"};

  // mean accuracy per (input, metric, threshold)
  struct Curve {
    std::vector<double> taus, acc;
  };
  std::map<std::string, std::map<std::string, Curve>> data;
  for (const auto& [label, path] : inputs) {
    auto rows = readReportCsv(path);
    for (const auto& m : metrics) {
      std::map<double, std::pair<double, int>> agg;
      for (const auto& r : rows) {
        if (r.metric == m) {
          agg[r.threshold].first += r.accuracy;
          agg[r.threshold].second += 1;
        }
      }
      Curve c;
      for (const auto& [tau, sum] : agg) {
        c.taus.push_back(tau);
        c.acc.push_back(sum.first / sum.second);
      }
      data[label][m] = std::move(c);
    }
  }

  // accuracy vs threshold, one SVG per metric, one line per input
  for (const auto& m : metrics) {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> xs, ys;
    for (const auto& [label, path] : inputs) {
      labels.push_back(label);
      xs.push_back(data[label][m].taus);
      ys.push_back(data[label][m].acc);
    }
    writeText((fs::path(out_dir) / ("accuracy_vs_threshold_" + m + ".svg"))
                  .string(),
              svgChart(m + " accuracy vs threshold", "threshold", labels, xs,
                       ys));
  }

  // accuracy vs numeric label (e.g. frame count), one line per metric
  bool numeric_labels = true;
  std::vector<double> xvals;
  for (const auto& [label, path] : inputs) {
    try {
      xvals.push_back(std::stod(label));
    } catch (...) {
      numeric_labels = false;
      break;
    }
  }
  if (numeric_labels && inputs.size() > 1) {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> xs, ys;
    for (const auto& m : metrics) {
      labels.push_back("m" + m);
      std::vector<double> y;
      for (const auto& [label, path] : inputs) {
        const Curve& c = data[label][m];
        double sum = 0.0;
        for (double a : c.acc) sum += a;
        y.push_back(c.acc.empty() ? 0.0 : sum / c.acc.size());
      }
      xs.push_back(xvals);
      ys.push_back(std::move(y));
    }
    writeText((fs::path(out_dir) / "accuracy_vs_frames.svg").string(),
              svgChart("mean accuracy vs frame count", "frames", labels, xs,
                       ys));
  }
  echoConfig(config, out_dir);
}

}  // namespace posediff
