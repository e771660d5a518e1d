#pragma once

#include <string>
#include <utility>
#include <vector>

#include "posediff/denoiser.hpp"
#include "posediff/evalkit.hpp"
#include "posediff/guidance.hpp"
#include "posediff/scenegen.hpp"

namespace posediff {

// Fully describes a run; serialized into every output directory so any
// artifact is reproducible from its own config copy.
struct RunConfig {
  std::uint64_t seed = 0;

  int n_scenes = 20;
  double train_ratio = 0.8;
  SceneSpec scene;

  int schedule_T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.2;

  DenoiserConfig denoiser;
  TrainConfig training;
  GuidanceConfig guidance;
  MetricThresholds metrics;

  DiffusionSchedule schedule() const {
    return make_schedule(schedule_T, beta_start, beta_end);
  }
};

// Parses a config JSON document; unknown keys are rejected at the top level.
// POSEDIFF_SEED in the environment overrides the seed.
RunConfig parse_run_config(const std::string& config_json);
std::string run_config_to_json(const RunConfig& config);

// Each command writes effective_config.json into out_dir.
void cmd_synth(const RunConfig& config, const std::string& out_dir);
void cmd_train(const RunConfig& config, const std::string& dataset_dir,
               const std::string& out_dir);
void cmd_sample(const RunConfig& config, const std::string& checkpoint,
                const std::string& dataset_dir, int scene_index, bool use_ggs,
                const std::string& out_dir);
MetricReport cmd_eval(const RunConfig& config, const std::string& pred_path,
                      const std::string& gt_path, const std::string& out_dir);
void cmd_plot(const RunConfig& config,
              const std::vector<std::pair<std::string, std::string>>& inputs,
              const std::string& out_dir);

// --- library-level experiment helpers (used by commands and tests) --------

std::vector<TrainScene> to_train_scenes(const Dataset& dataset,
                                        const std::vector<int>& indices);

// Samples one scene's poses; when use_ggs is false the guidance config is
// neutralized so the run is plain DDPM.
PoseTuple sample_scene(const DenoiserParams& params, const SceneRecord& scene,
                       const GuidanceConfig& guidance, bool use_ggs,
                       std::uint64_t seed,
                       std::vector<SampleTraceRow>* trace = nullptr);

// Direct-regression baseline prediction: one forward pass on zero-pose
// tokens at the final timestep (the model must have been trained with
// regression_mode). Optionally refined by GGS on the regressed poses.
PoseTuple posereg_predict(const DenoiserParams& params,
                          const SceneRecord& scene,
                          const GuidanceConfig* ggs = nullptr);

// Evaluates predictions against the scene ground truth.
MetricReport evaluate_scene(const PoseTuple& pred, const SceneRecord& scene,
                            const MetricThresholds& thresholds);

}  // namespace posediff
