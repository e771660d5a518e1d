#pragma once

#include <Eigen/Dense>
#include <vector>

#include "posediff/denoiser.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/geometry.hpp"

namespace posediff {

struct GuidanceConfig {
  double epsilon = 10.0;      // Sampson clamp
  double alpha = 1e-4;        // update-norm cap multiplier
  int ggs_iters = 100;        // iterations per guided step
  int guided_last_steps = 10; // guidance applies for t <= this
  double fixed_strength = 0.0;  // >0: fixed s (still capped); 0: adaptive

  void validate() const;  // throws ConfigError
};

// log p(I | x) up to an additive constant: -sum over pairs of the robust
// Sampson error. Throws DataError when a pair references a missing frame.
double log_guidance_density(const PoseTuple& poses,
                            const std::vector<CorrespondenceSet>& matches,
                            double epsilon);

struct GuidanceStepInfo {
  int skipped_nonfinite = 0;  // iterations dropped due to non-finite gradient
  double sampson_before = 0.0;
  double sampson_after = 0.0;
};

// Runs ggs_iters ascent iterations on log p(I | x) starting from the raw
// predicted mean. Every applied update Delta satisfies
// ||Delta|| <= alpha * ||current mean||. The pivot frame's (frame 0)
// extrinsic components are frozen; its focal still receives gradient.
Eigen::VectorXd guided_mean(const Eigen::VectorXd& raw_mean,
                            const Eigen::VectorXd& x_t,
                            const std::vector<CorrespondenceSet>& matches,
                            const GuidanceConfig& config,
                            GuidanceStepInfo* info = nullptr);

// Total robust Sampson error of a flat pose block over all match pairs.
// Pairs with degenerate geometry contribute their clamp value.
double total_sampson_error(const Eigen::VectorXd& flat,
                           const std::vector<CorrespondenceSet>& matches,
                           double epsilon);

struct SampleTraceRow {
  int t = 0;
  double sampson_before = 0.0;  // of the raw predicted mean
  double sampson_after = 0.0;   // after guidance (equal when unguided)
};

// DDPM sampling with the predicted mean replaced by guided_mean for the last
// guided_last_steps steps. With guidance disabled (zero steps, zero alpha, or
// empty matches) the output is bitwise identical to ddpm_sample.
PoseTuple guided_ddpm_sample(const DenoiserParams& params,
                             const SceneConditioning& cond,
                             const std::vector<CorrespondenceSet>& matches,
                             const GuidanceConfig& config, Rng& rng,
                             std::vector<SampleTraceRow>* trace = nullptr);

}  // namespace posediff
