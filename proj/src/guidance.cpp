#include "posediff/guidance.hpp"

#include <cmath>
#include <string>

#include "posediff/errors.hpp"

namespace posediff {

void GuidanceConfig::validate() const {
  if (epsilon <= 0.0) throw ConfigError("guidance epsilon must be positive");
  if (alpha < 0.0) throw ConfigError("guidance alpha must be nonnegative");
  if (ggs_iters < 0) throw ConfigError("ggs_iters must be nonnegative");
  if (guided_last_steps < 0) {
    throw ConfigError("guided_last_steps must be nonnegative");
  }
  if (fixed_strength < 0.0) {
    throw ConfigError("fixed guidance strength must be nonnegative");
  }
}

namespace {

void checkPair(const CorrespondenceSet& corr, int n_frames) {
  if (corr.i < 0 || corr.j < 0 || corr.i >= n_frames || corr.j >= n_frames ||
      corr.i == corr.j) {
    throw DataError("correspondence pair (" + std::to_string(corr.i) + "," +
                    std::to_string(corr.j) + ") references invalid frames");
  }
}

}  // namespace

double log_guidance_density(const PoseTuple& poses,
                            const std::vector<CorrespondenceSet>& matches,
                            double epsilon) {
  double total = 0.0;
  for (const auto& corr : matches) {
    checkPair(corr, poses.size());
    total += sampson_error(poses.cameras[corr.i], poses.cameras[corr.j],
                           corr, epsilon);
  }
  return -total;
}

double total_sampson_error(const Eigen::VectorXd& flat,
                           const std::vector<CorrespondenceSet>& matches,
                           double epsilon) {
  const int n = static_cast<int>(flat.size()) / kCameraParams;
  double total = 0.0;
  for (const auto& corr : matches) {
    checkPair(corr, n);
    CameraParams pi = flat.segment<kCameraParams>(corr.i * kCameraParams);
    CameraParams pj = flat.segment<kCameraParams>(corr.j * kCameraParams);
    try {
      total += sampson_error(pi, pj, corr, epsilon);
    } catch (const DataError&) {
      total += epsilon * static_cast<double>(corr.size());
    }
  }
  return total;
}

Eigen::VectorXd guided_mean(const Eigen::VectorXd& raw_mean,
                            const Eigen::VectorXd& x_t,
                            const std::vector<CorrespondenceSet>& matches,
                            const GuidanceConfig& config,
                            GuidanceStepInfo* info) {
  (void)x_t;  // the gradient is evaluated at the iteratively updated mean
  config.validate();
  const int n = static_cast<int>(raw_mean.size()) / kCameraParams;
  for (const auto& corr : matches) checkPair(corr, n);

  if (info) {
    info->sampson_before =
        total_sampson_error(raw_mean, matches, config.epsilon);
  }

  Eigen::VectorXd mean = raw_mean;
  for (int iter = 0; iter < config.ggs_iters; ++iter) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(mean.size());
    for (const auto& corr : matches) {
      CameraParams pi = mean.segment<kCameraParams>(corr.i * kCameraParams);
      CameraParams pj = mean.segment<kCameraParams>(corr.j * kCameraParams);
      PairGradient pg = sampson_gradient(pi, pj, corr, config.epsilon);
      // ascent on log p(I|x) = -e
      g.segment<kCameraParams>(corr.i * kCameraParams) -=
          pg.head<kCameraParams>();
      g.segment<kCameraParams>(corr.j * kCameraParams) -=
          pg.tail<kCameraParams>();
    }
    // gauge fix: the pivot frame's extrinsics do not move
    g.segment<kCameraParams - 1>(1).setZero();

    if (!g.allFinite()) {
      if (info) ++info->skipped_nonfinite;
      break;
    }
    double gnorm = g.norm();
    if (gnorm == 0.0) break;

    double cap = config.alpha * mean.norm();
    double s = (config.fixed_strength > 0.0) ? config.fixed_strength : 1.0;
    if (s * gnorm > cap) s = cap / gnorm;
    if (s <= 0.0) break;
    mean += s * g;
  }

  if (info) {
    info->sampson_after = total_sampson_error(mean, matches, config.epsilon);
  }
  return mean;
}

PoseTuple guided_ddpm_sample(const DenoiserParams& params,
                             const SceneConditioning& cond,
                             const std::vector<CorrespondenceSet>& matches,
                             const GuidanceConfig& config, Rng& rng,
                             std::vector<SampleTraceRow>* trace) {
  config.validate();
  DenoiseFn denoise = make_denoise_fn(params, cond);
  const bool guidance_possible = !matches.empty() && config.ggs_iters > 0 &&
                                 (config.alpha > 0.0 ||
                                  config.fixed_strength > 0.0);

  MeanHook hook = [&](const Eigen::VectorXd& mean, const Eigen::VectorXd& x_t,
                      int t) -> Eigen::VectorXd {
    bool guide = guidance_possible && t <= config.guided_last_steps;
    if (!guide && !trace) return mean;
    SampleTraceRow row;
    row.t = t;
    Eigen::VectorXd out = mean;
    if (trace) {
      row.sampson_before =
          total_sampson_error(mean, matches, config.epsilon);
    }
    if (guide) {
      out = guided_mean(mean, x_t, matches, config);
    }
    row.sampson_after =
        trace ? total_sampson_error(out, matches, config.epsilon) : 0.0;
    if (trace) trace->push_back(row);
    return out;
  };

  return ddpm_sample(denoise, params.schedule,
                     static_cast<int>(cond.frame_embeds.size()), rng, hook);
}

}  // namespace posediff
