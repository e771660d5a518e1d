#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "posediff/geometry.hpp"
#include "posediff/rng.hpp"

namespace posediff {

// beta/alpha/alpha_bar tables, 1-based step index t in [1, T].
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double betaAt(int t) const { return beta.at(t - 1); }
  double alphaAt(int t) const { return alpha.at(t - 1); }
  // alpha_bar(0) == 1 so the final sampling step returns the predicted mean.
  double alphaBarAt(int t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
};

// Ordered cameras of one scene; equivalently a flat N x 8 parameter block.
struct PoseTuple {
  std::vector<Camera> cameras;

  int size() const { return static_cast<int>(cameras.size()); }
  Eigen::VectorXd flat() const;
  // Decodes and re-normalizes quaternions; throws NumericError on non-finite
  // parameters or zero quaternions.
  static PoseTuple fromFlat(const Eigen::VectorXd& block);
};

// Linear beta interpolation between beta_start and beta_end over T steps.
DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

inline DiffusionSchedule default_schedule() {
  return make_schedule(100, 1e-4, 0.2);
}

// Closed-form forward noising: sqrt(ab_t) x0 + sqrt(1 - ab_t) z.
Eigen::VectorXd noise_sample(const Eigen::VectorXd& x0, int t,
                             const DiffusionSchedule& schedule,
                             const Eigen::VectorXd& z);
Eigen::VectorXd noise_sample(const Eigen::VectorXd& x0, int t,
                             const DiffusionSchedule& schedule, Rng& rng);

// Predicts the clean flat block from the noisy one at step t.
using DenoiseFn =
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x_t, int t)>;

// Optional per-step hook replacing the predicted mean (used by guidance).
using MeanHook = std::function<Eigen::VectorXd(
    const Eigen::VectorXd& mean, const Eigen::VectorXd& x_t, int t)>;

// Reverse DDPM loop: x_T ~ N(0, I); each step draws from
// N(sqrt(ab_{t-1}) * mean, (1 - ab_{t-1}) I); the final step returns the
// predicted mean with no added noise. Quaternions are re-normalized only when
// decoding the final sample.
PoseTuple ddpm_sample(const DenoiseFn& denoise_fn,
                      const DiffusionSchedule& schedule, int n_frames,
                      Rng& rng, const MeanHook& mean_hook = nullptr);

}  // namespace posediff
