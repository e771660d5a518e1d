#include "posediff/diffusion.hpp"

#include <string>

#include "posediff/errors.hpp"

namespace posediff {

Eigen::VectorXd PoseTuple::flat() const {
  Eigen::VectorXd block(cameras.size() * kCameraParams);
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    block.segment<kCameraParams>(i * kCameraParams) = cameras[i].toParams();
  }
  return block;
}

PoseTuple PoseTuple::fromFlat(const Eigen::VectorXd& block) {
  if (block.size() % kCameraParams != 0) {
    throw DataError("flat pose block size is not a multiple of 8");
  }
  if (!block.allFinite()) {
    throw NumericError("non-finite values in flat pose block");
  }
  PoseTuple tuple;
  for (int i = 0; i < block.size() / kCameraParams; ++i) {
    tuple.cameras.push_back(
        Camera::fromParams(block.segment<kCameraParams>(i * kCameraParams)));
  }
  return tuple;
}

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.T = T;
  double cum = 1.0;
  for (int t = 0; t < T; ++t) {
    double b = beta_start + (beta_end - beta_start) * t / (T - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    cum *= 1.0 - b;
    s.alpha_bar.push_back(cum);
  }
  return s;
}

Eigen::VectorXd noise_sample(const Eigen::VectorXd& x0, int t,
                             const DiffusionSchedule& schedule,
                             const Eigen::VectorXd& z) {
  if (t < 1 || t > schedule.T) {
    throw DataError("diffusion step out of range: " + std::to_string(t));
  }
  double ab = schedule.alphaBarAt(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * z;
}

Eigen::VectorXd noise_sample(const Eigen::VectorXd& x0, int t,
                             const DiffusionSchedule& schedule, Rng& rng) {
  Eigen::VectorXd z(x0.size());
  for (int i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return noise_sample(x0, t, schedule, z);
}

PoseTuple ddpm_sample(const DenoiseFn& denoise_fn,
                      const DiffusionSchedule& schedule, int n_frames,
                      Rng& rng, const MeanHook& mean_hook) {
  const int dim = n_frames * kCameraParams;
  Eigen::VectorXd x(dim);
  for (int i = 0; i < dim; ++i) x(i) = rng.normal();

  for (int t = schedule.T; t >= 1; --t) {
    Eigen::VectorXd mean = denoise_fn(x, t);
    if (!mean.allFinite()) {
      throw NumericError("denoiser produced non-finite mean at step " +
                         std::to_string(t));
    }
    if (mean_hook) {
      mean = mean_hook(mean, x, t);
      if (!mean.allFinite()) {
        throw NumericError("mean hook produced non-finite mean at step " +
                           std::to_string(t));
      }
    }
    double ab_prev = schedule.alphaBarAt(t - 1);
    if (t == 1) {
      x = mean;  // near-delta final step
    } else {
      Eigen::VectorXd z(dim);
      for (int i = 0; i < dim; ++i) z(i) = rng.normal();
      x = std::sqrt(ab_prev) * mean + std::sqrt(1.0 - ab_prev) * z;
    }
  }
  return PoseTuple::fromFlat(x);
}

}  // namespace posediff
