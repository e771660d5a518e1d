#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "posediff/diffusion.hpp"
#include "posediff/geometry.hpp"
#include "posediff/rng.hpp"

namespace posediff {

inline constexpr int kTimeEmbedDim = 32;
inline constexpr int kCheckpointVersion = 1;

// One frame's input to the denoiser. Concatenation order is fixed:
// noisy pose (8) | time embedding (32) | scene embedding (D_psi) | pivot flag.
struct FrameToken {
  CameraParams noisy_pose;
  Eigen::VectorXd scene_embed;
  int t = 1;
  int pivot_flag = 0;
};

struct DenoiserConfig {
  int scene_embed_dim = 64;  // D_psi
  int width = 128;
  int n_blocks = 4;
  int n_heads = 4;
  int ff_width = 512;

  int tokenDim() const {
    return kCameraParams + kTimeEmbedDim + scene_embed_dim + 1;
  }
};

struct TrainConfig {
  double learning_rate = 5e-4;
  int lr_decay_epoch = 30;  // ten-fold decay after this epoch
  double lr_decay_factor = 0.1;
  int epochs = 60;
  int min_frames = 3;
  int max_frames = 20;
  std::uint64_t seed = 0;
  // When set, trains the direct pose regressor: zero-pose tokens at a fixed
  // timestep, same architecture, same loss.
  bool regression_mode = false;
};

// Sinusoidal encoding of t/T.
Eigen::VectorXd time_embedding(int t, int T);

struct LinearLayer {
  Eigen::MatrixXd weight;  // in x out
  Eigen::VectorXd bias;
};

struct BlockParams {
  Eigen::VectorXd ln1_gamma, ln1_beta;
  LinearLayer wq, wk, wv, wo;
  Eigen::VectorXd ln2_gamma, ln2_beta;
  LinearLayer ff1, ff2;
};

// All learnable weights. `visit` enumerates every tensor in a fixed order;
// the optimizer and the checkpoint format rely on that order.
struct DenoiserParams {
  DenoiserConfig config;
  DiffusionSchedule schedule;
  LinearLayer in_proj;
  std::vector<BlockParams> blocks;
  Eigen::VectorXd lnf_gamma, lnf_beta;
  LinearLayer out_proj;

  static DenoiserParams init(const DenoiserConfig& config,
                             const DiffusionSchedule& schedule,
                             std::uint64_t seed);
  DenoiserParams zeroLike() const;
  long parameterCount() const;
  bool allFinite() const;

  template <class F>
  void visit(F&& f) {
    auto lin = [&](LinearLayer& l) {
      f(l.weight);
      f(l.bias);
    };
    lin(in_proj);
    for (auto& b : blocks) {
      f(b.ln1_gamma);
      f(b.ln1_beta);
      lin(b.wq);
      lin(b.wk);
      lin(b.wv);
      lin(b.wo);
      f(b.ln2_gamma);
      f(b.ln2_beta);
      lin(b.ff1);
      lin(b.ff2);
    }
    f(lnf_gamma);
    f(lnf_beta);
    lin(out_proj);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<DenoiserParams*>(this)->visit([&](auto& m) {
      f(const_cast<const std::remove_reference_t<decltype(m)>&>(m));
    });
  }
};

// Set-to-set forward pass: one denoised 8-vector per input frame. Attention
// spans all frames jointly; there is no positional encoding over frames.
std::vector<CameraParams> denoiser_forward(
    const DenoiserParams& params, const std::vector<FrameToken>& tokens);

// Conditioning for one scene: the per-frame embeddings psi(I^i).
struct SceneConditioning {
  std::vector<Eigen::VectorXd> frame_embeds;
};

struct LossResult {
  double loss = 0.0;
  DenoiserParams grad;  // same shapes as params
};

// Denoising regression loss || D(x_t, t, I) - x_0 ||^2 averaged over frames
// and the 8 parameters; x0 must already be pivot-normalized with the pivot at
// `pivot`. Throws NumericError when the loss is non-finite.
LossResult diffusion_loss(const DenoiserParams& params,
                          const Eigen::VectorXd& x0_flat,
                          const SceneConditioning& cond, int pivot, int t,
                          Rng& rng, bool regression_mode = false);

// Expresses all extrinsics relative to the pivot camera, then divides every
// translation by the median of the nonzero pivot-normalized translation
// norms. Intrinsics are unchanged. Sets *degenerate_scale (if given) when all
// translations vanish and the scale is left at 1.
PoseTuple pivot_normalize(const PoseTuple& poses, int pivot,
                          bool* degenerate_scale = nullptr);

struct TrainScene {
  Eigen::VectorXd gt_flat;  // raw ground truth, pivot-normalized per batch
  SceneConditioning cond;
};

struct TrainResult {
  DenoiserParams params;
  std::vector<double> loss_curve;  // one entry per step
};

TrainResult train(const std::vector<TrainScene>& dataset,
                  const DenoiserConfig& config,
                  const DiffusionSchedule& schedule, const TrainConfig& tc);

// Builds the denoise function used by the samplers (pivot = frame 0).
DenoiseFn make_denoise_fn(const DenoiserParams& params,
                          const SceneConditioning& cond);

// Checkpoint: JSON manifest (dims, schedule, format version) followed by the
// raw tensor bytes in visit order. Loading rejects mismatched versions.
void save_checkpoint(const std::string& path, const DenoiserParams& params);
DenoiserParams load_checkpoint(const std::string& path);

}  // namespace posediff
