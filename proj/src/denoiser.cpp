#include "posediff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd time_embedding(int t, int T) {
  VectorXd emb(kTimeEmbedDim);
  double pos = static_cast<double>(t) / T;
  for (int k = 0; k < kTimeEmbedDim / 2; ++k) {
    double omega = std::pow(1000.0, static_cast<double>(k) /
                                        (kTimeEmbedDim / 2 - 1));
    emb(2 * k) = std::sin(pos * omega);
    emb(2 * k + 1) = std::cos(pos * omega);
  }
  return emb;
}

namespace {

LinearLayer initLinear(int in, int out, Rng& rng) {
  LinearLayer l;
  double s = std::sqrt(6.0 / (in + out));
  l.weight = MatrixXd::Zero(in, out);
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < out; ++j) l.weight(i, j) = rng.uniform(-s, s);
  l.bias = VectorXd::Zero(out);
  return l;
}

MatrixXd linForward(const LinearLayer& l, const MatrixXd& x) {
  return (x * l.weight).rowwise() + l.bias.transpose();
}

MatrixXd linBackward(const LinearLayer& l, const MatrixXd& x,
                     const MatrixXd& dy, LinearLayer& grad) {
  grad.weight += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  return dy * l.weight.transpose();
}

struct LnCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

MatrixXd lnForward(const MatrixXd& x, const VectorXd& gamma,
                   const VectorXd& beta, LnCache& c) {
  const double eps = 1e-6;
  int n = x.rows(), d = x.cols();
  c.xhat.resize(n, d);
  c.inv_std.resize(n);
  MatrixXd y(n, d);
  for (int r = 0; r < n; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    c.inv_std(r) = inv;
    c.xhat.row(r) = (x.row(r).array() - mu) * inv;
    y.row(r) = c.xhat.row(r).cwiseProduct(gamma.transpose()) +
               beta.transpose();
  }
  return y;
}

MatrixXd lnBackward(const MatrixXd& dy, const VectorXd& gamma,
                    const LnCache& c, VectorXd& dgamma, VectorXd& dbeta) {
  int n = dy.rows(), d = dy.cols();
  MatrixXd dx(n, d);
  for (int r = 0; r < n; ++r) {
    Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma.transpose());
    double sum_dxhat = dxhat.sum();
    double sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat.row(r)).sum();
    dx.row(r) = (c.inv_std(r) / d) *
                (d * dxhat.array() - sum_dxhat -
                 c.xhat.row(r).array() * sum_dxhat_xhat);
  }
  dgamma += (dy.cwiseProduct(c.xhat)).colwise().sum();
  dbeta += dy.colwise().sum();
  return dx;
}

struct BlockCache {
  MatrixXd x_in;
  LnCache ln1;
  MatrixXd n1, q, k, v;
  std::vector<MatrixXd> attn;  // per-head softmax weights
  MatrixXd o;                  // concatenated head outputs
  MatrixXd x1;
  LnCache ln2;
  MatrixXd n2, h_pre, h;
};

struct ForwardCache {
  MatrixXd tokens;
  MatrixXd x0;
  std::vector<BlockCache> blocks;
  LnCache lnf;
  MatrixXd nf;
};

MatrixXd modelForward(const DenoiserParams& p, const MatrixXd& tokens,
                      ForwardCache& c) {
  const int n_heads = p.config.n_heads;
  const int width = p.config.width;
  const int dh = width / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  c.tokens = tokens;
  MatrixXd x = linForward(p.in_proj, tokens);
  c.x0 = x;
  c.blocks.resize(p.blocks.size());

  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const BlockParams& bp = p.blocks[b];
    BlockCache& bc = c.blocks[b];
    bc.x_in = x;
    bc.n1 = lnForward(x, bp.ln1_gamma, bp.ln1_beta, bc.ln1);
    bc.q = linForward(bp.wq, bc.n1);
    bc.k = linForward(bp.wk, bc.n1);
    bc.v = linForward(bp.wv, bc.n1);
    bc.attn.resize(n_heads);
    bc.o.resize(x.rows(), width);
    for (int h = 0; h < n_heads; ++h) {
      MatrixXd qh = bc.q.middleCols(h * dh, dh);
      MatrixXd kh = bc.k.middleCols(h * dh, dh);
      MatrixXd vh = bc.v.middleCols(h * dh, dh);
      MatrixXd s = qh * kh.transpose() * scale;
      MatrixXd a(s.rows(), s.cols());
      for (int r = 0; r < s.rows(); ++r) {
        Eigen::RowVectorXd row = s.row(r);
        double m = row.maxCoeff();
        Eigen::RowVectorXd e = (row.array() - m).exp();
        a.row(r) = e / e.sum();
      }
      bc.attn[h] = a;
      bc.o.middleCols(h * dh, dh) = a * vh;
    }
    x = bc.x_in + linForward(bp.wo, bc.o);
    bc.x1 = x;
    bc.n2 = lnForward(x, bp.ln2_gamma, bp.ln2_beta, bc.ln2);
    bc.h_pre = linForward(bp.ff1, bc.n2);
    bc.h = bc.h_pre.cwiseMax(0.0);
    x = bc.x1 + linForward(bp.ff2, bc.h);
  }

  c.nf = lnForward(x, p.lnf_gamma, p.lnf_beta, c.lnf);
  return linForward(p.out_proj, c.nf);
}

void modelBackward(const DenoiserParams& p, const ForwardCache& c,
                   const MatrixXd& dy, DenoiserParams& grad) {
  const int n_heads = p.config.n_heads;
  const int width = p.config.width;
  const int dh = width / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd dnf = linBackward(p.out_proj, c.nf, dy, grad.out_proj);
  MatrixXd dx = lnBackward(dnf, p.lnf_gamma, c.lnf, grad.lnf_gamma,
                           grad.lnf_beta);

  for (int b = static_cast<int>(p.blocks.size()) - 1; b >= 0; --b) {
    const BlockParams& bp = p.blocks[b];
    const BlockCache& bc = c.blocks[b];
    BlockParams& bg = grad.blocks[b];

    // FF residual branch
    MatrixXd dh_out = linBackward(bp.ff2, bc.h, dx, bg.ff2);
    MatrixXd dh_pre =
        dh_out.cwiseProduct((bc.h_pre.array() > 0.0).cast<double>().matrix());
    MatrixXd dn2 = linBackward(bp.ff1, bc.n2, dh_pre, bg.ff1);
    MatrixXd dx1 =
        dx + lnBackward(dn2, bp.ln2_gamma, bc.ln2, bg.ln2_gamma, bg.ln2_beta);

    // attention residual branch
    MatrixXd do_ = linBackward(bp.wo, bc.o, dx1, bg.wo);
    MatrixXd dq = MatrixXd::Zero(bc.q.rows(), width);
    MatrixXd dk = MatrixXd::Zero(bc.k.rows(), width);
    MatrixXd dv = MatrixXd::Zero(bc.v.rows(), width);
    for (int h = 0; h < n_heads; ++h) {
      MatrixXd qh = bc.q.middleCols(h * dh, dh);
      MatrixXd kh = bc.k.middleCols(h * dh, dh);
      MatrixXd vh = bc.v.middleCols(h * dh, dh);
      const MatrixXd& a = bc.attn[h];
      MatrixXd doh = do_.middleCols(h * dh, dh);
      MatrixXd da = doh * vh.transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * doh;
      MatrixXd ds(a.rows(), a.cols());
      for (int r = 0; r < a.rows(); ++r) {
        double dot = da.row(r).cwiseProduct(a.row(r)).sum();
        ds.row(r) =
            (a.row(r).array() * (da.row(r).array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh) = ds * kh * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
    }
    MatrixXd dn1 = linBackward(bp.wq, bc.n1, dq, bg.wq) +
                   linBackward(bp.wk, bc.n1, dk, bg.wk) +
                   linBackward(bp.wv, bc.n1, dv, bg.wv);
    dx = dx1 +
         lnBackward(dn1, bp.ln1_gamma, bc.ln1, bg.ln1_gamma, bg.ln1_beta);
  }
  linBackward(p.in_proj, c.tokens, dx, grad.in_proj);
}

MatrixXd buildTokens(const DenoiserConfig& cfg,
                     const std::vector<FrameToken>& tokens, int T) {
  if (tokens.empty()) throw DataError("denoiser needs at least one frame");
  MatrixXd m(tokens.size(), cfg.tokenDim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const FrameToken& tok = tokens[i];
    if (tok.scene_embed.size() != cfg.scene_embed_dim) {
      throw DataError("scene embedding dimension mismatch");
    }
    m.block(i, 0, 1, kCameraParams) = tok.noisy_pose.transpose();
    m.block(i, kCameraParams, 1, kTimeEmbedDim) =
        time_embedding(tok.t, T).transpose();
    m.block(i, kCameraParams + kTimeEmbedDim, 1, cfg.scene_embed_dim) =
        tok.scene_embed.transpose();
    m(i, cfg.tokenDim() - 1) = tok.pivot_flag;
  }
  return m;
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserConfig& config,
                                    const DiffusionSchedule& schedule,
                                    std::uint64_t seed) {
  if (config.width % config.n_heads != 0) {
    throw ConfigError("denoiser width must be divisible by head count");
  }
  Rng rng(seed);
  DenoiserParams p;
  p.config = config;
  p.schedule = schedule;
  p.in_proj = initLinear(config.tokenDim(), config.width, rng);
  for (int b = 0; b < config.n_blocks; ++b) {
    BlockParams bp;
    bp.ln1_gamma = VectorXd::Ones(config.width);
    bp.ln1_beta = VectorXd::Zero(config.width);
    bp.wq = initLinear(config.width, config.width, rng);
    bp.wk = initLinear(config.width, config.width, rng);
    bp.wv = initLinear(config.width, config.width, rng);
    bp.wo = initLinear(config.width, config.width, rng);
    bp.ln2_gamma = VectorXd::Ones(config.width);
    bp.ln2_beta = VectorXd::Zero(config.width);
    bp.ff1 = initLinear(config.width, config.ff_width, rng);
    bp.ff2 = initLinear(config.ff_width, config.width, rng);
    p.blocks.push_back(std::move(bp));
  }
  p.lnf_gamma = VectorXd::Ones(config.width);
  p.lnf_beta = VectorXd::Zero(config.width);
  p.out_proj = initLinear(config.width, kCameraParams, rng);
  return p;
}

DenoiserParams DenoiserParams::zeroLike() const {
  DenoiserParams z = *this;
  z.visit([](auto& m) { m.setZero(); });
  return z;
}

long DenoiserParams::parameterCount() const {
  long n = 0;
  visit([&](const auto& m) { n += m.size(); });
  return n;
}

bool DenoiserParams::allFinite() const {
  bool ok = true;
  visit([&](const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

std::vector<CameraParams> denoiser_forward(
    const DenoiserParams& params, const std::vector<FrameToken>& tokens) {
  MatrixXd m = buildTokens(params.config, tokens, params.schedule.T);
  ForwardCache cache;
  MatrixXd y = modelForward(params, m, cache);
  std::vector<CameraParams> out;
  for (int i = 0; i < y.rows(); ++i) {
    out.push_back(y.row(i).transpose());
  }
  return out;
}

LossResult diffusion_loss(const DenoiserParams& params,
                          const Eigen::VectorXd& x0_flat,
                          const SceneConditioning& cond, int pivot, int t,
                          Rng& rng, bool regression_mode) {
  const int n = static_cast<int>(cond.frame_embeds.size());
  if (n < 2) throw DataError("diffusion loss needs at least 2 frames");
  if (x0_flat.size() != n * kCameraParams) {
    throw DataError("x0 block does not match frame count");
  }
  Eigen::VectorXd x_t = regression_mode
                            ? Eigen::VectorXd::Zero(x0_flat.size())
                            : noise_sample(x0_flat, t, params.schedule, rng);

  std::vector<FrameToken> tokens(n);
  for (int i = 0; i < n; ++i) {
    tokens[i].noisy_pose = x_t.segment<kCameraParams>(i * kCameraParams);
    tokens[i].scene_embed = cond.frame_embeds[i];
    tokens[i].t = t;
    tokens[i].pivot_flag = (i == pivot) ? 1 : 0;
  }
  MatrixXd m = buildTokens(params.config, tokens, params.schedule.T);
  ForwardCache cache;
  MatrixXd pred = modelForward(params, m, cache);
  MatrixXd target(n, kCameraParams);
  for (int i = 0; i < n; ++i) {
    target.row(i) =
        x0_flat.segment<kCameraParams>(i * kCameraParams).transpose();
  }
  MatrixXd diff = pred - target;
  double denom = static_cast<double>(n) * kCameraParams;
  LossResult res;
  res.loss = diff.squaredNorm() / denom;
  if (!std::isfinite(res.loss)) {
    throw NumericError("non-finite diffusion loss");
  }
  res.grad = params.zeroLike();
  modelBackward(params, cache, diff * (2.0 / denom), res.grad);
  return res;
}

PoseTuple pivot_normalize(const PoseTuple& poses, int pivot,
                          bool* degenerate_scale) {
  if (pivot < 0 || pivot >= poses.size()) {
    throw DataError("pivot index out of range");
  }
  Extrinsics inv = poses.cameras[pivot].extrinsics.inverse();
  PoseTuple out = poses;
  std::vector<double> norms;
  for (int i = 0; i < poses.size(); ++i) {
    out.cameras[i].extrinsics = poses.cameras[i].extrinsics * inv;
    if (i == pivot) continue;  // pivot is zero by construction, not roundoff
    double n = out.cameras[i].extrinsics.translation.norm();
    if (n > 0.0) norms.push_back(n);
  }
  // pivot becomes exactly the identity
  out.cameras[pivot].extrinsics = Extrinsics{};

  double scale = 1.0;
  if (norms.empty()) {
    if (degenerate_scale) *degenerate_scale = true;
  } else {
    if (degenerate_scale) *degenerate_scale = false;
    std::sort(norms.begin(), norms.end());
    std::size_t n = norms.size();
    scale = (n % 2 == 1) ? norms[n / 2]
                         : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
  }
  for (auto& cam : out.cameras) cam.extrinsics.translation /= scale;
  return out;
}

namespace {

struct AdamState {
  DenoiserParams m, v;
  long step = 0;
};

void adamStep(DenoiserParams& params, const DenoiserParams& grad,
              AdamState& state, double lr) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++state.step;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  // walk all four parameter sets in lockstep (visit order is fixed)
  std::vector<double*> p_ptrs, g_ptrs, m_ptrs, v_ptrs;
  std::vector<long> sizes;
  params.visit([&](auto& t) {
    p_ptrs.push_back(t.data());
    sizes.push_back(t.size());
  });
  const_cast<DenoiserParams&>(grad).visit(
      [&](auto& t) { g_ptrs.push_back(t.data()); });
  state.m.visit([&](auto& t) { m_ptrs.push_back(t.data()); });
  state.v.visit([&](auto& t) { v_ptrs.push_back(t.data()); });

  for (std::size_t i = 0; i < p_ptrs.size(); ++i) {
    for (long k = 0; k < sizes[i]; ++k) {
      double g = g_ptrs[i][k];
      m_ptrs[i][k] = b1 * m_ptrs[i][k] + (1.0 - b1) * g;
      v_ptrs[i][k] = b2 * v_ptrs[i][k] + (1.0 - b2) * g * g;
      double mhat = m_ptrs[i][k] / bc1;
      double vhat = v_ptrs[i][k] / bc2;
      p_ptrs[i][k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace

TrainResult train(const std::vector<TrainScene>& dataset,
                  const DenoiserConfig& config,
                  const DiffusionSchedule& schedule, const TrainConfig& tc) {
  if (dataset.empty()) throw DataError("empty training dataset");

  DenoiserParams params = DenoiserParams::init(config, schedule, tc.seed);
  AdamState adam{params.zeroLike(), params.zeroLike(), 0};
  Rng rng = Rng(tc.seed).fork(0xAD5EED);

  TrainResult result;
  const int steps_per_epoch = static_cast<int>(dataset.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double lr = tc.learning_rate;
    if (epoch >= tc.lr_decay_epoch) lr *= tc.lr_decay_factor;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const TrainScene& scene =
          dataset[rng.integer(dataset.size())];
      const int n_total =
          static_cast<int>(scene.cond.frame_embeds.size());

      int lo = std::min(tc.min_frames, n_total);
      int hi = std::min(tc.max_frames, n_total);
      int n_sub = lo + static_cast<int>(rng.integer(hi - lo + 1));

      std::vector<int> idx(n_total);
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = n_total - 1; i > 0; --i) {
        std::swap(idx[i], idx[rng.integer(i + 1)]);
      }
      idx.resize(n_sub);
      std::sort(idx.begin(), idx.end());

      int pivot = static_cast<int>(rng.integer(n_sub));

      PoseTuple sub;
      SceneConditioning cond;
      for (int i : idx) {
        sub.cameras.push_back(Camera::fromParams(
            scene.gt_flat.segment<kCameraParams>(i * kCameraParams)));
        cond.frame_embeds.push_back(scene.cond.frame_embeds[i]);
      }
      PoseTuple normalized = pivot_normalize(sub, pivot);
      for (auto& cam : normalized.cameras) {
        cam.extrinsics.rotation = cam.extrinsics.rotation.canonicalized();
      }

      int t = tc.regression_mode
                  ? schedule.T
                  : 1 + static_cast<int>(rng.integer(schedule.T));
      LossResult lr_res =
          diffusion_loss(params, normalized.flat(), cond, pivot, t, rng,
                         tc.regression_mode);
      if (lr_res.loss > 1e6) {
        throw NumericError("training diverged (loss > 1e6)");
      }
      adamStep(params, lr_res.grad, adam, lr);
      if (!params.allFinite()) {
        throw NumericError("non-finite parameters after optimizer step");
      }
      result.loss_curve.push_back(lr_res.loss);
    }
  }
  result.params = std::move(params);
  return result;
}

DenoiseFn make_denoise_fn(const DenoiserParams& params,
                          const SceneConditioning& cond) {
  return [&params, cond](const Eigen::VectorXd& x_t, int t) {
    const int n = static_cast<int>(cond.frame_embeds.size());
    std::vector<FrameToken> tokens(n);
    for (int i = 0; i < n; ++i) {
      tokens[i].noisy_pose = x_t.segment<kCameraParams>(i * kCameraParams);
      tokens[i].scene_embed = cond.frame_embeds[i];
      tokens[i].t = t;
      tokens[i].pivot_flag = (i == 0) ? 1 : 0;
    }
    auto preds = denoiser_forward(params, tokens);
    Eigen::VectorXd out(n * kCameraParams);
    for (int i = 0; i < n; ++i) {
      out.segment<kCameraParams>(i * kCameraParams) = preds[i];
    }
    return out;
  };
}

// --- checkpoint -----------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'P', 'O', 'S', 'E', 'D', 'I', 'F', 'F'};
}

void save_checkpoint(const std::string& path, const DenoiserParams& params) {
  json manifest = {
      {"format_version", kCheckpointVersion},
      {"config",
       {{"scene_embed_dim", params.config.scene_embed_dim},
        {"width", params.config.width},
        {"n_blocks", params.config.n_blocks},
        {"n_heads", params.config.n_heads},
        {"ff_width", params.config.ff_width}}},
      {"schedule", {{"T", params.schedule.T}, {"beta", params.schedule.beta}}},
      {"parameter_count", params.parameterCount()}};
  std::string mstr = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t mlen = mstr.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mstr.data(), mstr.size());
  params.visit([&](const auto& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              t.size() * sizeof(double));
  });
  if (!out) throw DataError("checkpoint write failed: " + path);
}

DenoiserParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), mlen);
  json manifest;
  try {
    manifest = json::parse(mstr);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
    throw DataError("unsupported checkpoint format version");
  }
  DenoiserConfig cfg;
  const auto& jc = manifest.at("config");
  cfg.scene_embed_dim = jc.at("scene_embed_dim").get<int>();
  cfg.width = jc.at("width").get<int>();
  cfg.n_blocks = jc.at("n_blocks").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.ff_width = jc.at("ff_width").get<int>();

  DiffusionSchedule sched;
  sched.T = manifest.at("schedule").at("T").get<int>();
  sched.beta = manifest.at("schedule")
                   .at("beta")
                   .get<std::vector<double>>();
  double cum = 1.0;
  for (double b : sched.beta) {
    sched.alpha.push_back(1.0 - b);
    cum *= 1.0 - b;
    sched.alpha_bar.push_back(cum);
  }

  DenoiserParams params = DenoiserParams::init(cfg, sched, 0);
  params.visit([&](auto& t) {
    in.read(reinterpret_cast<char*>(t.data()), t.size() * sizeof(double));
  });
  if (!in) throw DataError("truncated checkpoint: " + path);
  return params;
}

}  // namespace posediff
