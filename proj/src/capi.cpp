#include "posediff.h"

#include <string>
#include <utility>
#include <vector>

#include "posediff/errors.hpp"
#include "posediff/guidance.hpp"
#include "posediff/pipeline.hpp"

struct pd_context {
  std::string last_error;
};

namespace {

template <typename Fn>
int guard(pd_context* ctx, Fn&& fn) {
  if (!ctx) return PD_ERR_CONFIG;
  ctx->last_error.clear();
  try {
    fn();
    return PD_OK;
  } catch (const posediff::ConfigError& e) {
    ctx->last_error = e.what();
    return PD_ERR_CONFIG;
  } catch (const posediff::DataError& e) {
    ctx->last_error = e.what();
    return PD_ERR_DATA;
  } catch (const posediff::NumericError& e) {
    ctx->last_error = e.what();
    return PD_ERR_NUMERIC;
  } catch (const std::exception& e) {
    ctx->last_error = e.what();
    return PD_ERR_NUMERIC;
  }
}

}  // namespace

extern "C" {

pd_context* pd_context_new(void) { return new pd_context(); }

void pd_context_free(pd_context* ctx) { delete ctx; }

const char* pd_last_error(const pd_context* ctx) {
  return ctx ? ctx->last_error.c_str() : "null context";
}

int pd_synth(pd_context* ctx, const char* config_json, const char* out_dir) {
  return guard(ctx, [&] {
    posediff::cmd_synth(posediff::parse_run_config(config_json), out_dir);
  });
}

int pd_train(pd_context* ctx, const char* config_json,
             const char* dataset_dir, const char* out_dir) {
  return guard(ctx, [&] {
    posediff::cmd_train(posediff::parse_run_config(config_json), dataset_dir,
                        out_dir);
  });
}

int pd_sample(pd_context* ctx, const char* config_json,
              const char* checkpoint_path, const char* dataset_dir,
              int scene_index, int use_ggs, const char* out_dir) {
  return guard(ctx, [&] {
    posediff::cmd_sample(posediff::parse_run_config(config_json),
                         checkpoint_path, dataset_dir, scene_index,
                         use_ggs != 0, out_dir);
  });
}

int pd_eval(pd_context* ctx, const char* config_json,
            const char* pred_cameras_json, const char* gt_cameras_json,
            const char* out_dir) {
  return guard(ctx, [&] {
    posediff::cmd_eval(posediff::parse_run_config(config_json),
                       pred_cameras_json, gt_cameras_json, out_dir);
  });
}

int pd_plot(pd_context* ctx, const char* config_json,
            const char* const* labels, const char* const* csv_paths, int n,
            const char* out_dir) {
  return guard(ctx, [&] {
    std::vector<std::pair<std::string, std::string>> inputs;
    for (int i = 0; i < n; ++i) inputs.emplace_back(labels[i], csv_paths[i]);
    posediff::cmd_plot(posediff::parse_run_config(config_json), inputs,
                       out_dir);
  });
}

int pd_sampson_error(pd_context* ctx, const char* cameras_json_path,
                     const char* pairs_json_path, double epsilon,
                     double* out_total) {
  return guard(ctx, [&] {
    auto cams = posediff::load_cameras(cameras_json_path);
    auto pairs = posediff::load_correspondences(pairs_json_path);
    posediff::PoseTuple tuple;
    tuple.cameras = std::move(cams);
    *out_total =
        -posediff::log_guidance_density(tuple, pairs, epsilon);
  });
}

}  // extern "C"
