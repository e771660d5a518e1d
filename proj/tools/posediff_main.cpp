// Command-line front end; all work happens behind the C API.
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "posediff.h"

using json = nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  long long seed = -1;
  double ggs_eps = -1.0, ggs_alpha = -1.0;
  int ggs_iters = -1, ggs_last_steps = -1;
};

void addCommon(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "run config JSON file");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "override config seed");
  cmd->add_option("--ggs-eps", o.ggs_eps, "Sampson clamp epsilon");
  cmd->add_option("--ggs-alpha", o.ggs_alpha, "guidance cap multiplier");
  cmd->add_option("--ggs-iters", o.ggs_iters, "GGS iterations per step");
  cmd->add_option("--ggs-last-steps", o.ggs_last_steps,
                  "number of final guided steps");
}

// flags override file values; the merged document goes to the library
std::string mergedConfig(const CommonOpts& o) {
  json cfg = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) {
      std::fprintf(stderr, "error: cannot open config %s\n",
                   o.config_path.c_str());
      std::exit(2);
    }
    try {
      in >> cfg;
    } catch (const json::exception& e) {
      std::fprintf(stderr, "error: invalid config JSON: %s\n", e.what());
      std::exit(2);
    }
  }
  if (o.seed >= 0) cfg["seed"] = o.seed;
  if (o.ggs_eps > 0) cfg["guidance"]["epsilon"] = o.ggs_eps;
  if (o.ggs_alpha >= 0) cfg["guidance"]["alpha"] = o.ggs_alpha;
  if (o.ggs_iters >= 0) cfg["guidance"]["ggs_iters"] = o.ggs_iters;
  if (o.ggs_last_steps >= 0) {
    cfg["guidance"]["guided_last_steps"] = o.ggs_last_steps;
  }
  return cfg.dump();
}

int finish(pd_context* ctx, int rc) {
  if (rc != PD_OK) {
    std::fprintf(stderr, "error (%d): %s\n", rc, pd_last_error(ctx));
  }
  pd_context_free(ctx);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-aided bundle adjustment"};
  app.require_subcommand(1);

  CommonOpts synth_o, train_o, sample_o, eval_o, plot_o;
  std::string dataset_dir, checkpoint, pred_path, gt_path;
  std::string sampson_cams, sampson_pairs;
  double sampson_eps = 10.0;
  int scene_index = 0;
  bool no_ggs = false;
  std::vector<std::string> plot_inputs;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  addCommon(synth, synth_o);

  auto* train = app.add_subcommand("train", "train the denoiser");
  addCommon(train, train_o);
  train->add_option("--dataset", dataset_dir, "dataset directory")
      ->required();

  auto* sample = app.add_subcommand("sample", "sample camera poses");
  addCommon(sample, sample_o);
  sample->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();
  sample->add_option("--dataset", dataset_dir, "dataset directory")
      ->required();
  sample->add_option("--scene", scene_index, "scene index");
  sample->add_flag("--no-ggs", no_ggs, "disable geometry-guided sampling");

  auto* eval = app.add_subcommand("eval", "evaluate predictions");
  addCommon(eval, eval_o);
  eval->add_option("--pred", pred_path, "predicted cameras JSON")->required();
  eval->add_option("--gt", gt_path, "ground-truth cameras JSON")->required();

  auto* plot = app.add_subcommand("plot", "emit SVG accuracy figures");
  addCommon(plot, plot_o);
  plot->add_option("--csv", plot_inputs,
                   "label=report.csv (repeatable)")
      ->required();

  auto* sampson = app.add_subcommand("sampson", "total Sampson error");
  sampson->add_option("--cameras", sampson_cams, "camera JSON file")
      ->required();
  sampson->add_option("--pairs", sampson_pairs, "correspondence JSON file")
      ->required();
  sampson->add_option("--eps", sampson_eps, "clamp epsilon");

  CLI11_PARSE(app, argc, argv);

  pd_context* ctx = pd_context_new();

  if (synth->parsed()) {
    return finish(ctx, pd_synth(ctx, mergedConfig(synth_o).c_str(),
                                synth_o.out_dir.c_str()));
  }
  if (train->parsed()) {
    return finish(ctx, pd_train(ctx, mergedConfig(train_o).c_str(),
                                dataset_dir.c_str(),
                                train_o.out_dir.c_str()));
  }
  if (sample->parsed()) {
    return finish(
        ctx, pd_sample(ctx, mergedConfig(sample_o).c_str(),
                       checkpoint.c_str(), dataset_dir.c_str(), scene_index,
                       no_ggs ? 0 : 1, sample_o.out_dir.c_str()));
  }
  if (eval->parsed()) {
    return finish(ctx, pd_eval(ctx, mergedConfig(eval_o).c_str(),
                               pred_path.c_str(), gt_path.c_str(),
                               eval_o.out_dir.c_str()));
  }
  if (plot->parsed()) {
    std::vector<std::string> labels, paths;
    for (const auto& item : plot_inputs) {
      auto pos = item.find('=');
      if (pos == std::string::npos) {
        std::fprintf(stderr, "error: --csv expects label=path, got %s\n",
                     item.c_str());
        pd_context_free(ctx);
        return 2;
      }
      labels.push_back(item.substr(0, pos));
      paths.push_back(item.substr(pos + 1));
    }
    std::vector<const char*> lp, pp;
    for (const auto& s : labels) lp.push_back(s.c_str());
    for (const auto& s : paths) pp.push_back(s.c_str());
    return finish(ctx, pd_plot(ctx, mergedConfig(plot_o).c_str(), lp.data(),
                               pp.data(), static_cast<int>(lp.size()),
                               plot_o.out_dir.c_str()));
  }
  if (sampson->parsed()) {
    double total = 0.0;
    int rc = pd_sampson_error(ctx, sampson_cams.c_str(),
                              sampson_pairs.c_str(), sampson_eps, &total);
    if (rc == PD_OK) std::printf("%.17g\n", total);
    return finish(ctx, rc);
  }

  pd_context_free(ctx);
  return 2;
}
