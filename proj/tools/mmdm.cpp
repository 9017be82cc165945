#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mmdm/pipeline.hpp"

namespace {

struct Overrides {
  std::string seed, steps, ddim;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw mmdm::ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

mmdm::pipeline::TaskConfig effective_config(const std::string& config_path,
                                            const std::string& task, const Overrides& ov) {
  std::string text = config_path.empty() ? std::string() : read_file(config_path);
  text += "\n";
  if (!ov.seed.empty()) text += "seed = " + ov.seed + "\n";
  if (!ov.steps.empty()) text += "diffusion.steps = " + ov.steps + "\n";
  if (!ov.ddim.empty()) text += "diffusion.ddim_stride = " + ov.ddim + "\n";
  text += "task = " + task + "\n";  // the subcommand is authoritative
  return mmdm::pipeline::parse_config_text(text);
}

void add_common(CLI::App* sub, std::string& config, Overrides& ov, std::string& out_dir,
                std::string& checkpoint) {
  sub->add_option("-c,--config", config, "configuration file (dotted keys)");
  sub->add_option("--seed", ov.seed, "override the master seed");
  sub->add_option("--steps", ov.steps, "override the diffusion step count K");
  sub->add_option("--ddim", ov.ddim, "DDIM stride (0 = ancestral DDPM)");
  sub->add_option("--out", out_dir, "output directory");
  sub->add_option("--checkpoint", checkpoint, "model checkpoint path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmdm: masked motion diffusion toolkit"};
  app.require_subcommand(1);

  std::string config, out_dir = ".", checkpoint, input, gt, pred, rig;
  Overrides ov;

  CLI::App* train = app.add_subcommand("train", "train a model on synthetic motion");
  CLI::App* complete = app.add_subcommand("complete", "fill masked joints of a motion file");
  CLI::App* refine = app.add_subcommand("refine", "denoise a full motion file");
  CLI::App* inbetween = app.add_subcommand("inbetween", "generate a transition segment");
  CLI::App* simulate = app.add_subcommand("simulate", "run the synthetic multi-view capture");
  CLI::App* eval = app.add_subcommand("eval", "score a prediction against ground truth");

  for (CLI::App* sub : {train, complete, refine, inbetween, simulate, eval})
    add_common(sub, config, ov, out_dir, checkpoint);
  for (CLI::App* sub : {complete, refine, inbetween})
    sub->add_option("--input", input, "input motion file")->required();
  for (CLI::App* sub : {complete, refine, inbetween})
    sub->add_option("--gt", gt, "ground-truth motion file for metrics");
  eval->add_option("--pred", pred, "prediction motion file")->required();
  eval->add_option("--gt", gt, "ground-truth motion file")->required();
  simulate->add_option("--rig", rig, "camera rig file (default: built-in rig)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const std::string task = app.get_subcommands().front()->get_name();
    mmdm::pipeline::TaskConfig cfg = effective_config(config, task, ov);
    mmdm::pipeline::CliPaths paths;
    paths.config = config;
    paths.checkpoint = checkpoint;
    paths.input = input;
    paths.gt = gt;
    paths.pred = pred;
    paths.rig = rig;
    paths.out_dir = out_dir;

    mmdm::metrics::MetricReport report;
    if (task == "train") report = mmdm::pipeline::run_train(cfg, paths);
    else if (task == "complete") report = mmdm::pipeline::run_completion(cfg, paths);
    else if (task == "refine") report = mmdm::pipeline::run_refinement(cfg, paths);
    else if (task == "inbetween") report = mmdm::pipeline::run_inbetween(cfg, paths);
    else if (task == "simulate") report = mmdm::pipeline::run_simulate(cfg, paths);
    else report = mmdm::pipeline::run_eval(cfg, paths);

    std::fputs(report.to_text().c_str(), stdout);
    return 0;
  } catch (const mmdm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
