#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "storyboard/run_storyboard.hpp"

int main(int argc, char** argv) {
  using namespace storyboard;
  CLI::App app{"Multi-shot storyboard sampler with cross-shot attention control"};
  app.allow_extras(false);

  RunOptions options;
  std::string config, prompts, out, mode, set;
  std::uint64_t seed = 0;
  int t_pres = 0, sub_batch = 0;
  double q_dropout = 0.0;
  std::vector<int> anchors;

  auto* config_opt = app.add_option("--config", config, "YAML config file")->check(CLI::ExistingFile);
  app.add_option("--prompts", prompts, "YAML prompt sets")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out, "output directory (default $STORYBOARD_OUT)");
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  auto* mode_opt = app.add_option("--mode", mode, "passes to run")
                       ->check(CLI::IsMember({"vanilla", "consistent", "refined"}));
  auto* t_pres_opt = app.add_option("--t-pres", t_pres, "Q preservation starts at this timestep");
  auto* dropout_opt = app.add_option("--q-dropout", q_dropout, "probability of keeping the consistent query")
                          ->check(CLI::Range(0.0, 1.0));
  auto* sub_batch_opt = app.add_option("--sub-batch", sub_batch, "(shot, frame) items per attention chunk, 0 = all")
                            ->check(CLI::NonNegativeNumber);
  auto* anchors_opt = app.add_option("--anchors", anchors, "anchor shot ids, comma separated")->delimiter(',');
  auto* set_opt = app.add_option("--set", set, "prompt set name (default: first in file)");

  CLI11_PARSE(app, argc, argv);

  if (*config_opt) options.config = config;
  options.prompts = prompts;
  if (*out_opt) options.out = out;
  if (*seed_opt) options.seed = seed;
  if (*mode_opt) options.mode = parse_run_mode(mode);
  if (*t_pres_opt) options.t_pres = t_pres;
  if (*dropout_opt) options.q_dropout = q_dropout;
  if (*sub_batch_opt) options.sub_batch = sub_batch;
  if (*anchors_opt) options.anchors = anchors;
  if (*set_opt) options.set = set;
  return run_storyboard(options);
}
