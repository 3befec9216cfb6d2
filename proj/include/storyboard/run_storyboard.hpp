#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "storyboard/config.hpp"
#include "storyboard/prompts.hpp"
#include "storyboard/toy_model.hpp"

namespace storyboard {

// Command-line overrides; unset fields fall back to the config file, then defaults.
struct RunOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path prompts;
  std::optional<std::filesystem::path> out;  // else $STORYBOARD_OUT, else "storyboard_out"
  std::optional<std::uint64_t> seed;
  std::optional<RunMode> mode;  // default refined
  std::optional<int> t_pres;
  std::optional<double> q_dropout;
  std::optional<int> sub_batch;
  std::optional<std::vector<int>> anchors;
  std::optional<std::string> set;  // prompt set name; default the first
};

StoryboardConfig effective_config(const RunOptions& options);
std::filesystem::path output_dir(const RunOptions& options);
std::vector<ShotPrompt> shot_prompts(const ShotPromptSet& set);

// Runs the passes up to the requested mode and writes:
//   manifest.json, cache_index.json, latents_<pass>.bin for every pass run, and
//   unless mode is vanilla also audit.jsonl, metrics.csv, metrics.json and
//   yt_<pass>_shot<i>.pgm.
// Returns 0 on success. Errors are reported on stderr and leave a FAILED marker.
int run_storyboard(const RunOptions& options);

}  // namespace storyboard
