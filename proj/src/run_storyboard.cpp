#include "storyboard/run_storyboard.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "storyboard/errors.hpp"
#include "storyboard/metrics.hpp"
#include "storyboard/pipeline.hpp"
#include "storyboard/rng.hpp"
#include "storyboard/tensor_io.hpp"

namespace storyboard {

namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("write failed for " + path.string());
}

nlohmann::ordered_json cache_index(const FeatureCache& cache) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& [key, entry] : cache.entries()) {
    entries.push_back({{"t", key.first},
                       {"layer", key.second},
                       {"shape", entry.cond.shape()},
                       {"cond", hex64(fnv1a(entry.cond.data()))},
                       {"uncond", hex64(fnv1a(entry.uncond.data()))}});
  }
  return {{"seed_fingerprint", hex64(cache.seed_fingerprint)}, {"entries", entries}};
}

void add_pass_metrics(const Storyboard& board, const PassResult& pass, const fs::path& out,
                      std::vector<MetricRow>& rows) {
  const std::string name(to_string(pass.mode));
  const StoryboardConfig& config = board.config();
  const auto extractors = FeatureExtractorRegistry::with_defaults();
  if (board.shots() >= 2) {
    const ConsistencyReport report =
        set_consistency(pass.latents, pass.final_masks, extractors.get("masked_mean_pool"), "masked_mean_pool");
    rows.push_back({"set_consistency_" + name, report.set_consistency, report.set_sem, report.pair_count});
    rows.push_back(
        {"subject_consistency_" + name, report.subject_consistency, report.subject_sem, report.subject_pair_count});
  }
  std::vector<double> degrees;
  for (std::size_t s = 0; s < board.shots(); ++s) {
    const Tensor video = preview_video(pass.latents, s, static_cast<std::size_t>(config.preview_scale));
    if (video.dim(0) >= 2 && video.dim(1) >= kFlowBlock && video.dim(2) >= kFlowBlock) {
      degrees.push_back(dynamic_degree(video, config.flow_threshold, config.flow_radius).score);
    }
    const YtSlice slice = yt_slice(video);
    write_pgm(out / ("yt_" + name + "_shot" + std::to_string(s) + ".pgm"), slice.slice);
  }
  if (!degrees.empty()) {
    double mean = 0.0, ss = 0.0;
    for (double d : degrees) mean += d;
    mean /= static_cast<double>(degrees.size());
    for (double d : degrees) ss += (d - mean) * (d - mean);
    const double n = static_cast<double>(degrees.size());
    const double sem = degrees.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    rows.push_back({"dynamic_degree_" + name, mean, sem, degrees.size()});
  }
}

}  // namespace

StoryboardConfig effective_config(const RunOptions& options) {
  StoryboardConfig config = options.config ? load_config(*options.config) : StoryboardConfig{};
  if (options.seed) config.seed = *options.seed;
  if (options.t_pres) config.t_pres = *options.t_pres;
  if (options.q_dropout) config.q_dropout = *options.q_dropout;
  if (options.sub_batch) config.sub_batch = *options.sub_batch;
  if (options.anchors) config.anchors = *options.anchors;
  config.validate();
  return config;
}

fs::path output_dir(const RunOptions& options) {
  if (options.out) return *options.out;
  if (const char* env = std::getenv("STORYBOARD_OUT"); env && *env) return env;
  return "storyboard_out";
}

std::vector<ShotPrompt> shot_prompts(const ShotPromptSet& set) {
  std::vector<ShotPrompt> shots;
  for (const auto& setting : set.settings) shots.push_back({set.subject, setting, set.style});
  return shots;
}

int run_storyboard(const RunOptions& options) {
  const fs::path out = output_dir(options);
  try {
    fs::create_directories(out);
    fs::remove(out / "FAILED");

    const StoryboardConfig config = effective_config(options);
    const RunMode mode = options.mode.value_or(RunMode::refined);
    const std::string prompt_text = read_file(options.prompts);
    const auto sets = parse_prompts(prompt_text);
    const ShotPromptSet* chosen = &sets.front();
    if (options.set) {
      chosen = nullptr;
      for (const auto& s : sets)
        if (s.name == *options.set) chosen = &s;
      if (!chosen) throw ConfigError("prompt set '" + *options.set + "' not found in " + options.prompts.string());
    }

    const Storyboard board(config, shot_prompts(*chosen));
    nlohmann::ordered_json manifest;
    manifest["config"] = nlohmann::json(config.resolved());
    manifest["prompt_file"] = options.prompts.string();
    manifest["prompt_hash"] = hex64(fnv1a(prompt_text));
    manifest["prompt_set"] = chosen->name;
    manifest["prompts"] = chosen->full_prompts();
    manifest["seed"] = config.seed;
    manifest["mode"] = std::string(to_string(mode));
    manifest["rng_fingerprint"] = hex64(board.rng_fingerprint());
    nlohmann::ordered_json fingerprints = nlohmann::ordered_json::object();

    const VanillaRun vanilla = board.run_vanilla();
    save_tensor(out / "latents_vanilla.bin", vanilla.pass.latents);
    write_text(out / "cache_index.json", cache_index(vanilla.cache).dump(2) + "\n");
    fingerprints["vanilla"] = hex64(fnv1a(vanilla.pass.latents.data()));

    if (mode != RunMode::vanilla) {
      std::vector<const PassResult*> passes{&vanilla.pass};
      const PassResult consistent = board.run_consistent(vanilla.cache);
      save_tensor(out / "latents_consistent.bin", consistent.latents);
      fingerprints["consistent"] = hex64(fnv1a(consistent.latents.data()));
      passes.push_back(&consistent);

      std::optional<PassResult> refined;
      if (mode == RunMode::refined) {
        refined = board.run_refined(vanilla.cache, consistent);
        save_tensor(out / "latents_refined.bin", refined->latents);
        fingerprints["refined"] = hex64(fnv1a(refined->latents.data()));
        passes.push_back(&*refined);
      }

      std::ofstream audit(out / "audit.jsonl", std::ios::binary);
      if (!audit) throw Error("cannot write audit log");
      for (const PassResult* p : passes)
        for (const auto& rec : p->audit) audit << rec.to_json_line() << '\n';

      std::vector<MetricRow> rows;
      for (const PassResult* p : passes) add_pass_metrics(board, *p, out, rows);
      write_metrics_csv(out / "metrics.csv", rows);
      write_metrics_json(out / "metrics.json", rows);
    }

    manifest["fingerprints"] = fingerprints;
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "storyboard: error: " << e.what() << '\n';
    try {
      fs::create_directories(out);
      nlohmann::ordered_json failed{{"error", e.what()}};
      write_text(out / "FAILED", failed.dump() + "\n");
    } catch (const std::exception& inner) {
      std::cerr << "storyboard: could not write FAILED marker: " << inner.what() << '\n';
    }
    return 1;
  }
}

}  // namespace storyboard
