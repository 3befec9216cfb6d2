#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "storyboard/query_control.hpp"

namespace storyboard {

// Shape and weight seed of the attention-only toy denoiser.
struct ToyModelSpec {
  int layers = 4;
  int patches_per_side = 8;
  int channels = 16;
  int frames = 8;
  std::uint64_t weight_seed = 0;
  // Layer that runs on a 2×-pooled patch grid; defaults to layers / 2.
  std::optional<int> coarse_layer;

  int coarse() const { return coarse_layer.value_or(layers / 2); }
  std::size_t patches() const { return static_cast<std::size_t>(patches_per_side) * patches_per_side; }
  // Patch-grid side of a layer (the coarse layer halves it when the side is even).
  int layer_side(int layer) const;

  bool operator==(const ToyModelSpec&) const = default;
};

enum class RunMode { vanilla, consistent, refined };

std::string_view to_string(RunMode mode);
RunMode parse_run_mode(const std::string& text);

struct StoryboardConfig {
  int total_steps = 1000;
  int sampler_steps = 50;
  int t_pres = 750;
  Window sdsa_window{550, 950};
  Window refine_window{590, 950};
  // Q flow runs for t < t_pres inside this window; unset means [0, t_pres − 1].
  std::optional<Window> qflow_window;
  double q_dropout = 0.0;
  int keyframe_spacing = 4;
  std::vector<int> anchors{0, 1};
  std::uint64_t seed = 0;
  // Work items per attention chunk; 0 processes every (shot, frame) at once.
  int sub_batch = 0;
  ToyModelSpec model;

  // Unset: every layer takes Q flow, refinement runs on the coarse layer only.
  std::optional<std::vector<int>> injection_layers;
  std::optional<std::vector<int>> refine_layers;
  double refine_blend = 0.8;
  double guidance_scale = 1.0;
  BlendWeight blend_weight = BlendWeight::sigmoid;
  bool middle_frame_attention = false;
  std::string segmenter = "channel_energy";

  // Metric / preview settings.
  double flow_threshold = 1.0;
  int flow_radius = 4;
  int preview_scale = 4;

  Window effective_qflow_window() const { return qflow_window.value_or(Window{0, t_pres - 1}); }
  std::vector<int> effective_injection_layers() const;
  std::vector<int> effective_refine_layers() const;
  // Anchors clipped to the shot count (the default names two anchors).
  std::vector<int> effective_anchors(std::size_t shots) const;

  // Fills every optional with its effective value.
  StoryboardConfig resolved() const;
  // Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const StoryboardConfig&) const = default;
};

void to_json(nlohmann::json& j, const Window& w);
void from_json(const nlohmann::json& j, Window& w);
void to_json(nlohmann::json& j, const ToyModelSpec& m);
void from_json(const nlohmann::json& j, ToyModelSpec& m);
void to_json(nlohmann::json& j, const StoryboardConfig& c);
void from_json(const nlohmann::json& j, StoryboardConfig& c);

// Reads a YAML (or JSON, which is valid YAML) config file. Missing keys keep
// their defaults; unknown keys are rejected.
StoryboardConfig load_config(const std::filesystem::path& path);

}  // namespace storyboard
