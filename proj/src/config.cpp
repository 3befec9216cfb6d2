#include "storyboard/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <yaml-cpp/yaml.h>

#include "storyboard/errors.hpp"

namespace storyboard {

int ToyModelSpec::layer_side(int layer) const {
  if (layer == coarse() && patches_per_side % 2 == 0 && patches_per_side >= 2) return patches_per_side / 2;
  return patches_per_side;
}

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::vanilla: return "vanilla";
    case RunMode::consistent: return "consistent";
    case RunMode::refined: return "refined";
  }
  return "unknown";
}

RunMode parse_run_mode(const std::string& text) {
  if (text == "vanilla") return RunMode::vanilla;
  if (text == "consistent") return RunMode::consistent;
  if (text == "refined") return RunMode::refined;
  throw ConfigError("unknown mode '" + text + "' (expected vanilla, consistent or refined)");
}

std::vector<int> StoryboardConfig::effective_injection_layers() const {
  if (injection_layers) return *injection_layers;
  std::vector<int> all(static_cast<std::size_t>(std::max(model.layers, 0)));
  for (int l = 0; l < model.layers; ++l) all[static_cast<std::size_t>(l)] = l;
  return all;
}

std::vector<int> StoryboardConfig::effective_refine_layers() const {
  return refine_layers.value_or(std::vector<int>{model.coarse()});
}

std::vector<int> StoryboardConfig::effective_anchors(std::size_t shots) const {
  std::vector<int> out;
  for (int a : anchors)
    if (a >= 0 && static_cast<std::size_t>(a) < shots) out.push_back(a);
  if (out.empty() && !anchors.empty() && shots > 0) {
    throw ConfigError("anchors do not name any of the " + std::to_string(shots) + " shots");
  }
  return out;
}

StoryboardConfig StoryboardConfig::resolved() const {
  StoryboardConfig c = *this;
  c.qflow_window = effective_qflow_window();
  c.injection_layers = effective_injection_layers();
  c.refine_layers = effective_refine_layers();
  c.model.coarse_layer = model.coarse();
  return c;
}

void StoryboardConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  if (total_steps < 1) fail("total_steps must be positive");
  if (sampler_steps < 1 || sampler_steps > total_steps) fail("sampler_steps must lie in [1, total_steps]");
  if (t_pres < 0 || t_pres > total_steps) fail("t_pres must lie in [0, total_steps]");
  auto check_window = [&](const Window& w, const char* name) {
    if (!w.empty() && (w.lo < 0 || w.hi > total_steps)) fail(std::string(name) + " must lie within [0, total_steps]");
  };
  check_window(sdsa_window, "sdsa_window");
  check_window(refine_window, "refine_window");
  check_window(effective_qflow_window(), "qflow_window");
  if (!(q_dropout >= 0.0 && q_dropout <= 1.0)) fail("q_dropout must lie in [0, 1]");
  if (keyframe_spacing < 1) fail("keyframe_spacing must be positive");
  if (anchors.empty()) fail("anchors must not be empty");
  std::set<int> seen;
  for (int a : anchors) {
    if (a < 0) fail("anchor ids must be nonnegative");
    if (!seen.insert(a).second) fail("duplicate anchor id");
  }
  if (sub_batch < 0) fail("sub_batch must be positive (or 0 for a single chunk)");
  if (model.layers < 1 || model.patches_per_side < 1 || model.channels < 1 || model.frames < 1) {
    fail("model dimensions must be positive");
  }
  if (model.coarse() < 0 || model.coarse() >= model.layers) fail("model.coarse_layer outside [0, layers)");
  auto check_layers = [&](const std::vector<int>& layers, const char* name) {
    for (int l : layers)
      if (l < 0 || l >= model.layers) fail(std::string(name) + " names a layer outside the model");
  };
  check_layers(effective_injection_layers(), "injection_layers");
  check_layers(effective_refine_layers(), "refine_layers");
  if (!(refine_blend >= 0.0 && refine_blend <= 1.0)) fail("refine_blend must lie in [0, 1]");
  if (!std::isfinite(guidance_scale)) fail("guidance_scale must be finite");
  if (segmenter.empty()) fail("segmenter must be named");
  if (flow_radius < 0) fail("flow_radius must be nonnegative");
  if (preview_scale < 1) fail("preview_scale must be positive");
}

void to_json(nlohmann::json& j, const Window& w) { j = nlohmann::json::array({w.lo, w.hi}); }

void from_json(const nlohmann::json& j, Window& w) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("window must be a [lo, hi] pair");
  w.lo = j.at(0).get<int>();
  w.hi = j.at(1).get<int>();
}

void to_json(nlohmann::json& j, const ToyModelSpec& m) {
  j = nlohmann::json{{"layers", m.layers},
                     {"patches_per_side", m.patches_per_side},
                     {"channels", m.channels},
                     {"frames", m.frames},
                     {"weight_seed", m.weight_seed}};
  if (m.coarse_layer) j["coarse_layer"] = *m.coarse_layer;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a mapping");
  for (const auto& item : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; });
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T value{};
  read_if(j, key, value);
  out = value;
}

}  // namespace

void from_json(const nlohmann::json& j, ToyModelSpec& m) {
  reject_unknown(j, {"layers", "patches_per_side", "channels", "frames", "weight_seed", "coarse_layer"}, "model");
  read_if(j, "layers", m.layers);
  read_if(j, "patches_per_side", m.patches_per_side);
  read_if(j, "channels", m.channels);
  read_if(j, "frames", m.frames);
  read_if(j, "weight_seed", m.weight_seed);
  read_if(j, "coarse_layer", m.coarse_layer);
}

void to_json(nlohmann::json& j, const StoryboardConfig& c) {
  j = nlohmann::json{{"T", c.total_steps},
                     {"sampler_steps", c.sampler_steps},
                     {"t_pres", c.t_pres},
                     {"sdsa_window", c.sdsa_window},
                     {"refine_window", c.refine_window},
                     {"q_dropout", c.q_dropout},
                     {"keyframe_spacing", c.keyframe_spacing},
                     {"anchors", c.anchors},
                     {"seed", c.seed},
                     {"sub_batch", c.sub_batch},
                     {"model", c.model},
                     {"refine_blend", c.refine_blend},
                     {"guidance_scale", c.guidance_scale},
                     {"blend_weight", c.blend_weight == BlendWeight::sigmoid ? "sigmoid" : "linear"},
                     {"middle_frame_attention", c.middle_frame_attention},
                     {"segmenter", c.segmenter},
                     {"flow_threshold", c.flow_threshold},
                     {"flow_radius", c.flow_radius},
                     {"preview_scale", c.preview_scale}};
  if (c.qflow_window) j["qflow_window"] = *c.qflow_window;
  if (c.injection_layers) j["injection_layers"] = *c.injection_layers;
  if (c.refine_layers) j["refine_layers"] = *c.refine_layers;
}

void from_json(const nlohmann::json& j, StoryboardConfig& c) {
  reject_unknown(j,
                 {"T", "sampler_steps", "t_pres", "sdsa_window", "refine_window", "qflow_window", "q_dropout",
                  "keyframe_spacing", "anchors", "seed", "sub_batch", "model", "injection_layers", "refine_layers",
                  "refine_blend", "guidance_scale", "blend_weight", "middle_frame_attention", "segmenter",
                  "flow_threshold", "flow_radius", "preview_scale"},
                 "config");
  read_if(j, "T", c.total_steps);
  read_if(j, "sampler_steps", c.sampler_steps);
  read_if(j, "t_pres", c.t_pres);
  read_if(j, "sdsa_window", c.sdsa_window);
  read_if(j, "refine_window", c.refine_window);
  read_if(j, "qflow_window", c.qflow_window);
  read_if(j, "q_dropout", c.q_dropout);
  read_if(j, "keyframe_spacing", c.keyframe_spacing);
  read_if(j, "anchors", c.anchors);
  read_if(j, "seed", c.seed);
  read_if(j, "sub_batch", c.sub_batch);
  if (j.contains("model")) {
    ToyModelSpec m = c.model;
    from_json(j.at("model"), m);
    c.model = m;
  }
  read_if(j, "injection_layers", c.injection_layers);
  read_if(j, "refine_layers", c.refine_layers);
  read_if(j, "refine_blend", c.refine_blend);
  read_if(j, "guidance_scale", c.guidance_scale);
  if (j.contains("blend_weight")) {
    const std::string w = j.at("blend_weight").get<std::string>();
    if (w == "sigmoid") {
      c.blend_weight = BlendWeight::sigmoid;
    } else if (w == "linear") {
      c.blend_weight = BlendWeight::linear;
    } else {
      throw ConfigError("blend_weight must be 'sigmoid' or 'linear'");
    }
  }
  read_if(j, "middle_frame_attention", c.middle_frame_attention);
  read_if(j, "segmenter", c.segmenter);
  read_if(j, "flow_threshold", c.flow_threshold);
  read_if(j, "flow_radius", c.flow_radius);
  read_if(j, "preview_scale", c.preview_scale);
}

namespace {

nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      nlohmann::json obj = nlohmann::json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: {
      const std::string text = node.Scalar();
      if (node.Tag() == "!") return text;  // quoted scalar
      long long i;
      if (YAML::convert<long long>::decode(node, i)) return i;
      double d;
      if (YAML::convert<double>::decode(node, d)) return d;
      bool b;
      if (YAML::convert<bool>::decode(node, b)) return b;
      return text;
    }
  }
  return nullptr;
}

}  // namespace

StoryboardConfig load_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  StoryboardConfig config;
  if (root.IsNull()) return config;
  from_json(yaml_to_json(root), config);
  config.validate();
  return config;
}

}  // namespace storyboard
