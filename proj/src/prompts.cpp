#include "storyboard/prompts.hpp"

#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "storyboard/errors.hpp"

namespace storyboard {

std::vector<std::string> ShotPromptSet::full_prompts() const {
  std::vector<std::string> out;
  out.reserve(settings.size());
  for (const auto& setting : settings) out.push_back(subject + " " + setting + ", " + style);
  return out;
}

namespace {

std::string required_string(const YAML::Node& entry, const std::string& set, const char* field) {
  const YAML::Node node = entry[field];
  if (!node || !node.IsScalar()) throw ParseError("prompt set '" + set + "': field '" + field + "' missing or not a string");
  std::string value = node.as<std::string>();
  if (value.empty()) throw ParseError("prompt set '" + set + "': field '" + field + "' is empty");
  return value;
}

}  // namespace

std::vector<ShotPromptSet> parse_prompts(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("prompt file: ") + e.what());
  }
  if (!root.IsMap()) throw ParseError("prompt file: top level must map set names to prompt sets");
  std::vector<ShotPromptSet> sets;
  for (const auto& kv : root) {
    ShotPromptSet set;
    set.name = kv.first.as<std::string>();
    const YAML::Node& entry = kv.second;
    if (!entry.IsMap()) throw ParseError("prompt set '" + set.name + "': expected a mapping");
    for (const auto& field : entry) {
      const std::string key = field.first.as<std::string>();
      if (key != "subject" && key != "style" && key != "settings") {
        throw ParseError("prompt set '" + set.name + "': unknown field '" + key + "'");
      }
    }
    set.subject = required_string(entry, set.name, "subject");
    set.style = required_string(entry, set.name, "style");
    const YAML::Node settings = entry["settings"];
    if (!settings || !settings.IsSequence()) {
      throw ParseError("prompt set '" + set.name + "': field 'settings' must be a list");
    }
    for (const auto& s : settings) {
      if (!s.IsScalar() || s.as<std::string>().empty()) {
        throw ParseError("prompt set '" + set.name + "': field 'settings' holds a non-string or empty entry");
      }
      set.settings.push_back(s.as<std::string>());
    }
    if (set.settings.empty()) throw ParseError("prompt set '" + set.name + "': field 'settings' is empty");
    sets.push_back(std::move(set));
  }
  return sets;
}

std::vector<ShotPromptSet> load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open prompt file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_prompts(buffer.str());
}

std::string serialize_prompts(const std::vector<ShotPromptSet>& sets) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  for (const auto& set : sets) {
    out << YAML::Key << set.name << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "subject" << YAML::Value << set.subject;
    out << YAML::Key << "style" << YAML::Value << set.style;
    out << YAML::Key << "settings" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : set.settings) out << s;
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace storyboard
