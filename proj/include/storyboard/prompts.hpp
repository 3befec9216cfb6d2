#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace storyboard {

// One storyboard: a shared subject and style, one setting per shot.
struct ShotPromptSet {
  std::string name;
  std::string subject;
  std::string style;
  std::vector<std::string> settings;

  // "<subject> <setting>, <style>" for each shot.
  std::vector<std::string> full_prompts() const;
  bool operator==(const ShotPromptSet&) const = default;
};

// YAML mapping of set name -> {subject, style, settings: [...]}, in file order.
std::vector<ShotPromptSet> parse_prompts(const std::string& yaml_text);
std::vector<ShotPromptSet> load_prompts(const std::filesystem::path& path);
std::string serialize_prompts(const std::vector<ShotPromptSet>& sets);

}  // namespace storyboard
