#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "storyboard/errors.hpp"
#include "storyboard/prompts.hpp"
#include "storyboard/run_storyboard.hpp"

using namespace storyboard;
namespace fs = std::filesystem;

namespace {

const char* kPrompts = R"(fox:
  subject: "a red fox"
  style: "watercolor"
  settings:
    - "in a forest"
    - "on a beach"
    - "in the snow"
owl:
  subject: "a grey owl"
  style: "pencil sketch"
  settings: ["on a branch", "in flight"]
)";

const char* kSmallConfig = R"(sampler_steps: 8
model:
  layers: 2
  patches_per_side: 4
  channels: 8
  frames: 4
)";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("storyboard_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STORYBOARD_CLI) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

}  // namespace

TEST_CASE("prompt sets parse in file order") {
  const auto sets = parse_prompts(kPrompts);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].name == "fox");
  CHECK(sets[0].settings.size() == 3);
  CHECK(sets[0].full_prompts()[1] == "a red fox on a beach, watercolor");
  CHECK(sets[1].settings.size() == 2);
  CHECK(parse_prompts(serialize_prompts(sets)) == sets);
}

TEST_CASE("malformed prompt sets name the set and field") {
  try {
    parse_prompts("fox:\n  subject: a\n  style: b\n  settings: []\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("fox") != std::string::npos);
    CHECK(std::string(e.what()).find("settings") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_prompts("fox:\n  style: b\n  settings: [x]\n"), ParseError);
  CHECK_THROWS_AS(parse_prompts("fox:\n  subject: a\n  style: b\n  settings: [x]\n  mood: c\n"), ParseError);
  CHECK_THROWS_AS(parse_prompts("- a\n- b\n"), ParseError);
}

TEST_CASE("the bundled benchmark prompts hold five-shot sets") {
  const auto sets = load_prompts(fs::path(STORYBOARD_SOURCE_DIR) / "data" / "prompts.yaml");
  REQUIRE_FALSE(sets.empty());
  for (const auto& s : sets) CHECK(s.settings.size() == 5);
}

TEST_CASE("config files and flag precedence") {
  const fs::path dir = scratch("config");
  write(dir / "c.yaml", std::string(kSmallConfig) + "seed: 5\nt_pres: 700\n");
  RunOptions opt;
  opt.config = dir / "c.yaml";
  StoryboardConfig c = effective_config(opt);
  CHECK(c.seed == 5);
  CHECK(c.t_pres == 700);
  CHECK(c.sampler_steps == 8);
  CHECK(c.sdsa_window == Window{550, 950});
  opt.seed = 9;
  opt.t_pres = 800;
  opt.anchors = std::vector<int>{1};
  c = effective_config(opt);
  CHECK(c.seed == 9);
  CHECK(c.t_pres == 800);
  CHECK(c.anchors == std::vector<int>{1});

  write(dir / "bad.yaml", "sampler_step: 3\n");
  opt.config = dir / "bad.yaml";
  CHECK_THROWS_AS(effective_config(opt), ConfigError);
  opt.config.reset();
  opt.q_dropout = 2.0;
  CHECK_THROWS_AS(effective_config(opt), ConfigError);
}

TEST_CASE("config json round trip") {
  StoryboardConfig c;
  c.qflow_window = Window{100, 200};
  c.injection_layers = std::vector<int>{1, 2};
  c.blend_weight = BlendWeight::linear;
  const nlohmann::json j = c.resolved();
  StoryboardConfig back;
  from_json(j, back);
  CHECK(back == c.resolved());
}

TEST_CASE("cli vanilla mode writes only the cache and vanilla dump") {
  const fs::path dir = scratch("vanilla");
  write(dir / "p.yaml", kPrompts);
  write(dir / "c.yaml", kSmallConfig);
  const fs::path out = dir / "out";
  REQUIRE(run_cli("--config " + (dir / "c.yaml").string() + " --prompts " + (dir / "p.yaml").string() + " --out " +
                  out.string() + " --mode vanilla") == 0);
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(out)) names.insert(e.path().filename().string());
  CHECK(names == std::set<std::string>{"cache_index.json", "latents_vanilla.bin", "manifest.json"});
}

TEST_CASE("cli runs are byte reproducible and honour the environment default") {
  const fs::path dir = scratch("repro");
  write(dir / "p.yaml", kPrompts);
  write(dir / "c.yaml", kSmallConfig);
  const std::string base = "--config " + (dir / "c.yaml").string() + " --prompts " + (dir / "p.yaml").string();
  REQUIRE(run_cli(base + " --out " + (dir / "a").string() + " --set owl --seed 3") == 0);
  REQUIRE(run_cli(base + " --out " + (dir / "b").string() + " --set owl --seed 3") == 0);
  for (const char* f : {"latents_vanilla.bin", "latents_consistent.bin", "latents_refined.bin", "manifest.json"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["prompt_set"] == "owl");

  const std::string env_out = (dir / "env").string();
  const std::string cmd = "STORYBOARD_OUT=" + env_out + " " + STORYBOARD_CLI + " --mode vanilla " + base + " > /dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(fs::path(env_out) / "manifest.json"));
}

TEST_CASE("cli failures leave a FAILED marker") {
  const fs::path dir = scratch("fail");
  write(dir / "p.yaml", "fox:\n  subject: a\n  style: b\n  settings: []\n");
  const fs::path out = dir / "out";
  CHECK(run_cli("--prompts " + (dir / "p.yaml").string() + " --out " + out.string()) != 0);
  CHECK(fs::exists(out / "FAILED"));
  CHECK(run_cli("--prompts " + (dir / "p.yaml").string() + " --bogus 1") != 0);
}
