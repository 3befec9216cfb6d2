#include <doctest.h>

#include <map>
#include <set>

#include "storyboard/errors.hpp"
#include "storyboard/pipeline.hpp"

using namespace storyboard;

namespace {

StoryboardConfig small_config() {
  StoryboardConfig c;
  c.sampler_steps = 10;
  c.model.layers = 2;
  c.model.patches_per_side = 4;
  c.model.channels = 8;
  c.model.frames = 4;
  return c;
}

std::vector<ShotPrompt> prompts(std::size_t n) {
  const char* settings[] = {"in a forest", "on a beach", "in the city", "on a mountain", "under the sea"};
  std::vector<ShotPrompt> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"a red fox", settings[i % 5], "watercolor"});
  return out;
}

Tensor shot_slice(const Tensor& latents, std::size_t s) { return latents.slice(s); }

}  // namespace

TEST_CASE("sampler timesteps") {
  CHECK(sampler_timesteps(1000, 4) == std::vector<int>{1000, 750, 500, 250, 0});
  CHECK(sampler_timesteps(10, 3) == std::vector<int>{10, 7, 3, 0});
  CHECK(sampler_timesteps(1000, 50).size() == 51);
  CHECK_THROWS_AS(sampler_timesteps(10, 11), ConfigError);
}

TEST_CASE("anchor topology") {
  const AttentionTopology t = anchor_topology(4, {0, 1});
  CHECK(t.visible[0] == std::vector<std::size_t>{0, 1});
  CHECK(t.visible[1] == std::vector<std::size_t>{0, 1});
  CHECK(t.visible[3] == std::vector<std::size_t>{0, 1, 3});
  CHECK_THROWS_AS(anchor_topology(2, {5}), ConfigError);
  CHECK_THROWS_AS(anchor_topology(2, {}), ConfigError);
}

TEST_CASE("vanilla pass caches every layer and step") {
  const Storyboard board(small_config(), prompts(2));
  const VanillaRun run = board.run_vanilla();
  CHECK(run.cache.size() == 10 * 2);
  CHECK(run.cache.seed_fingerprint == board.rng_fingerprint());
  CHECK(run.pass.audit.empty());
  CHECK(run.pass.latents.shape() == Shape{2, 4, 16, 8});
}

TEST_CASE("identical seeds give identical passes") {
  const Storyboard a(small_config(), prompts(2)), b(small_config(), prompts(2));
  const VanillaRun va = a.run_vanilla(), vb = b.run_vanilla();
  CHECK(bit_equal(va.pass.latents, vb.pass.latents));
  CHECK(bit_equal(va.cache, vb.cache));
  const PassResult ca = a.run_consistent(va.cache), cb = b.run_consistent(vb.cache);
  CHECK(bit_equal(ca.latents, cb.latents));
  CHECK(bit_equal(a.run_refined(va.cache, ca).latents, b.run_refined(vb.cache, cb).latents));

  StoryboardConfig other = small_config();
  other.seed = 1;
  const Storyboard c(other, prompts(2));
  CHECK_FALSE(bit_equal(c.run_vanilla().pass.latents, va.pass.latents));
  CHECK_THROWS_AS(c.run_consistent(va.cache), ReproducibilityError);
}

TEST_CASE("consistency mechanisms change the output") {
  const Storyboard board(small_config(), prompts(3));
  const VanillaRun v = board.run_vanilla();
  const PassResult c = board.run_consistent(v.cache);
  const PassResult r = board.run_refined(v.cache, c);
  CHECK_FALSE(bit_equal(v.pass.latents, c.latents));
  CHECK_FALSE(bit_equal(c.latents, r.latents));
  CHECK_THROWS_AS(board.run_refined(v.cache, v.pass), ConfigError);
}

TEST_CASE("sub-batch size does not change the output") {
  StoryboardConfig cfg = small_config();
  std::vector<Tensor> outs;
  for (int sb : {1, 3, 8, 0}) {
    cfg.sub_batch = sb;
    const Storyboard board(cfg, prompts(2));
    const VanillaRun v = board.run_vanilla();
    outs.push_back(board.run_refined(v.cache, board.run_consistent(v.cache)).latents);
  }
  for (const auto& o : outs) CHECK(bit_equal(o, outs.front()));
  cfg.sub_batch = 9;
  CHECK_THROWS_AS(Storyboard(cfg, prompts(2)), ConfigError);
}

TEST_CASE("empty windows reproduce the vanilla pass") {
  StoryboardConfig cfg = small_config();
  cfg.sdsa_window = Window::none();
  cfg.refine_window = Window::none();
  cfg.qflow_window = Window::none();
  const Storyboard board(cfg, prompts(3));
  const VanillaRun v = board.run_vanilla();
  const PassResult c = board.run_consistent(v.cache);
  CHECK(bit_equal(v.pass.latents, c.latents));
  CHECK(bit_equal(v.pass.latents, board.run_refined(v.cache, c).latents));
}

TEST_CASE("audit log follows the schedule windows") {
  const StoryboardConfig cfg = small_config();
  const Storyboard board(cfg, prompts(2));
  const VanillaRun v = board.run_vanilla();
  const PassResult c = board.run_consistent(v.cache);
  const PassResult r = board.run_refined(v.cache, c);
  CHECK(c.audit.size() == 10 * 2 * 2);
  std::set<int> vanilla_steps, sdsa_steps, refine_steps;
  for (const auto& rec : c.audit) {
    CHECK((rec.role == QueryRole::vanilla) == (rec.t >= 750));
    CHECK(rec.sdsa == cfg.sdsa_window.contains(rec.t));
    CHECK_FALSE(rec.refine);
    if (rec.role == QueryRole::vanilla) vanilla_steps.insert(rec.t);
    if (rec.sdsa) sdsa_steps.insert(rec.t);
  }
  for (const auto& rec : r.audit) {
    const bool expect = cfg.refine_window.contains(rec.t) && rec.layer == cfg.model.coarse();
    CHECK(rec.refine == expect);
    if (rec.refine) refine_steps.insert(rec.t);
  }
  CHECK(vanilla_steps == std::set<int>{800, 900, 1000});
  CHECK(sdsa_steps == std::set<int>{600, 700, 800, 900});
  CHECK(refine_steps == std::set<int>{600, 700, 800, 900});
  std::map<std::pair<int, int>, std::uint64_t> cond_ids;
  for (const auto& rec : r.audit)
    if (rec.refine && rec.branch == Branch::cond) cond_ids[{rec.t, rec.layer}] = rec.correspondence_id;
  for (const auto& rec : r.audit)
    if (rec.refine && rec.branch == Branch::uncond) CHECK(cond_ids.at({rec.t, rec.layer}) == rec.correspondence_id);
}

TEST_CASE("anchor shots ignore appended followers") {
  const StoryboardConfig cfg = small_config();
  std::vector<Tensor> anchors;
  for (std::size_t shots : {2u, 3u, 5u}) {
    const Storyboard board(cfg, prompts(shots));
    const VanillaRun v = board.run_vanilla();
    const PassResult r = board.run_refined(v.cache, board.run_consistent(v.cache));
    Tensor both({2, 4, 16, 8});
    both.set_slice(0, shot_slice(r.latents, 0));
    both.set_slice(1, shot_slice(r.latents, 1));
    anchors.push_back(both);
  }
  CHECK(bit_equal(anchors[0], anchors[1]));
  CHECK(bit_equal(anchors[0], anchors[2]));
}

TEST_CASE("single shot storyboards run") {
  const Storyboard board(small_config(), prompts(1));
  const VanillaRun v = board.run_vanilla();
  const PassResult r = board.run_refined(v.cache, board.run_consistent(v.cache));
  CHECK(r.latents.dim(0) == 1);
}

TEST_CASE("final masks are valid") {
  const Storyboard board(small_config(), prompts(2));
  const VanillaRun v = board.run_vanilla();
  CHECK(masks_valid(v.pass.final_masks));
}
