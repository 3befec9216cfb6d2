#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "storyboard/attention.hpp"
#include "storyboard/config.hpp"
#include "storyboard/query_control.hpp"
#include "storyboard/subject_mask.hpp"
#include "storyboard/tensor.hpp"
#include "storyboard/toy_model.hpp"

namespace storyboard {

// Sampler timesteps t_k = round(T·(1 − k/steps)) for k = 0..steps; the last is 0.
std::vector<int> sampler_timesteps(int total_steps, int sampler_steps);

// Anchors see every anchor; other shots see themselves and the anchors.
AttentionTopology anchor_topology(std::size_t shots, const std::vector<int>& anchors);

struct PassResult {
  RunMode mode = RunMode::vanilla;
  Tensor latents;  // [S,F,P,C] at t = 0
  std::uint64_t rng_fingerprint = 0;
  std::vector<AuditRecord> audit;
  SubjectMaskSet final_masks;
};

struct VanillaRun {
  PassResult pass;
  FeatureCache cache;
};

// One storyboard: a batch of shots denoised together. The three passes share
// their initial latents and all random streams.
class Storyboard {
 public:
  Storyboard(StoryboardConfig config, std::vector<ShotPrompt> prompts,
             SegmenterRegistry segmenters = SegmenterRegistry::with_defaults());

  const StoryboardConfig& config() const { return config_; }
  const std::vector<ShotPrompt>& prompts() const { return prompts_; }
  const ToyDenoiser& model() const { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<int>& timesteps() const { return timesteps_; }
  std::size_t shots() const { return prompts_.size(); }

  // Per-shot seeded Gaussian latents [S,F,P,C]; a shot's noise does not depend
  // on how many shots share the batch.
  Tensor initial_noise() const;
  std::uint64_t rng_fingerprint() const { return fingerprint_; }

  // Pass 1: no consistency mechanisms; records every layer's queries.
  VanillaRun run_vanilla() const;
  // Pass 2: query injection and framewise SDSA.
  PassResult run_consistent(const FeatureCache& cache) const;
  // Pass 3: pass 2 plus refinement injection. Requires the consistent pass.
  PassResult run_refined(const FeatureCache& cache, const PassResult& consistent) const;

  // Classifier-free-guided noise estimate for one step with the given hooks.
  Tensor guided_noise(const Tensor& x, int t, DenoiserHooks& hooks) const;

  // Masks for latents [S,F,P,C] using the configured segmenter.
  SubjectMaskSet masks_for(const Tensor& x0_hat) const;

 private:
  PassResult sample(RunMode mode, const FeatureCache* cache, FeatureCache* record) const;

  StoryboardConfig config_;
  std::vector<ShotPrompt> prompts_;
  SegmenterRegistry segmenters_;
  NoiseSchedule schedule_;
  ToyDenoiser model_;
  std::vector<int> timesteps_;
  Tensor conditioning_;
  AttentionTopology topology_;
  std::uint64_t fingerprint_ = 0;
};

}  // namespace storyboard
