#include "storyboard/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>

#include "storyboard/errors.hpp"
#include "storyboard/refinement.hpp"
#include "storyboard/rng.hpp"

namespace storyboard {

std::vector<int> sampler_timesteps(int total_steps, int sampler_steps) {
  if (total_steps < 1 || sampler_steps < 1 || sampler_steps > total_steps) {
    throw ConfigError("sampler_timesteps: need 1 <= sampler_steps <= T");
  }
  std::vector<int> ts(static_cast<std::size_t>(sampler_steps) + 1);
  for (int k = 0; k <= sampler_steps; ++k) {
    const double frac = 1.0 - static_cast<double>(k) / sampler_steps;
    ts[static_cast<std::size_t>(k)] = static_cast<int>(std::lround(total_steps * frac));
  }
  return ts;
}

AttentionTopology anchor_topology(std::size_t shots, const std::vector<int>& anchors) {
  if (anchors.empty()) throw ConfigError("anchor_topology: at least one anchor is required");
  std::vector<std::uint8_t> is_anchor(shots, 0);
  for (int a : anchors) {
    if (a < 0 || static_cast<std::size_t>(a) >= shots) {
      throw ConfigError("anchor_topology: anchor " + std::to_string(a) + " is not one of the " +
                        std::to_string(shots) + " shots");
    }
    is_anchor[static_cast<std::size_t>(a)] = 1;
  }
  AttentionTopology topo;
  topo.visible.resize(shots);
  for (std::size_t i = 0; i < shots; ++i)
    for (std::size_t j = 0; j < shots; ++j)
      if (j == i || is_anchor[j]) topo.visible[i].push_back(j);
  return topo;
}

namespace {

class NoHooks : public DenoiserHooks {};

// Hooks active during one sampling pass.
class PassHooks : public DenoiserHooks {
 public:
  PassHooks(const StoryboardConfig& config, RunMode mode, const AttentionTopology& topology,
            const FeatureCache* cache, FeatureCache* record, const KeyframeIndex& keyframes,
            const QuerySchedule& schedule, std::vector<AuditRecord>& audit)
      : config_(config),
        mode_(mode),
        topology_(topology),
        cache_(cache),
        record_(record),
        keyframes_(keyframes),
        schedule_(schedule),
        audit_(audit),
        refine_layers_(config.effective_refine_layers()),
        anchors_(config.effective_anchors(topology.shots())) {}

  void begin_step(int t, const SubjectMaskSet* masks) {
    t_ = t;
    masks_ = masks;
    layer_masks_.clear();
    handle_ = std::make_unique<StepRefinementHandle>(t);
  }

  QueryRole substitute_queries(int t, int layer, Branch branch, Tensor& q) override {
    if (record_) {
      record_->put(t, layer, branch, q);
      return QueryRole::vanilla;
    }
    if (mode_ == RunMode::vanilla) return QueryRole::vanilla;
    QuerySelection sel = select_q(t, layer, branch, q, *cache_, keyframes_, schedule_);
    q = std::move(sel.query.q);
    AuditRecord rec;
    rec.pass = std::string(to_string(mode_));
    rec.branch = branch;
    rec.t = t;
    rec.layer = layer;
    rec.role = sel.query.role;
    rec.dropout_kept_fraction = sel.kept_fraction;
    audit_.push_back(rec);
    return sel.query.role;
  }

  const SubjectMaskSet* sdsa_masks(int t, int layer, Branch, SdsaOptions& options) override {
    if (mode_ == RunMode::vanilla || !config_.sdsa_window.contains(t)) return nullptr;
    if (!masks_) throw IntegrityError("SDSA active without subject masks");
    options.topology = &topology_;
    options.middle_frame = config_.middle_frame_attention;
    audit_.back().sdsa = true;
    return &layer_masks(layer);
  }

  void inject_outputs(int t, int layer, Branch branch, Tensor& o) override {
    if (mode_ != RunMode::refined || !config_.refine_window.contains(t)) return;
    if (std::find(refine_layers_.begin(), refine_layers_.end(), layer) == refine_layers_.end()) return;
    if (!masks_) throw IntegrityError("refinement active without subject masks");
    const SubjectMaskSet& masks = layer_masks(layer);
    const Tensor snapshot = o;
    const std::size_t shots = o.dim(0), frames = o.dim(1);
    std::uint64_t ids = 0;
    for (std::size_t s = 0; s < shots; ++s) {
      std::vector<std::size_t> sources;
      for (int a : anchors_)
        if (static_cast<std::size_t>(a) != s) sources.push_back(static_cast<std::size_t>(a));
      if (sources.empty()) continue;
      const Tensor target_shot = snapshot.slice(s);
      Tensor refined_shot = target_shot;
      for (std::size_t f = 0; f < frames; ++f) {
        std::shared_ptr<const CorrespondenceMap> map;
        if (branch == Branch::cond) {
          std::optional<CorrespondenceMap> best;
          for (std::size_t a : sources) {
            CorrespondenceMap candidate = build_correspondence(target_shot.slice(f), snapshot.slice(a));
            candidate.target_shot = s;
            candidate.target_frame = f;
            candidate.source_shot = a;
            if (!best || candidate.mean_score() > best->mean_score()) best = std::move(candidate);
          }
          map = handle_->store(layer, s, f, std::move(*best));
        } else {
          map = handle_->fetch(layer, s, f);
        }
        const Tensor out = inject_refinement(target_shot.slice(f), snapshot.slice(map->source_shot), *map,
                                             masks.mask(s, f), config_.refine_blend);
        refined_shot.set_slice(f, out);
        ids = mix_seed({ids, map->id});
      }
      o.set_slice(s, refined_shot);
    }
    audit_.back().refine = true;
    audit_.back().correspondence_id = ids;
  }

 private:
  const SubjectMaskSet& layer_masks(int layer) {
    const std::size_t side = static_cast<std::size_t>(config_.model.layer_side(layer));
    auto it = layer_masks_.find(side);
    if (it == layer_masks_.end()) {
      const std::size_t full = static_cast<std::size_t>(config_.model.patches_per_side);
      it = layer_masks_.emplace(side, resample_masks(*masks_, full, side)).first;
    }
    return it->second;
  }

  const StoryboardConfig& config_;
  RunMode mode_;
  const AttentionTopology& topology_;
  const FeatureCache* cache_;
  FeatureCache* record_;
  const KeyframeIndex& keyframes_;
  const QuerySchedule& schedule_;
  std::vector<AuditRecord>& audit_;
  std::vector<int> refine_layers_;
  std::vector<int> anchors_;

  int t_ = 0;
  const SubjectMaskSet* masks_ = nullptr;
  std::map<std::size_t, SubjectMaskSet> layer_masks_;
  std::unique_ptr<StepRefinementHandle> handle_;
};

}  // namespace

Storyboard::Storyboard(StoryboardConfig config, std::vector<ShotPrompt> prompts, SegmenterRegistry segmenters)
    : config_(std::move(config)),
      prompts_(std::move(prompts)),
      segmenters_(std::move(segmenters)),
      schedule_(NoiseSchedule::scaled_linear(config_.total_steps)),
      model_(config_.model, schedule_) {
  config_.validate();
  if (prompts_.empty()) throw ConfigError("storyboard needs at least one shot prompt");
  segmenters_.get(config_.segmenter);
  timesteps_ = sampler_timesteps(config_.total_steps, config_.sampler_steps);
  conditioning_ = model_.condition(prompts_);
  topology_ = anchor_topology(shots(), config_.effective_anchors(shots()));
  const std::size_t items = shots() * static_cast<std::size_t>(config_.model.frames);
  if (static_cast<std::size_t>(config_.sub_batch) > items) {
    throw ConfigError("sub_batch " + std::to_string(config_.sub_batch) + " exceeds the " + std::to_string(items) +
                      " (shot, frame) work items");
  }

  const Tensor noise = initial_noise();
  std::uint64_t h = fnv1a(noise.data(), mix_seed({config_.seed}));
  for (int t : timesteps_) h = mix_seed({h, static_cast<std::uint64_t>(t)});
  fingerprint_ = h;
}

Tensor Storyboard::initial_noise() const {
  const std::size_t frames = static_cast<std::size_t>(config_.model.frames);
  const std::size_t patches = config_.model.patches();
  const std::size_t channels = static_cast<std::size_t>(config_.model.channels);
  Tensor x({shots(), frames, patches, channels});
  for (std::size_t s = 0; s < shots(); ++s) {
    SeededRng rng(mix_seed({config_.seed, 0x6e6f697365ull, s}));
    for (float& v : x.sub(s)) v = static_cast<float>(rng.normal());
  }
  return x;
}

Tensor Storyboard::guided_noise(const Tensor& x, int t, DenoiserHooks& hooks) const {
  const std::size_t chunk = static_cast<std::size_t>(config_.sub_batch);
  const Tensor cond = model_.predict_noise(x, t, &conditioning_, Branch::cond, hooks, chunk);
  const Tensor uncond = model_.predict_noise(x, t, nullptr, Branch::uncond, hooks, chunk);
  Tensor eps(x.shape());
  const double g = config_.guidance_scale;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    eps[i] = static_cast<float>(uncond[i] + g * (static_cast<double>(cond[i]) - uncond[i]));
  }
  return eps;
}

SubjectMaskSet Storyboard::masks_for(const Tensor& x0_hat) const {
  std::vector<std::string> texts;
  for (const auto& p : prompts_) texts.push_back(p.full());
  return compute_subject_masks(x0_hat, texts, segmenters_.get(config_.segmenter));
}

PassResult Storyboard::sample(RunMode mode, const FeatureCache* cache, FeatureCache* record) const {
  if (mode != RunMode::vanilla) {
    if (!cache) throw ConfigError(std::string(to_string(mode)) + " pass requires the vanilla feature cache");
    if (cache->seed_fingerprint != fingerprint_) {
      throw ReproducibilityError("feature cache was recorded with different random generators (fingerprint " +
                                 std::to_string(cache->seed_fingerprint) + " vs " + std::to_string(fingerprint_) + ")");
    }
  }
  const KeyframeIndex keyframes =
      KeyframeIndex::make(static_cast<std::size_t>(config_.model.frames), static_cast<std::size_t>(config_.keyframe_spacing));
  QuerySchedule qs;
  qs.total_steps = config_.total_steps;
  qs.t_pres = config_.t_pres;
  qs.flow_window = config_.effective_qflow_window();
  qs.injection_layers = config_.effective_injection_layers();
  qs.keyframe_spacing = static_cast<std::size_t>(config_.keyframe_spacing);
  qs.weight = config_.blend_weight;
  qs.dropout = config_.q_dropout;
  qs.seed = config_.seed;

  PassResult result;
  result.mode = mode;
  result.rng_fingerprint = fingerprint_;
  PassHooks hooks(config_, mode, topology_, cache, record, keyframes, qs, result.audit);

  Tensor x = initial_noise();
  std::optional<Tensor> prev_x0;
  for (std::size_t k = 0; k + 1 < timesteps_.size(); ++k) {
    const int t = timesteps_[k], t_prev = timesteps_[k + 1];
    const bool need_masks = mode != RunMode::vanilla &&
                            (config_.sdsa_window.contains(t) || (mode == RunMode::refined && config_.refine_window.contains(t)));
    SubjectMaskSet masks;
    if (need_masks) {
      if (!prev_x0) {
        NoHooks probe;
        prev_x0 = estimate_x0(x, guided_noise(x, t, probe), t, schedule_);
      }
      masks = masks_for(*prev_x0);
    }
    hooks.begin_step(t, need_masks ? &masks : nullptr);
    const Tensor eps = guided_noise(x, t, hooks);
    Tensor x0 = estimate_x0(x, eps, t, schedule_);
    const double ab_prev = schedule_.alpha_bar(t_prev);
    const double signal = std::sqrt(ab_prev), noise = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = static_cast<float>(signal * x0[i] + noise * eps[i]);
    }
    prev_x0 = std::move(x0);
  }
  result.latents = std::move(x);
  result.final_masks = masks_for(result.latents);
  return result;
}

VanillaRun Storyboard::run_vanilla() const {
  VanillaRun run;
  run.cache.seed_fingerprint = fingerprint_;
  run.pass = sample(RunMode::vanilla, nullptr, &run.cache);
  return run;
}

PassResult Storyboard::run_consistent(const FeatureCache& cache) const {
  return sample(RunMode::consistent, &cache, nullptr);
}

PassResult Storyboard::run_refined(const FeatureCache& cache, const PassResult& consistent) const {
  if (consistent.mode != RunMode::consistent) {
    throw ConfigError("refined pass must follow a consistent pass");
  }
  if (consistent.rng_fingerprint != fingerprint_) {
    throw ReproducibilityError("consistent pass was produced with different random generators");
  }
  return sample(RunMode::refined, &cache, nullptr);
}

}  // namespace storyboard
