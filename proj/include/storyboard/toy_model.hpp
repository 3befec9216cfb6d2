#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "storyboard/attention.hpp"
#include "storyboard/config.hpp"
#include "storyboard/query_control.hpp"
#include "storyboard/subject_mask.hpp"
#include "storyboard/tensor.hpp"

namespace storyboard {

struct ShotPrompt {
  std::string subject;
  std::string setting;
  std::string style;

  std::string full() const { return subject + " " + setting + ", " + style; }
};

// Interception points inside every spatial attention layer. The defaults leave
// the network untouched.
class DenoiserHooks {
 public:
  virtual ~DenoiserHooks() = default;

  // Called with the live queries [S,F,P_l,d] before attention; may replace them.
  virtual QueryRole substitute_queries(int t, int layer, Branch branch, Tensor& q) {
    (void)t, (void)layer, (void)branch, (void)q;
    return QueryRole::consistent;
  }
  // Subject masks at this layer's patch grid to extend keys/values across shots,
  // or nullptr for per-frame attention.
  virtual const SubjectMaskSet* sdsa_masks(int t, int layer, Branch branch, SdsaOptions& options) {
    (void)t, (void)layer, (void)branch, (void)options;
    return nullptr;
  }
  // Called with the attention outputs [S,F,P_l,C] after W_O; may rewrite them.
  virtual void inject_outputs(int t, int layer, Branch branch, Tensor& o) {
    (void)t, (void)layer, (void)branch, (void)o;
  }
};

// Attention-only latent denoiser: per frame, a residual stack of spatial
// self-attention layers over patches, conditioned by an additive prompt bias.
// Predicts x0 internally and reports the equivalent noise estimate.
class ToyDenoiser {
 public:
  ToyDenoiser(ToyModelSpec spec, const NoiseSchedule& schedule);

  const ToyModelSpec& spec() const { return spec_; }
  const LayerWeights& layer_weights(int layer) const { return layers_.at(static_cast<std::size_t>(layer)); }

  // Deterministic prompt conditioning [S,F,P,C]: hashed token embeddings plus a
  // subject blob (subject channel 0) whose placement and drift depend on the setting.
  Tensor condition(const std::vector<ShotPrompt>& prompts) const;

  // Noise estimate for x [S,F,P,C] at timestep t. bias == nullptr runs the
  // unconditional branch.
  Tensor predict_noise(const Tensor& x, int t, const Tensor* bias, Branch branch, DenoiserHooks& hooks,
                       std::size_t sub_batch) const;

 private:
  ToyModelSpec spec_;
  NoiseSchedule schedule_;
  std::vector<LayerWeights> layers_;
  Tensor w_out_;
};

// Average-pools a square grid [side², C] by 2 in each direction.
Tensor pool2x(const Tensor& tokens, std::size_t side);
// Nearest-neighbour inverse of pool2x.
Tensor upsample2x(const Tensor& tokens, std::size_t side);

}  // namespace storyboard
