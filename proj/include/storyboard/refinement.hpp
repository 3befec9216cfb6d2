#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <tuple>
#include <vector>

#include "storyboard/tensor.hpp"

namespace storyboard {

// Per-patch nearest anchor feature for one target frame.
struct CorrespondenceMap {
  std::size_t target_shot = 0;
  std::size_t target_frame = 0;
  std::size_t source_shot = 0;
  std::size_t anchor_frames = 0;
  std::size_t anchor_patches = 0;
  // (frame, patch) in the anchor per target patch; unmatched patches hold (0, 0).
  std::vector<std::pair<std::size_t, std::size_t>> match;
  std::vector<float> score;
  std::vector<std::uint8_t> unmatched;  // zero-norm target features
  std::uint64_t id = 0;

  double mean_score() const;
};

// Argmax cosine over all F×P anchor features for each target patch; ties go to
// the lowest linear (frame, patch) index. target [P×d], anchor [F×P×d].
CorrespondenceMap build_correspondence(const Tensor& target, const Tensor& anchor);

// Inside the subject mask: o ← (1 − blend)·o_target + blend·o_anchor[match].
// Background patches are returned bit-unchanged.
Tensor inject_refinement(const Tensor& o_target, const Tensor& o_anchor, const CorrespondenceMap& map,
                         std::span<const std::uint8_t> mask, double blend);

// Correspondence maps shared by the conditional and unconditional passes of one
// denoising step. The conditional pass creates them, the unconditional pass
// must reuse the same objects.
class StepRefinementHandle {
 public:
  explicit StepRefinementHandle(int t) : t_(t) {}

  int t() const { return t_; }
  std::shared_ptr<const CorrespondenceMap> store(int layer, std::size_t shot, std::size_t frame,
                                                 CorrespondenceMap map);
  // Throws IntegrityError when the conditional pass did not record a map.
  std::shared_ptr<const CorrespondenceMap> fetch(int layer, std::size_t shot, std::size_t frame) const;
  bool contains(int layer, std::size_t shot, std::size_t frame) const;

 private:
  int t_;
  std::uint64_t next_id_ = 1;
  std::map<std::tuple<int, std::size_t, std::size_t>, std::shared_ptr<const CorrespondenceMap>> maps_;
};

}  // namespace storyboard
