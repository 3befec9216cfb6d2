#include "storyboard/refinement.hpp"

#include <numeric>

#include "storyboard/errors.hpp"

namespace storyboard {

double CorrespondenceMap::mean_score() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < score.size(); ++p) {
    if (unmatched[p]) continue;
    sum += score[p];
    ++n;
  }
  return n ? sum / static_cast<double>(n) : -1.0;
}

CorrespondenceMap build_correspondence(const Tensor& target, const Tensor& anchor) {
  if (anchor.rank() != 3 || anchor.dim(0) == 0 || anchor.dim(1) == 0) {
    throw ConfigError("build_correspondence: empty anchor set " + shape_to_string(anchor.shape()));
  }
  if (target.rank() != 2 || target.dim(1) != anchor.dim(2)) {
    throw DimensionError("build_correspondence: target " + shape_to_string(target.shape()) + " vs anchor " +
                         shape_to_string(anchor.shape()));
  }
  const std::size_t patches = target.dim(0), d = target.dim(1);
  const std::size_t frames = anchor.dim(0), anchor_patches = anchor.dim(1);
  const std::size_t candidates = frames * anchor_patches;

  std::vector<double> norms(candidates);
  for (std::size_t c = 0; c < candidates; ++c) norms[c] = l2_norm(anchor.data().subspan(c * d, d));

  CorrespondenceMap map;
  map.anchor_frames = frames;
  map.anchor_patches = anchor_patches;
  map.match.assign(patches, {0, 0});
  map.score.assign(patches, 0.0f);
  map.unmatched.assign(patches, 0);
  for (std::size_t p = 0; p < patches; ++p) {
    const auto query = target.data().subspan(p * d, d);
    const double qn = l2_norm(query);
    if (qn == 0.0) {
      map.unmatched[p] = 1;
      continue;
    }
    std::size_t best = 0;
    double best_sim = 0.0;
    for (std::size_t c = 0; c < candidates; ++c) {
      const double sim = cosine_sim_with_norms(query, anchor.data().subspan(c * d, d), qn, norms[c]);
      if (c == 0 || sim > best_sim) {
        best = c;
        best_sim = sim;
      }
    }
    map.match[p] = {best / anchor_patches, best % anchor_patches};
    map.score[p] = static_cast<float>(best_sim);
  }
  return map;
}

Tensor inject_refinement(const Tensor& o_target, const Tensor& o_anchor, const CorrespondenceMap& map,
                         std::span<const std::uint8_t> mask, double blend) {
  if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("inject_refinement: blend outside [0, 1]");
  if (o_target.rank() != 2 || o_anchor.rank() != 3 || o_anchor.dim(2) != o_target.dim(1)) {
    throw DimensionError("inject_refinement: target " + shape_to_string(o_target.shape()) + " vs anchor " +
                         shape_to_string(o_anchor.shape()));
  }
  const std::size_t patches = o_target.dim(0), d = o_target.dim(1);
  if (map.match.size() != patches || map.anchor_frames != o_anchor.dim(0) ||
      map.anchor_patches != o_anchor.dim(1)) {
    throw IntegrityError("inject_refinement: correspondence map was built for a different anchor or target");
  }
  if (mask.size() != patches) throw DimensionError("inject_refinement: mask length does not match patches");

  Tensor out = o_target;
  for (std::size_t p = 0; p < patches; ++p) {
    if (!mask[p] || map.unmatched[p]) continue;
    const auto [f, q] = map.match[p];
    const float* src = o_anchor.data().data() + (f * map.anchor_patches + q) * d;
    float* dst = out.data().data() + p * d;
    for (std::size_t c = 0; c < d; ++c) {
      dst[c] = static_cast<float>((1.0 - blend) * dst[c] + blend * src[c]);
    }
  }
  return out;
}

std::shared_ptr<const CorrespondenceMap> StepRefinementHandle::store(int layer, std::size_t shot, std::size_t frame,
                                                                     CorrespondenceMap map) {
  const auto key = std::make_tuple(layer, shot, frame);
  if (maps_.count(key)) throw IntegrityError("refinement: map for this step/layer/frame already stored");
  map.id = next_id_++ | (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t_)) << 32);
  auto ptr = std::make_shared<const CorrespondenceMap>(std::move(map));
  maps_.emplace(key, ptr);
  return ptr;
}

std::shared_ptr<const CorrespondenceMap> StepRefinementHandle::fetch(int layer, std::size_t shot,
                                                                     std::size_t frame) const {
  auto it = maps_.find(std::make_tuple(layer, shot, frame));
  if (it == maps_.end()) {
    throw IntegrityError("refinement: unconditional pass at t=" + std::to_string(t_) + " layer=" +
                         std::to_string(layer) + " has no map from the conditional pass");
  }
  return it->second;
}

bool StepRefinementHandle::contains(int layer, std::size_t shot, std::size_t frame) const {
  return maps_.count(std::make_tuple(layer, shot, frame)) != 0;
}

}  // namespace storyboard
