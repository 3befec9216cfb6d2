#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "storyboard/subject_mask.hpp"
#include "storyboard/tensor.hpp"

namespace storyboard {

// Provenance of the queries that fed an attention call.
enum class QueryRole { vanilla, consistent, flow };

std::string_view to_string(QueryRole role);

struct LayerWeights {
  Tensor w_q;  // [d_model, d_k]
  Tensor w_k;  // [d_model, d_k]
  Tensor w_v;  // [d_model, d_k]
  Tensor w_o;  // [d_k, d_model]
};

// Per-layer Q/K/V for a batch, each shaped [shots, frames, patches, d_k].
struct AttnFeatures {
  Tensor q;
  Tensor k;
  Tensor v;
  int layer_id = 0;
  QueryRole role = QueryRole::consistent;

  std::size_t shots() const { return q.dim(0); }
  std::size_t frames() const { return q.dim(1); }
  std::size_t patches() const { return q.dim(2); }
  std::size_t head_dim() const { return q.dim(3); }
  void validate() const;
};

enum class MaskProvenance { self_ones, subject_mask };

// allowed[query][key]; each row must keep at least one key.
struct AttnMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;
  MaskProvenance provenance = MaskProvenance::self_ones;

  static AttnMask all_allowed(std::size_t rows, std::size_t cols);
  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// softmax(q·kᵀ/√d_k + log mask)·v with masked weights forced to exactly 0.
// q [P×d], k [N×d], v [N×d_v]. A null mask allows every key.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask* mask = nullptr);

// The attention probabilities alone (same masking rules as masked_attention).
Tensor attention_weights(const Tensor& q, const Tensor& k, const AttnMask* mask = nullptr);

struct SelfAttentionResult {
  Tensor o;  // [P×d_model]
  Tensor q;  // [P×d_k]
  Tensor k;
  Tensor v;
};

// Spatial self-attention over the patches of one frame: O = (A·V)·W_O.
SelfAttentionResult self_attention(const Tensor& x, const LayerWeights& weights);

// visible[i] lists the shots whose keys shot i may read, ascending, self included.
struct AttentionTopology {
  std::vector<std::vector<std::size_t>> visible;

  static AttentionTopology full(std::size_t shots);
  std::size_t shots() const { return visible.size(); }
};

struct SdsaOptions {
  // Null means every shot sees every shot.
  const AttentionTopology* topology = nullptr;
  // Also attend the middle frame of each visible shot (T2V-Turbo-V2 variant).
  bool middle_frame = false;
};

// Extended keys/values for (shot, frame): the frame-f blocks of the visible
// shots in index order, plus middle-frame blocks when enabled.
struct ExtendedKeys {
  Tensor k;
  Tensor v;
  AttnMask mask;
  // (shot, frame) of each concatenated block, in order.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
};

ExtendedKeys build_extended_keys(const AttnFeatures& feats, const SubjectMaskSet& masks,
                                 std::size_t frame, std::size_t shot, const SdsaOptions& options = {});

// Framewise subject-driven self-attention output h_{shot,frame} = A⁺·V⁺ [P×d_k].
// Queries are read, never modified.
Tensor framewise_sdsa(const AttnFeatures& feats, const SubjectMaskSet& masks, std::size_t frame,
                      std::size_t shot, const SdsaOptions& options = {});

// Chunk sizes used when walking `total` work items `sub_batch` at a time.
std::vector<std::size_t> chunk_plan(std::size_t total, std::size_t sub_batch);

// Attention for every (shot, frame) in lexicographic order, sub_batch items at a
// time, gathered into [shots, frames, patches, d_k]. With masks == nullptr each
// frame attends only to itself. The result does not depend on sub_batch.
Tensor sub_batched_attention(const AttnFeatures& feats, const SubjectMaskSet* masks,
                             std::size_t sub_batch, const SdsaOptions& options = {},
                             std::vector<std::size_t>* chunks_out = nullptr);

}  // namespace storyboard
