#include "storyboard/attention.hpp"

#include <algorithm>
#include <cmath>

#include "storyboard/errors.hpp"

namespace storyboard {

std::string_view to_string(QueryRole role) {
  switch (role) {
    case QueryRole::vanilla: return "vanilla";
    case QueryRole::consistent: return "consistent";
    case QueryRole::flow: return "flow";
  }
  return "unknown";
}

void AttnFeatures::validate() const {
  if (q.rank() != 4 || k.shape() != q.shape() || v.rank() != 4) {
    throw DimensionError("AttnFeatures: q " + shape_to_string(q.shape()) + ", k " +
                         shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  if (v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1) || v.dim(2) != q.dim(2) || q.dim(3) == 0) {
    throw DimensionError("AttnFeatures: v " + shape_to_string(v.shape()) + " does not match q " +
                         shape_to_string(q.shape()));
  }
}

AttnMask AttnMask::all_allowed(std::size_t rows, std::size_t cols) {
  return AttnMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1), MaskProvenance::self_ones};
}

Tensor attention_weights(const Tensor& q, const Tensor& k, const AttnMask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: q " + shape_to_string(q.shape()) + " vs k " + shape_to_string(k.shape()));
  }
  const std::size_t rows = q.dim(0), cols = k.dim(0), d = q.dim(1);
  if (mask && (mask->rows != rows || mask->cols != cols)) {
    throw DimensionError("attention: mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                         " vs logits " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor logits({rows, cols});
  const float* pq = q.data().data();
  const float* pk = k.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask && !mask->at(i, j)) {
        logits[i * cols + j] = kMaskedLogit;
        continue;
      }
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(pq[i * d + c]) * pk[j * d + c];
      logits[i * cols + j] = static_cast<float>(acc * scale);
    }
  }
  Tensor weights = softmax_rows(logits);
  if (mask) {
    for (std::size_t i = 0; i < rows * cols; ++i)
      if (!mask->allowed[i]) weights[i] = 0.0f;
  }
  return weights;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask* mask) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) {
    throw DimensionError("attention: k " + shape_to_string(k.shape()) + " vs v " + shape_to_string(v.shape()));
  }
  return matmul(attention_weights(q, k, mask), v);
}

SelfAttentionResult self_attention(const Tensor& x, const LayerWeights& weights) {
  SelfAttentionResult r;
  r.q = matmul(x, weights.w_q);
  r.k = matmul(x, weights.w_k);
  r.v = matmul(x, weights.w_v);
  r.o = matmul(masked_attention(r.q, r.k, r.v), weights.w_o);
  return r;
}

AttentionTopology AttentionTopology::full(std::size_t shots) {
  AttentionTopology topo;
  topo.visible.resize(shots);
  for (std::size_t i = 0; i < shots; ++i)
    for (std::size_t j = 0; j < shots; ++j) topo.visible[i].push_back(j);
  return topo;
}

namespace {

Tensor frame_block(const Tensor& t, std::size_t shot, std::size_t frame) {
  const std::size_t frames = t.dim(1), patches = t.dim(2), d = t.dim(3);
  const std::size_t begin = (shot * frames + frame) * patches * d;
  return Tensor({patches, d}, std::vector<float>(t.data().begin() + begin, t.data().begin() + begin + patches * d));
}

}  // namespace

ExtendedKeys build_extended_keys(const AttnFeatures& feats, const SubjectMaskSet& masks,
                                 std::size_t frame, std::size_t shot, const SdsaOptions& options) {
  feats.validate();
  const std::size_t shots = feats.shots(), frames = feats.frames(), patches = feats.patches();
  if (shot >= shots || frame >= frames) throw RangeError("framewise_sdsa: (shot, frame) out of range");
  if (masks.shots != shots || masks.frames != frames || masks.patches != patches) {
    throw DimensionError("framewise_sdsa: masks do not cover every (shot, frame, patch)");
  }
  std::vector<std::size_t> visible;
  if (options.topology) {
    if (options.topology->shots() != shots) throw ConfigError("framewise_sdsa: topology shot count mismatch");
    visible = options.topology->visible[shot];
    if (std::find(visible.begin(), visible.end(), shot) == visible.end()) {
      throw ConfigError("framewise_sdsa: topology must let a shot see itself");
    }
  } else {
    for (std::size_t j = 0; j < shots; ++j) visible.push_back(j);
  }

  ExtendedKeys ext;
  for (std::size_t j : visible) ext.blocks.emplace_back(j, frame);
  const std::size_t middle = frames / 2;
  if (options.middle_frame && middle != frame) {
    for (std::size_t j : visible) ext.blocks.emplace_back(j, middle);
  }

  const std::size_t d = feats.head_dim(), dv = feats.v.dim(3);
  const std::size_t cols = ext.blocks.size() * patches;
  ext.k = Tensor({cols, d});
  ext.v = Tensor({cols, dv});
  ext.mask = AttnMask{patches, cols, std::vector<std::uint8_t>(patches * cols, 0), MaskProvenance::subject_mask};
  for (std::size_t b = 0; b < ext.blocks.size(); ++b) {
    const auto [j, g] = ext.blocks[b];
    const Tensor kb = frame_block(feats.k, j, g);
    const Tensor vb = frame_block(feats.v, j, g);
    std::copy(kb.data().begin(), kb.data().end(), ext.k.data().begin() + b * patches * d);
    std::copy(vb.data().begin(), vb.data().end(), ext.v.data().begin() + b * patches * dv);
    const bool own_frame = (j == shot && g == frame);
    auto subject = masks.mask(j, g);
    for (std::size_t r = 0; r < patches; ++r)
      for (std::size_t p = 0; p < patches; ++p)
        ext.mask.allowed[r * cols + b * patches + p] = own_frame ? 1 : subject[p];
  }
  if (ext.blocks.size() == 1) ext.mask.provenance = MaskProvenance::self_ones;
  return ext;
}

Tensor framewise_sdsa(const AttnFeatures& feats, const SubjectMaskSet& masks, std::size_t frame,
                      std::size_t shot, const SdsaOptions& options) {
  const ExtendedKeys ext = build_extended_keys(feats, masks, frame, shot, options);
  return masked_attention(frame_block(feats.q, shot, frame), ext.k, ext.v, &ext.mask);
}

std::vector<std::size_t> chunk_plan(std::size_t total, std::size_t sub_batch) {
  if (sub_batch == 0) throw ConfigError("sub_batch must be positive");
  std::vector<std::size_t> chunks;
  for (std::size_t begin = 0; begin < total; begin += sub_batch) chunks.push_back(std::min(sub_batch, total - begin));
  return chunks;
}

Tensor sub_batched_attention(const AttnFeatures& feats, const SubjectMaskSet* masks, std::size_t sub_batch,
                             const SdsaOptions& options, std::vector<std::size_t>* chunks_out) {
  feats.validate();
  const std::size_t shots = feats.shots(), frames = feats.frames(), patches = feats.patches();
  const std::size_t dv = feats.v.dim(3);
  const std::size_t total = shots * frames;
  if (sub_batch == 0 || sub_batch > total) {
    throw ConfigError("sub_batch " + std::to_string(sub_batch) + " outside [1, " + std::to_string(total) + "]");
  }
  const std::vector<std::size_t> chunks = chunk_plan(total, sub_batch);
  Tensor out({shots, frames, patches, dv});
  std::size_t item = 0;
  for (std::size_t chunk : chunks) {
    std::vector<Tensor> results;
    results.reserve(chunk);
    for (std::size_t n = 0; n < chunk; ++n, ++item) {
      const std::size_t s = item / frames, f = item % frames;
      if (masks) {
        results.push_back(framewise_sdsa(feats, *masks, f, s, options));
      } else {
        results.push_back(masked_attention(frame_block(feats.q, s, f), frame_block(feats.k, s, f),
                                           frame_block(feats.v, s, f)));
      }
    }
    const std::size_t first = item - chunk;
    for (std::size_t n = 0; n < chunk; ++n) {
      std::copy(results[n].data().begin(), results[n].data().end(),
                out.data().begin() + (first + n) * patches * dv);
    }
  }
  if (chunks_out) *chunks_out = chunks;
  return out;
}

}  // namespace storyboard
