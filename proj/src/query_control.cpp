#include "storyboard/query_control.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "storyboard/errors.hpp"

namespace storyboard {

std::string_view to_string(Branch branch) { return branch == Branch::cond ? "cond" : "uncond"; }

void FeatureCache::put(int t, int layer, Branch branch, Tensor q) {
  Entry& entry = entries_[{t, layer}];
  Tensor& slot = branch == Branch::cond ? entry.cond : entry.uncond;
  if (!slot.empty()) {
    throw IntegrityError("feature cache entry (t=" + std::to_string(t) + ", layer=" + std::to_string(layer) +
                         ", " + std::string(to_string(branch)) + ") written twice");
  }
  slot = std::move(q);
}

const Tensor& FeatureCache::get(int t, int layer, Branch branch) const {
  auto it = entries_.find({t, layer});
  const Tensor* found = nullptr;
  if (it != entries_.end()) found = branch == Branch::cond ? &it->second.cond : &it->second.uncond;
  if (!found || found->empty()) {
    throw CacheMissError("no cached vanilla queries for t=" + std::to_string(t) + " layer=" +
                         std::to_string(layer) + " (" + std::string(to_string(branch)) +
                         "); sampler schedule differs from the caching run");
  }
  return *found;
}

bool bit_equal(const FeatureCache& a, const FeatureCache& b) {
  if (a.seed_fingerprint != b.seed_fingerprint || a.size() != b.size()) return false;
  auto ia = a.entries().begin();
  auto ib = b.entries().begin();
  for (; ia != a.entries().end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bit_equal(ia->second.cond, ib->second.cond) ||
        !bit_equal(ia->second.uncond, ib->second.uncond)) {
      return false;
    }
  }
  return true;
}

TaggedQuery q_preserve(const Tensor& q_c, const FeatureCache& cache, int t, int layer, Branch branch,
                       int t_pres, int total_steps) {
  if (t < t_pres || t > total_steps) {
    throw RangeError("q_preserve: t=" + std::to_string(t) + " outside [" + std::to_string(t_pres) + ", " +
                     std::to_string(total_steps) + "]");
  }
  const Tensor& cached = cache.get(t, layer, branch);
  if (cached.shape() != q_c.shape()) {
    throw DimensionError("q_preserve: cached " + shape_to_string(cached.shape()) + " vs live " +
                         shape_to_string(q_c.shape()));
  }
  return TaggedQuery{cached, QueryRole::vanilla};
}

KeyframeIndex KeyframeIndex::make(std::size_t frames, std::size_t spacing) {
  if (frames == 0) throw ConfigError("keyframes: need at least one frame");
  if (spacing == 0) throw ConfigError("keyframes: spacing must be positive");
  KeyframeIndex kf;
  kf.spacing = spacing;
  for (std::size_t f = 0; f < frames; f += spacing) kf.keyframes.push_back(f);
  if (kf.keyframes.back() != frames - 1) kf.keyframes.push_back(frames - 1);
  return kf;
}

std::pair<std::size_t, std::size_t> KeyframeIndex::bracket(std::size_t frame) const {
  if (keyframes.empty() || frame < keyframes.front() || frame > keyframes.back()) {
    throw ConfigError("keyframes: no bracket for frame " + std::to_string(frame));
  }
  if (keyframes.size() == 1) return {keyframes[0], keyframes[0]};
  for (std::size_t j = 0; j + 1 < keyframes.size(); ++j) {
    if (keyframes[j] <= frame && frame <= keyframes[j + 1]) {
      if (frame == keyframes[j + 1] && j + 2 < keyframes.size()) continue;
      return {keyframes[j], keyframes[j + 1]};
    }
  }
  throw ConfigError("keyframes: no bracket for frame " + std::to_string(frame));
}

double blend_weight(std::size_t frame, std::size_t f_a, std::size_t f_b, BlendWeight mode) {
  if (f_a == f_b) return 1.0;
  const double ratio = static_cast<double>(f_b - frame) / static_cast<double>(f_b - f_a);
  return mode == BlendWeight::sigmoid ? sigmoid(ratio) : ratio;
}

std::int64_t argmax_cosine(std::span<const float> query, const Tensor& candidates,
                           std::span<const double> candidate_norms) {
  const double qn = l2_norm(query);
  if (qn == 0.0) return -1;
  const std::size_t rows = candidates.dim(0), d = candidates.dim(1);
  std::int64_t best = -1;
  double best_sim = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = candidates.data().subspan(r * d, d);
    const double sim = cosine_sim_with_norms(query, row, qn, candidate_norms[r]);
    if (best < 0 || sim > best_sim) {
      best = static_cast<std::int64_t>(r);
      best_sim = sim;
    }
  }
  return best;
}

namespace {

std::vector<double> row_norms(const Tensor& rows) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) norms[r] = l2_norm(rows.data().subspan(r * d, d));
  return norms;
}

}  // namespace

FlowResult q_flow(const Tensor& q_c, const Tensor& q_v, const KeyframeIndex& keyframes, std::size_t frame,
                  BlendWeight mode) {
  if (q_c.rank() != 3 || q_c.shape() != q_v.shape()) {
    throw DimensionError("q_flow: q_c " + shape_to_string(q_c.shape()) + " vs q_v " + shape_to_string(q_v.shape()));
  }
  const std::size_t frames = q_c.dim(0), patches = q_c.dim(1), d = q_c.dim(2);
  if (frame >= frames || keyframes.keyframes.empty() || keyframes.keyframes.back() >= frames) {
    throw ConfigError("q_flow: frame or keyframes outside the clip");
  }
  FlowResult r;
  std::tie(r.f_a, r.f_b) = keyframes.bracket(frame);
  r.weight = blend_weight(frame, r.f_a, r.f_b, mode);

  const Tensor key_a = q_v.slice(r.f_a), key_b = q_v.slice(r.f_b);
  const std::vector<double> norms_a = row_norms(key_a), norms_b = row_norms(key_b);
  const auto vanilla = q_v.sub(frame);
  const auto consistent = q_c.data();

  r.q = Tensor({patches, d});
  r.match_a.assign(patches, -1);
  r.match_b.assign(patches, -1);
  for (std::size_t p = 0; p < patches; ++p) {
    const auto query = vanilla.subspan(p * d, d);
    const std::int64_t ma = argmax_cosine(query, key_a, norms_a);
    const std::int64_t mb = argmax_cosine(query, key_b, norms_b);
    float* out = r.q.data().data() + p * d;
    if (ma < 0 || mb < 0) {
      // Zero vanilla query: nothing to follow, keep the consistent query.
      const float* src = consistent.data() + (frame * patches + p) * d;
      std::copy(src, src + d, out);
      ++r.skipped;
      continue;
    }
    r.match_a[p] = ma;
    r.match_b[p] = mb;
    const float* qa = consistent.data() + (r.f_a * patches + static_cast<std::size_t>(ma)) * d;
    const float* qb = consistent.data() + (r.f_b * patches + static_cast<std::size_t>(mb)) * d;
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = static_cast<float>(r.weight * qa[c] + (1.0 - r.weight) * qb[c]);
    }
  }
  return r;
}

DropoutResult q_dropout(const Tensor& q_injected, const Tensor& q_c, double rate, SeededRng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("q_dropout: rate " + std::to_string(rate) + " outside [0, 1]");
  if (q_injected.shape() != q_c.shape() || q_c.rank() == 0) {
    throw DimensionError("q_dropout: " + shape_to_string(q_injected.shape()) + " vs " + shape_to_string(q_c.shape()));
  }
  const std::size_t d = q_c.shape().back();
  const std::size_t rows = d == 0 ? 0 : q_c.size() / d;
  DropoutResult r{q_injected, 0.0};
  std::size_t kept = 0;
  for (std::size_t row = 0; row < rows; ++row) {
    if (rng.uniform() < rate) {
      std::copy_n(q_c.data().begin() + row * d, d, r.q.data().begin() + row * d);
      ++kept;
    }
  }
  r.kept_fraction = rows ? static_cast<double>(kept) / rows : 0.0;
  return r;
}

bool QuerySchedule::is_injection_layer(int layer) const {
  return std::find(injection_layers.begin(), injection_layers.end(), layer) != injection_layers.end();
}

std::string AuditRecord::to_json_line() const {
  nlohmann::ordered_json j;
  j["t"] = t;
  j["layer"] = layer;
  j["role"] = std::string(to_string(role));
  j["dropout_kept_fraction"] = dropout_kept_fraction;
  j["pass"] = pass;
  j["branch"] = std::string(to_string(branch));
  j["sdsa"] = sdsa;
  j["refine"] = refine;
  j["correspondence_id"] = correspondence_id;
  return j.dump();
}

QuerySelection select_q(int t, int layer, Branch branch, const Tensor& q_c, const FeatureCache& cache,
                        const KeyframeIndex& keyframes, const QuerySchedule& schedule) {
  if (q_c.rank() != 4) throw DimensionError("select_q: expected [S,F,P,d], got " + shape_to_string(q_c.shape()));
  QuerySelection sel;
  if (t >= schedule.t_pres) {
    sel.query = q_preserve(q_c, cache, t, layer, branch, schedule.t_pres, schedule.total_steps);
  } else if (schedule.is_injection_layer(layer) && schedule.flow_window.contains(t)) {
    const Tensor& q_v = cache.get(t, layer, branch);
    if (q_v.shape() != q_c.shape()) {
      throw DimensionError("select_q: cached " + shape_to_string(q_v.shape()) + " vs live " + shape_to_string(q_c.shape()));
    }
    const std::size_t shots = q_c.dim(0), frames = q_c.dim(1);
    Tensor flowed(q_c.shape());
    for (std::size_t s = 0; s < shots; ++s) {
      const Tensor qc_shot = q_c.slice(s), qv_shot = q_v.slice(s);
      auto dst = flowed.sub(s);
      const std::size_t block = qc_shot.size() / frames;
      for (std::size_t f = 0; f < frames; ++f) {
        const FlowResult fr = q_flow(qc_shot, qv_shot, keyframes, f, schedule.weight);
        std::copy(fr.q.data().begin(), fr.q.data().end(), dst.begin() + f * block);
      }
    }
    sel.query = TaggedQuery{std::move(flowed), QueryRole::flow};
  } else {
    sel.query = TaggedQuery{q_c, QueryRole::consistent};
    sel.kept_fraction = 1.0;
    return sel;
  }

  if (schedule.dropout > 0.0) {
    // One stream per shot so a shot's draws do not depend on the batch size.
    const std::size_t shots = q_c.dim(0);
    double kept = 0.0;
    for (std::size_t s = 0; s < shots; ++s) {
      SeededRng rng(mix_seed({schedule.seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(layer),
                              static_cast<std::uint64_t>(branch), s}));
      const DropoutResult dr = q_dropout(sel.query.q.slice(s), q_c.slice(s), schedule.dropout, rng);
      sel.query.q.set_slice(s, dr.q);
      kept += dr.kept_fraction;
    }
    sel.kept_fraction = kept / static_cast<double>(shots);
  } else if (schedule.dropout < 0.0) {
    throw ConfigError("q_dropout: negative rate");
  }
  return sel;
}

}  // namespace storyboard
