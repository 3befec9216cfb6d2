#include "storyboard/subject_mask.hpp"

#include <algorithm>
#include <cmath>

#include "storyboard/errors.hpp"

namespace storyboard {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bars) : alpha_bars_(std::move(alpha_bars)) {
  if (alpha_bars_.size() < 2) throw ConfigError("noise schedule needs at least one step");
  if (std::fabs(alpha_bars_.front() - 1.0) > 1e-6) throw ConfigError("noise schedule: alpha_bar(0) must be 1");
  for (std::size_t t = 0; t < alpha_bars_.size(); ++t) {
    if (!(alpha_bars_[t] > 0.0) || alpha_bars_[t] > 1.0) {
      throw ConfigError("noise schedule: alpha_bar(" + std::to_string(t) + ") outside (0, 1]");
    }
    if (t > 0 && alpha_bars_[t] > alpha_bars_[t - 1]) {
      throw ConfigError("noise schedule: alpha_bar must be nonincreasing");
    }
  }
}

NoiseSchedule NoiseSchedule::scaled_linear(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) throw ConfigError("noise schedule: total_steps must be positive");
  std::vector<double> alpha_bars(static_cast<std::size_t>(total_steps) + 1);
  alpha_bars[0] = 1.0;
  const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
  for (int t = 1; t <= total_steps; ++t) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (total_steps - 1);
    const double root = a + (b - a) * frac;
    alpha_bars[t] = alpha_bars[t - 1] * (1.0 - root * root);
  }
  return NoiseSchedule(std::move(alpha_bars));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > total_steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside schedule [0, " +
                     std::to_string(total_steps()) + "]");
  }
  return alpha_bars_[static_cast<std::size_t>(t)];
}

Tensor estimate_x0(const Tensor& x, const Tensor& e_t, int t, const NoiseSchedule& schedule) {
  if (x.shape() != e_t.shape()) {
    throw DimensionError("estimate_x0: x " + shape_to_string(x.shape()) + " vs e_t " +
                         shape_to_string(e_t.shape()));
  }
  const double ab = schedule.alpha_bar(t);
  const double noise_scale = std::sqrt(1.0 - ab);
  const double inv_signal = 1.0 / std::sqrt(ab);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(x[i]) - noise_scale * e_t[i]) * inv_signal);
  }
  return out;
}

Segmenter channel_energy_segmenter(std::size_t subject_channel) {
  return [subject_channel](const Tensor& x0_hat, const std::string&) {
    if (x0_hat.rank() != 2) {
      throw DimensionError("channel_energy: expected [P, C], got " + shape_to_string(x0_hat.shape()));
    }
    const std::size_t patches = x0_hat.dim(0), channels = x0_hat.dim(1);
    if (subject_channel >= channels) {
      throw ConfigError("channel_energy: subject channel " + std::to_string(subject_channel) +
                        " but latent has " + std::to_string(channels) + " channels");
    }
    Tensor scores({patches});
    double peak = 0.0;
    std::vector<double> energy(patches);
    for (std::size_t p = 0; p < patches; ++p) {
      const double v = x0_hat[p * channels + subject_channel];
      energy[p] = v * v;
      peak = std::max(peak, energy[p]);
    }
    if (peak > 0.0) {
      for (std::size_t p = 0; p < patches; ++p) scores[p] = static_cast<float>(energy[p] / peak);
    }
    return scores;
  };
}

SegmenterRegistry SegmenterRegistry::with_defaults() {
  SegmenterRegistry registry;
  registry.add("channel_energy", channel_energy_segmenter(0));
  return registry;
}

void SegmenterRegistry::add(const std::string& name, Segmenter segmenter) {
  segmenters_[name] = std::move(segmenter);
}

const Segmenter& SegmenterRegistry::get(const std::string& name) const {
  auto it = segmenters_.find(name);
  if (it == segmenters_.end()) throw ConfigError("unknown segmenter '" + name + "'");
  return it->second;
}

Tensor saliency(const Tensor& x0_hat, const std::string& prompt, const Segmenter& extractor) {
  if (!extractor) throw ConfigError("saliency: no segmenter registered");
  Tensor scores = extractor(x0_hat, prompt);
  for (float s : scores.data()) {
    if (!(s >= 0.0f && s <= 1.0f)) throw Error("saliency: segmenter produced a score outside [0, 1]");
  }
  return scores;
}

std::vector<float> otsu_bin_edges(float lo, float hi) {
  std::vector<float> edges(kOtsuBins);
  const double range = static_cast<double>(hi) - lo;
  for (int k = 0; k + 1 < kOtsuBins; ++k) {
    edges[k] = static_cast<float>(lo + range * (k + 1) / kOtsuBins);
  }
  edges[kOtsuBins - 1] = hi;
  return edges;
}

OtsuResult otsu_threshold(std::span<const float> scores) {
  if (scores.size() < 2) throw ConfigError("otsu_threshold: need at least 2 scores");
  if (scores.size() >= (std::size_t{1} << 20)) throw ConfigError("otsu_threshold: too many scores");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw Error("otsu_threshold: non-finite score");
  if (lo == hi) return OtsuResult{hi, -1, true};

  const std::vector<float> edges = otsu_bin_edges(lo, hi);
  std::vector<std::uint64_t> hist(kOtsuBins, 0);
  for (float s : scores) {
    // Bin = number of interior upper edges strictly below s, so that
    // "bin > k" is exactly "s > edges[k]".
    const auto bin = std::lower_bound(edges.begin(), edges.end() - 1, s) - edges.begin();
    ++hist[static_cast<std::size_t>(bin)];
  }

  using u128 = unsigned __int128;
  const std::int64_t total = static_cast<std::int64_t>(scores.size());
  std::int64_t total_sum = 0;
  for (int b = 0; b < kOtsuBins; ++b) total_sum += static_cast<std::int64_t>(hist[b]) * b;

  // Between-class variance ∝ (S0·N1 − S1·N0)² / (N0·N1); compared as exact fractions.
  int best = -1;
  u128 best_num = 0, best_den = 1;
  std::int64_t n0 = 0, s0 = 0;
  for (int k = 0; k < kOtsuBins; ++k) {
    n0 += static_cast<std::int64_t>(hist[k]);
    s0 += static_cast<std::int64_t>(hist[k]) * k;
    const std::int64_t n1 = total - n0, s1 = total_sum - s0;
    if (n0 == 0 || n1 == 0) continue;
    const std::int64_t diff = s0 * n1 - s1 * n0;
    const u128 mag = static_cast<u128>(diff < 0 ? -diff : diff);
    const u128 num = mag * mag;
    const u128 den = static_cast<u128>(n0) * static_cast<u128>(n1);
    if (best < 0 || num * best_den > best_num * den) {
      best = k;
      best_num = num;
      best_den = den;
    }
  }
  return OtsuResult{edges[static_cast<std::size_t>(best)], best, false};
}

std::vector<std::uint8_t> threshold_mask(std::span<const float> scores, float threshold) {
  std::vector<std::uint8_t> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) mask[i] = scores[i] > threshold ? 1 : 0;
  return mask;
}

SubjectMaskSet SubjectMaskSet::filled(std::size_t shots, std::size_t frames, std::size_t patches,
                                      bool value) {
  SubjectMaskSet set;
  set.shots = shots;
  set.frames = frames;
  set.patches = patches;
  set.masks.assign(shots * frames * patches, value ? 1 : 0);
  set.thresholds.assign(shots * frames, 0.0f);
  set.fallback.assign(shots * frames, 0);
  return set;
}

std::span<const std::uint8_t> SubjectMaskSet::mask(std::size_t shot, std::size_t frame) const {
  if (shot >= shots || frame >= frames) throw RangeError("mask index out of range");
  return std::span<const std::uint8_t>(masks).subspan((shot * frames + frame) * patches, patches);
}

std::span<std::uint8_t> SubjectMaskSet::mask(std::size_t shot, std::size_t frame) {
  if (shot >= shots || frame >= frames) throw RangeError("mask index out of range");
  return std::span<std::uint8_t>(masks).subspan((shot * frames + frame) * patches, patches);
}

SubjectMaskSet compute_subject_masks(const Tensor& x0_hat, const std::vector<std::string>& prompts,
                                     const Segmenter& extractor) {
  if (x0_hat.rank() != 4) {
    throw DimensionError("compute_subject_masks: expected [S, F, P, C], got " + shape_to_string(x0_hat.shape()));
  }
  const std::size_t shots = x0_hat.dim(0), frames = x0_hat.dim(1), patches = x0_hat.dim(2),
                    channels = x0_hat.dim(3);
  if (prompts.size() != shots) throw DimensionError("compute_subject_masks: one prompt per shot required");
  SubjectMaskSet set = SubjectMaskSet::filled(shots, frames, patches, false);
  set.saliency = Tensor({shots, frames, patches});
  for (std::size_t s = 0; s < shots; ++s) {
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t item = s * frames + f;
      Tensor frame({patches, channels},
                   std::vector<float>(x0_hat.data().begin() + item * patches * channels,
                                      x0_hat.data().begin() + (item + 1) * patches * channels));
      Tensor scores = saliency(frame, prompts[s], extractor);
      const OtsuResult otsu = otsu_threshold(scores.data());
      auto mask = threshold_mask(scores.data(), otsu.threshold);
      std::copy(mask.begin(), mask.end(), set.mask(s, f).begin());
      std::copy(scores.data().begin(), scores.data().end(), set.saliency.data().begin() + item * patches);
      set.thresholds[item] = otsu.threshold;
      set.fallback[item] = otsu.fallback ? 1 : 0;
    }
  }
  return set;
}

SubjectMaskSet resample_masks(const SubjectMaskSet& masks, std::size_t side_from, std::size_t side_to) {
  if (side_from * side_from != masks.patches || side_to == 0) {
    throw DimensionError("resample_masks: grid " + std::to_string(side_from) + "² does not match " +
                         std::to_string(masks.patches) + " patches");
  }
  if (side_from == side_to) return masks;
  SubjectMaskSet out = SubjectMaskSet::filled(masks.shots, masks.frames, side_to * side_to, false);
  out.thresholds = masks.thresholds;
  out.fallback = masks.fallback;
  std::vector<std::size_t> src(side_to);
  for (std::size_t i = 0; i < side_to; ++i) {
    src[i] = std::min(side_from - 1, static_cast<std::size_t>((i + 0.5) * side_from / side_to));
  }
  for (std::size_t s = 0; s < masks.shots; ++s) {
    for (std::size_t f = 0; f < masks.frames; ++f) {
      auto from = masks.mask(s, f);
      auto to = out.mask(s, f);
      for (std::size_t y = 0; y < side_to; ++y)
        for (std::size_t x = 0; x < side_to; ++x) to[y * side_to + x] = from[src[y] * side_from + src[x]];
    }
  }
  return out;
}

bool masks_valid(const SubjectMaskSet& masks) {
  const bool has_saliency = masks.saliency.size() == masks.masks.size();
  for (std::size_t s = 0; s < masks.shots; ++s) {
    for (std::size_t f = 0; f < masks.frames; ++f) {
      const std::size_t item = s * masks.frames + f;
      auto m = masks.mask(s, f);
      const auto on = std::count(m.begin(), m.end(), std::uint8_t{1});
      if (!masks.fallback[item] && (on == 0 || on == static_cast<long>(m.size()))) return false;
      if (has_saliency) {
        for (std::size_t p = 0; p < masks.patches; ++p) {
          const bool expect = masks.saliency[item * masks.patches + p] > masks.thresholds[item];
          if (expect != (m[p] != 0)) return false;
        }
      }
    }
  }
  return true;
}

}  // namespace storyboard
