#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "storyboard/tensor.hpp"

namespace storyboard {

// Cumulative signal level ᾱ_t for t in [0, T]; ᾱ_0 == 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alpha_bars);

  // Betas spaced linearly in sqrt-space between the endpoints.
  static NoiseSchedule scaled_linear(int total_steps, double beta_start = 0.00085,
                                     double beta_end = 0.012);

  int total_steps() const { return static_cast<int>(alpha_bars_.size()) - 1; }
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> alpha_bars_;
};

// x̂0 = (x − sqrt(1 − ᾱ_t)·e_t) / sqrt(ᾱ_t), elementwise.
Tensor estimate_x0(const Tensor& x, const Tensor& e_t, int t, const NoiseSchedule& schedule);

// Per-patch subject saliency in [0, 1] for one frame's estimated clean latent [P×C].
using Segmenter = std::function<Tensor(const Tensor& x0_hat, const std::string& prompt)>;

// Stand-in for a zero-shot segmenter: squared value of one latent channel,
// divided by its maximum over the frame. All-zero input gives all-zero scores.
Segmenter channel_energy_segmenter(std::size_t subject_channel);

class SegmenterRegistry {
 public:
  // Registry holding "channel_energy" (subject channel 0).
  static SegmenterRegistry with_defaults();

  void add(const std::string& name, Segmenter segmenter);
  const Segmenter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return segmenters_.count(name) != 0; }

 private:
  std::map<std::string, Segmenter> segmenters_;
};

Tensor saliency(const Tensor& x0_hat, const std::string& prompt, const Segmenter& extractor);

struct OtsuResult {
  float threshold = 0.0f;
  // Class boundary: bins [0, split] are background.
  int split_bin = -1;
  // Set when every score is identical; threshold is then max(scores).
  bool fallback = false;
};

inline constexpr int kOtsuBins = 256;

// Upper edges of the 256 equal-width bins over [lo, hi]; the last edge is hi.
std::vector<float> otsu_bin_edges(float lo, float hi);

// Otsu's method on a 256-bin histogram spanning [min, max] of the scores.
// Maximizes between-class variance of bin indices; ties go to the lower split.
OtsuResult otsu_threshold(std::span<const float> scores);

std::vector<std::uint8_t> threshold_mask(std::span<const float> scores, float threshold);

// Boolean subject masks for shots × frames × patches with their provenance.
struct SubjectMaskSet {
  std::size_t shots = 0;
  std::size_t frames = 0;
  std::size_t patches = 0;
  std::vector<std::uint8_t> masks;     // [shot][frame][patch]
  std::vector<float> thresholds;       // [shot][frame]
  std::vector<std::uint8_t> fallback;  // [shot][frame]
  Tensor saliency;                     // [shots, frames, patches]

  static SubjectMaskSet filled(std::size_t shots, std::size_t frames, std::size_t patches,
                               bool value);

  std::span<const std::uint8_t> mask(std::size_t shot, std::size_t frame) const;
  std::span<std::uint8_t> mask(std::size_t shot, std::size_t frame);
  bool at(std::size_t shot, std::size_t frame, std::size_t patch) const {
    return masks[(shot * frames + frame) * patches + patch] != 0;
  }
};

// Saliency + Otsu for every (shot, frame) of x0_hat [S, F, P, C].
SubjectMaskSet compute_subject_masks(const Tensor& x0_hat, const std::vector<std::string>& prompts,
                                     const Segmenter& extractor);

// Nearest-neighbour resampling of square patch grids (side_from² → side_to² patches).
SubjectMaskSet resample_masks(const SubjectMaskSet& masks, std::size_t side_from,
                              std::size_t side_to);

// Nonempty and non-full masks (unless the fallback fired), and
// mask == saliency > threshold wherever saliency is present.
bool masks_valid(const SubjectMaskSet& masks);

}  // namespace storyboard
