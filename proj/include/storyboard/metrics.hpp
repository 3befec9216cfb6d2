#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "storyboard/subject_mask.hpp"
#include "storyboard/tensor.hpp"

namespace storyboard {

// Per-frame feature from a frame [P×C] whose background rows are already zeroed.
using FeatureExtractor = std::function<std::vector<float>(const Tensor& frame, std::span<const std::uint8_t> mask)>;

// Mean of the subject patches' channel vectors; zero when the mask is empty.
// Not a semantic feature.
std::vector<float> masked_mean_pool(const Tensor& frame, std::span<const std::uint8_t> mask);

class FeatureExtractorRegistry {
 public:
  // Registers "masked_mean_pool".
  static FeatureExtractorRegistry with_defaults();

  void add(const std::string& name, FeatureExtractor extractor);
  const FeatureExtractor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return extractors_.count(name) != 0; }

 private:
  std::map<std::string, FeatureExtractor> extractors_;
};

struct ConsistencyReport {
  double set_consistency = 0.0;
  double set_sem = 0.0;
  double subject_consistency = 0.0;
  double subject_sem = 0.0;
  std::size_t pair_count = 0;
  std::size_t subject_pair_count = 0;
  std::string extractor;
};

// C(S·F, 2) − S·C(F, 2): frame pairs that cross shots.
std::size_t expected_pair_count(std::size_t shots, std::size_t frames);

// Mean ± sem cosine similarity over cross-shot frame pairs of masked features,
// plus within-shot adjacent-frame similarity. A pair involving a zero feature
// scores 0. frames [S,F,P,C].
ConsistencyReport set_consistency(const Tensor& frames, const SubjectMaskSet& masks, const FeatureExtractor& extractor,
                                  const std::string& extractor_name = "masked_mean_pool");

struct DynamicDegree {
  double score = 0.0;
  bool dynamic = false;
};

constexpr std::size_t kFlowBlock = 8;

// Mean block-matching displacement magnitude between adjacent frames of a
// video [F×H×W]: exhaustive ±radius SAD search per 8×8 block.
DynamicDegree dynamic_degree(const Tensor& video, double flow_threshold, int radius = 4);

struct YtSlice {
  Tensor slice;  // [H×F]
  std::size_t column = 0;
};

// Column with the largest temporal variance summed over rows (lowest index on
// ties) unless given; returns video[:, :, column] transposed.
YtSlice yt_slice(const Tensor& video, std::optional<std::size_t> column = std::nullopt);

// Binary PGM (P5) of a 2-D tensor, min-max normalized to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// Channel-0 frames of one shot of latents [S,F,P,C], nearest-upsampled by scale:
// [F, side·scale, side·scale].
Tensor preview_video(const Tensor& latents, std::size_t shot, std::size_t scale);

struct MetricRow {
  std::string metric;
  double mean = 0.0;
  double sem = 0.0;
  std::size_t n = 0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
void write_metrics_json(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

}  // namespace storyboard
