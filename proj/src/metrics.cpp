#include "storyboard/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "storyboard/errors.hpp"

namespace storyboard {

std::vector<float> masked_mean_pool(const Tensor& frame, std::span<const std::uint8_t> mask) {
  const std::size_t patches = frame.dim(0), c = frame.dim(1);
  if (mask.size() != patches) throw DimensionError("masked_mean_pool: mask does not match the frame");
  std::vector<double> acc(c, 0.0);
  std::size_t count = 0;
  for (std::size_t p = 0; p < patches; ++p) {
    if (!mask[p]) continue;
    ++count;
    for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += frame[p * c + ch];
  }
  std::vector<float> out(c, 0.0f);
  if (count > 0)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] = static_cast<float>(acc[ch] / static_cast<double>(count));
  return out;
}

FeatureExtractorRegistry FeatureExtractorRegistry::with_defaults() {
  FeatureExtractorRegistry registry;
  registry.add("masked_mean_pool", masked_mean_pool);
  return registry;
}

void FeatureExtractorRegistry::add(const std::string& name, FeatureExtractor extractor) {
  extractors_[name] = std::move(extractor);
}

const FeatureExtractor& FeatureExtractorRegistry::get(const std::string& name) const {
  auto it = extractors_.find(name);
  if (it == extractors_.end()) throw ConfigError("unknown feature extractor '" + name + "'");
  return it->second;
}

std::size_t expected_pair_count(std::size_t shots, std::size_t frames) {
  const std::size_t n = shots * frames;
  return n * (n - (n > 0 ? 1 : 0)) / 2 - shots * (frames * (frames - (frames > 0 ? 1 : 0)) / 2);
}

namespace {

double pair_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return cosine_sim_with_norms(a, b, na, nb);
}

void mean_sem(const std::vector<double>& xs, double& mean, double& sem) {
  mean = 0.0;
  sem = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sem = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace

ConsistencyReport set_consistency(const Tensor& frames, const SubjectMaskSet& masks, const FeatureExtractor& extractor,
                                  const std::string& extractor_name) {
  if (frames.rank() != 4) throw DimensionError("set_consistency: frames must be [S,F,P,C]");
  const std::size_t shots = frames.dim(0), nf = frames.dim(1), patches = frames.dim(2), c = frames.dim(3);
  if (shots < 2) throw InsufficientShotsError("set_consistency needs at least 2 shots, got " + std::to_string(shots));
  if (masks.shots != shots || masks.frames != nf || masks.patches != patches) {
    throw DimensionError("set_consistency: masks do not match the frames");
  }
  if (!extractor) throw ConfigError("set_consistency: no feature extractor");

  std::vector<std::vector<float>> feats(shots * nf);
  for (std::size_t s = 0; s < shots; ++s)
    for (std::size_t f = 0; f < nf; ++f) {
      const auto mask = masks.mask(s, f);
      Tensor frame({patches, c});
      const float* src = frames.data().data() + (s * nf + f) * patches * c;
      for (std::size_t p = 0; p < patches; ++p)
        if (mask[p])
          for (std::size_t ch = 0; ch < c; ++ch) frame[p * c + ch] = src[p * c + ch];
      feats[s * nf + f] = extractor(frame, mask);
    }

  std::vector<double> cross, within;
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t j = i + 1; j < feats.size(); ++j)
      if (i / nf != j / nf) cross.push_back(pair_similarity(feats[i], feats[j]));
  for (std::size_t s = 0; s < shots; ++s)
    for (std::size_t f = 0; f + 1 < nf; ++f) within.push_back(pair_similarity(feats[s * nf + f], feats[s * nf + f + 1]));

  ConsistencyReport report;
  mean_sem(cross, report.set_consistency, report.set_sem);
  mean_sem(within, report.subject_consistency, report.subject_sem);
  report.pair_count = cross.size();
  report.subject_pair_count = within.size();
  report.extractor = extractor_name;
  return report;
}

DynamicDegree dynamic_degree(const Tensor& video, double flow_threshold, int radius) {
  if (video.rank() != 3) throw DimensionError("dynamic_degree: video must be [F×H×W]");
  const std::size_t nf = video.dim(0), h = video.dim(1), w = video.dim(2);
  if (nf < 2) throw ConfigError("dynamic_degree needs at least 2 frames");
  if (h < kFlowBlock || w < kFlowBlock) {
    throw ConfigError("dynamic_degree: frame " + std::to_string(h) + "x" + std::to_string(w) +
                      " is smaller than the block size");
  }
  if (radius < 0) throw ConfigError("dynamic_degree: negative search radius");
  const long r = radius, hh = static_cast<long>(h), ww = static_cast<long>(w), b = static_cast<long>(kFlowBlock);
  const long by_count = hh / b, bx_count = ww / b;

  std::vector<std::pair<long, long>> blocks, interior;
  for (long by = 0; by < by_count; ++by)
    for (long bx = 0; bx < bx_count; ++bx) {
      const long y = by * b, x = bx * b;
      blocks.emplace_back(y, x);
      if (y - r >= 0 && x - r >= 0 && y + b + r <= hh && x + b + r <= ww) interior.emplace_back(y, x);
    }
  const auto& used = interior.empty() ? blocks : interior;

  double total = 0.0;
  for (std::size_t f = 0; f + 1 < nf; ++f) {
    const float* a = video.data().data() + f * h * w;
    const float* n = a + h * w;
    double frame_sum = 0.0;
    for (const auto& [y, x] : used) {
      double best = std::numeric_limits<double>::infinity();
      long best_mag = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          if (y + dy < 0 || x + dx < 0 || y + dy + b > hh || x + dx + b > ww) continue;
          double sad = 0.0;
          for (long i = 0; i < b; ++i)
            for (long j = 0; j < b; ++j)
              sad += std::fabs(static_cast<double>(a[(y + i) * ww + x + j]) - n[(y + dy + i) * ww + x + dx + j]);
          const long mag = dy * dy + dx * dx;
          if (sad < best || (sad == best && mag < best_mag)) {
            best = sad;
            best_mag = mag;
          }
        }
      frame_sum += std::sqrt(static_cast<double>(best_mag));
    }
    total += frame_sum / static_cast<double>(used.size());
  }
  DynamicDegree out;
  out.score = total / static_cast<double>(nf - 1);
  out.dynamic = out.score > flow_threshold;
  return out;
}

YtSlice yt_slice(const Tensor& video, std::optional<std::size_t> column) {
  if (video.rank() != 3) throw DimensionError("yt_slice: video must be [F×H×W]");
  const std::size_t nf = video.dim(0), h = video.dim(1), w = video.dim(2);
  if (nf == 0 || h == 0 || w == 0) throw DimensionError("yt_slice: empty video");
  std::size_t col = 0;
  if (column) {
    if (*column >= w) throw RangeError("yt_slice: column " + std::to_string(*column) + " outside [0, " + std::to_string(w) + ")");
    col = *column;
  } else {
    double best = -1.0;
    for (std::size_t x = 0; x < w; ++x) {
      double var_sum = 0.0;
      for (std::size_t y = 0; y < h; ++y) {
        double mean = 0.0;
        for (std::size_t f = 0; f < nf; ++f) mean += video[(f * h + y) * w + x];
        mean /= static_cast<double>(nf);
        double ss = 0.0;
        for (std::size_t f = 0; f < nf; ++f) {
          const double d = video[(f * h + y) * w + x] - mean;
          ss += d * d;
        }
        var_sum += ss / static_cast<double>(nf);
      }
      if (var_sum > best) {
        best = var_sum;
        col = x;
      }
    }
  }
  YtSlice out;
  out.column = col;
  out.slice = Tensor({h, nf});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t f = 0; f < nf; ++f) out.slice[y * nf + f] = video[(f * h + y) * w + col];
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw DimensionError("write_pgm: image must be 2-D");
  const std::size_t h = image.dim(0), w = image.dim(1);
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float v : image.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_pgm: cannot open " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> px(image.size(), 0);
  if (hi > lo) {
    const double span = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < px.size(); ++i) {
      px[i] = static_cast<unsigned char>(std::lround(255.0 * (static_cast<double>(image[i]) - lo) / span));
    }
  }
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw Error("write_pgm: write failed for " + path.string());
}

Tensor preview_video(const Tensor& latents, std::size_t shot, std::size_t scale) {
  if (latents.rank() != 4) throw DimensionError("preview_video: latents must be [S,F,P,C]");
  if (shot >= latents.dim(0)) throw RangeError("preview_video: shot " + std::to_string(shot) + " out of range");
  if (scale == 0) throw ConfigError("preview_video: scale must be positive");
  const std::size_t nf = latents.dim(1), patches = latents.dim(2), c = latents.dim(3);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patches))));
  if (side * side != patches) throw DimensionError("preview_video: patch count is not a square");
  const std::size_t out_side = side * scale;
  Tensor video({nf, out_side, out_side});
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t y = 0; y < out_side; ++y)
      for (std::size_t x = 0; x < out_side; ++x) {
        const std::size_t p = (y / scale) * side + x / scale;
        video[(f * out_side + y) * out_side + x] = latents[((shot * nf + f) * patches + p) * c];
      }
  return video;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(9);
  os << "metric,mean,sem,n\n";
  for (const auto& r : rows) os << r.metric << ',' << r.mean << ',' << r.sem << ',' << r.n << '\n';
}

void write_metrics_json(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) j.push_back({{"metric", r.metric}, {"mean", r.mean}, {"sem", r.sem}, {"n", r.n}});
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace storyboard
