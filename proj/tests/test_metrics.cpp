#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "oracles.hpp"
#include "storyboard/errors.hpp"
#include "storyboard/metrics.hpp"

using namespace storyboard;

namespace {

SubjectMaskSet random_masks(std::mt19937_64& gen, std::size_t s, std::size_t f, std::size_t p) {
  SubjectMaskSet m = SubjectMaskSet::filled(s, f, p, false);
  for (auto& v : m.masks) v = gen() % 2;
  return m;
}

}  // namespace

TEST_CASE("cross-shot pair count") {
  CHECK(expected_pair_count(2, 3) == 9);
  CHECK(expected_pair_count(3, 5) == 75);
  CHECK(expected_pair_count(5, 8) == 640);
}

TEST_CASE("set consistency equals the double-loop oracle") {
  std::mt19937_64 gen(1);
  const auto extractor = FeatureExtractorRegistry::with_defaults().get("masked_mean_pool");
  for (auto [s, f] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 3}, {3, 5}, {5, 8}}) {
    const Tensor frames = oracle::random_tensor(gen, {s, f, 9, 4});
    const SubjectMaskSet masks = random_masks(gen, s, f, 9);
    const ConsistencyReport r = set_consistency(frames, masks, extractor);
    std::size_t pairs = 0;
    const long double ref = oracle::double_loop_consistency(frames, masks.masks, pairs);
    CHECK(r.pair_count == expected_pair_count(s, f));
    CHECK(r.pair_count == pairs);
    CHECK(std::fabs(r.set_consistency - static_cast<double>(ref)) < 1e-6);
    CHECK(r.subject_pair_count == s * (f - 1));
  }
}

TEST_CASE("identical frames are fully consistent") {
  Tensor frames({3, 2, 4, 2});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = static_cast<float>(i % 8) + 1.0f;
  const SubjectMaskSet masks = SubjectMaskSet::filled(3, 2, 4, true);
  const ConsistencyReport r = set_consistency(frames, masks, masked_mean_pool);
  CHECK(std::fabs(r.set_consistency - 1.0) < 1e-6);
  CHECK(r.set_sem < 1e-6);
}

TEST_CASE("set consistency is symmetric in shot order") {
  std::mt19937_64 gen(2);
  const Tensor frames = oracle::random_tensor(gen, {3, 4, 9, 4});
  const SubjectMaskSet masks = random_masks(gen, 3, 4, 9);
  Tensor swapped = frames;
  SubjectMaskSet swapped_masks = masks;
  swapped.set_slice(0, frames.slice(2));
  swapped.set_slice(2, frames.slice(0));
  for (std::size_t f = 0; f < 4; ++f) {
    auto a = masks.mask(0, f), b = masks.mask(2, f);
    std::copy(b.begin(), b.end(), swapped_masks.mask(0, f).begin());
    std::copy(a.begin(), a.end(), swapped_masks.mask(2, f).begin());
  }
  const double x = set_consistency(frames, masks, masked_mean_pool).set_consistency;
  const double y = set_consistency(swapped, swapped_masks, masked_mean_pool).set_consistency;
  CHECK(std::fabs(x - y) < 1e-12);
  CHECK_THROWS_AS(set_consistency(frames.slice(0).reshaped({1, 4, 9, 4}), SubjectMaskSet::filled(1, 4, 9, true),
                                  masked_mean_pool),
                  InsufficientShotsError);
}

TEST_CASE("dynamic degree") {
  std::mt19937_64 gen(3);
  SUBCASE("static video") {
    Tensor video({3, 32, 32});
    const Tensor frame = oracle::random_tensor(gen, {32, 32});
    for (std::size_t f = 0; f < 3; ++f) video.set_slice(f, frame);
    const DynamicDegree d = dynamic_degree(video, 0.0);
    CHECK(d.score == 0.0);
    CHECK_FALSE(d.dynamic);
  }
  SUBCASE("global shifts") {
    for (int shift = 1; shift <= 4; ++shift) {
      const Tensor video = oracle::shifted_video(gen, 4, 32, 32, shift);
      const DynamicDegree d = dynamic_degree(video, 0.0, 4);
      CHECK(std::fabs(d.score - shift) <= 0.5);
      CHECK(d.dynamic);
    }
  }
  SUBCASE("doubling the shift does not lower the score") {
    const double a = dynamic_degree(oracle::shifted_video(gen, 3, 32, 32, 1), 1.0).score;
    const double b = dynamic_degree(oracle::shifted_video(gen, 3, 32, 32, 2), 1.0).score;
    CHECK(b >= a);
  }
  CHECK_THROWS_AS(dynamic_degree(Tensor({2, 4, 4}), 1.0), ConfigError);
  CHECK_THROWS_AS(dynamic_degree(Tensor({1, 16, 16}), 1.0), ConfigError);
}

TEST_CASE("y-t slice") {
  std::mt19937_64 gen(4);
  SUBCASE("constant video picks column 0") {
    const YtSlice s = yt_slice(Tensor::filled({3, 4, 5}, 1.0f));
    CHECK(s.column == 0);
    CHECK(s.slice.shape() == Shape{4, 3});
  }
  SUBCASE("moving bar column") {
    Tensor video({4, 6, 10});
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t y = 0; y < 6; ++y) video.at({f, y, 7}) = f % 2 ? 1.0f : 0.0f;
    CHECK(yt_slice(video).column == 7);
  }
  SUBCASE("random video matches brute force and pure indexing") {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor video = oracle::random_tensor(gen, {5, 6, 7});
      const YtSlice s = yt_slice(video);
      CHECK(s.column == oracle::brute_force_column(video));
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t f = 0; f < 5; ++f) CHECK(s.slice.at({y, f}) == video.at({f, y, s.column}));
    }
  }
  CHECK_THROWS_AS(yt_slice(Tensor({2, 2, 2}), 2), RangeError);
}

TEST_CASE("pgm output") {
  const auto path = std::filesystem::temp_directory_path() / "storyboard_test.pgm";
  write_pgm(path, Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  in.get();
  std::vector<unsigned char> px(6);
  in.read(reinterpret_cast<char*>(px.data()), 6);
  CHECK(magic == "P5");
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(maxv == 255);
  CHECK(px.front() == 0);
  CHECK(px.back() == 255);
  std::filesystem::remove(path);
}

TEST_CASE("preview video upsamples channel 0") {
  Tensor latents({1, 2, 4, 3});
  for (std::size_t i = 0; i < latents.size(); ++i) latents[i] = static_cast<float>(i);
  const Tensor v = preview_video(latents, 0, 2);
  CHECK(v.shape() == Shape{2, 4, 4});
  CHECK(v.at({0, 0, 0}) == latents.at({0, 0, 0, 0}));
  CHECK(v.at({1, 3, 3}) == latents.at({0, 1, 3, 0}));
  CHECK(v.at({0, 1, 2}) == latents.at({0, 0, 1, 0}));
}

TEST_CASE("metric reports") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::vector<MetricRow> rows{{"set_consistency_vanilla", 0.5, 0.01, 75}};
  write_metrics_csv(dir / "m.csv", rows);
  write_metrics_json(dir / "m.json", rows);
  std::ifstream csv(dir / "m.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "metric,mean,sem,n");
  std::ifstream js(dir / "m.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j[0]["n"] == 75);
}
