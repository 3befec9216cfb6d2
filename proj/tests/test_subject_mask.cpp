#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "storyboard/errors.hpp"
#include "storyboard/subject_mask.hpp"

using namespace storyboard;

TEST_CASE("noise schedule") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear(1000);
  CHECK(s.total_steps() == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1000) < 0.01);
  CHECK(s.alpha_bar(1000) > 0.0);
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar(t) <= s.alpha_bar(t - 1));
  CHECK_THROWS_AS(s.alpha_bar(1001), RangeError);
  CHECK_THROWS_AS(s.alpha_bar(-1), RangeError);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 1.5}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}), ConfigError);
}

TEST_CASE("x0 estimate inverts forward noising") {
  std::mt19937_64 gen(1);
  const NoiseSchedule s = NoiseSchedule::scaled_linear(1000);
  const Tensor x0 = oracle::random_tensor(gen, {64});
  const Tensor eps = oracle::random_tensor(gen, {64});
  for (int t : {1, 10, 250, 500, 750, 999, 1000}) {
    const double ab = s.alpha_bar(t);
    Tensor xt({64});
    for (std::size_t i = 0; i < 64; ++i) xt[i] = static_cast<float>(std::sqrt(ab) * x0[i] + std::sqrt(1 - ab) * eps[i]);
    CHECK(max_abs_diff(estimate_x0(xt, eps, t, s), x0) < 1e-5f);
  }
  CHECK_THROWS_AS(estimate_x0(Tensor({3}), Tensor({4}), 10, s), DimensionError);
}

TEST_CASE("channel energy segmenter") {
  const Segmenter seg = channel_energy_segmenter(0);
  Tensor frame({3, 2}, {1, 5, -2, 0, 0, 9});
  const Tensor s = seg(frame, "p");
  CHECK(s[0] == doctest::Approx(0.25));
  CHECK(s[1] == 1.0f);
  CHECK(s[2] == 0.0f);
  CHECK(bit_equal(seg(Tensor({3, 2}), "p"), Tensor({3})));
  CHECK_THROWS_AS(channel_energy_segmenter(5)(frame, "p"), ConfigError);
  CHECK_THROWS_AS(SegmenterRegistry::with_defaults().get("dino"), ConfigError);
  const Segmenter bad = [](const Tensor&, const std::string&) { return Tensor::filled({2}, 2.0f); };
  CHECK_THROWS_AS(saliency(frame, "p", bad), Error);
}

TEST_CASE("otsu bin edges") {
  const auto e = otsu_bin_edges(0.0f, 1.0f);
  REQUIRE(e.size() == 256);
  CHECK(e[0] == 1.0f / 256);
  CHECK(e[127] == 0.5f);
  CHECK(e[255] == 1.0f);
}

TEST_CASE("otsu matches the exhaustive oracle") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + gen() % 200;
    std::vector<float> scores(n);
    const bool bimodal = trial % 2 == 0;
    std::normal_distribution<double> nd(0.0, 0.1);
    for (auto& s : scores) s = static_cast<float>(bimodal ? (gen() % 2 ? 0.7 : 0.2) + nd(gen) : nd(gen));
    const OtsuResult r = otsu_threshold(scores);
    const auto ref = oracle::exhaustive_otsu(scores);
    CHECK(r.split_bin == ref.split);
    CHECK(r.threshold == ref.threshold);
    CHECK_FALSE(r.fallback);
  }
}

TEST_CASE("otsu separates two clusters") {
  std::vector<float> s{0.1f, 0.12f, 0.11f, 0.9f, 0.95f, 0.92f};
  const auto m = threshold_mask(s, otsu_threshold(s).threshold);
  CHECK(m == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("constant scores fall back") {
  std::vector<float> s(10, 0.3f);
  const OtsuResult r = otsu_threshold(s);
  CHECK(r.fallback);
  CHECK(r.threshold == 0.3f);
  const auto m = threshold_mask(s, r.threshold);
  CHECK(std::count(m.begin(), m.end(), 1) == 0);
  CHECK_THROWS_AS(otsu_threshold(std::vector<float>{1.0f}), ConfigError);
}

TEST_CASE("otsu mask is invariant to exact affine rescaling") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> s(100), t(100);
    for (auto& v : s) v = static_cast<float>(gen() % 4096) / 4096.0f;
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = 4.0f * s[i] - 3.0f;
    CHECK(threshold_mask(s, otsu_threshold(s).threshold) == threshold_mask(t, otsu_threshold(t).threshold));
  }
}

TEST_CASE("compute, validate and resample subject masks") {
  std::mt19937_64 gen(4);
  const Tensor x0 = oracle::random_tensor(gen, {2, 3, 16, 4});
  const SubjectMaskSet m = compute_subject_masks(x0, {"a", "b"}, channel_energy_segmenter(0));
  CHECK(m.masks.size() == 2 * 3 * 16);
  CHECK(masks_valid(m));
  SubjectMaskSet broken = m;
  broken.masks[0] ^= 1;
  CHECK_FALSE(masks_valid(broken));
  CHECK_THROWS_AS(compute_subject_masks(x0, {"a"}, channel_energy_segmenter(0)), DimensionError);

  const SubjectMaskSet down = resample_masks(m, 4, 2);
  CHECK(down.patches == 4);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) CHECK(down.at(1, 2, y * 2 + x) == m.at(1, 2, (2 * y + 1) * 4 + 2 * x + 1));
  const SubjectMaskSet up = resample_masks(down, 2, 4);
  CHECK(up.at(0, 0, 5) == down.at(0, 0, 0));
  CHECK_THROWS_AS(resample_masks(m, 3, 2), DimensionError);
}
