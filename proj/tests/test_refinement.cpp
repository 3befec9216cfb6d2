#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "storyboard/errors.hpp"
#include "storyboard/refinement.hpp"

using namespace storyboard;

TEST_CASE("correspondence matches the exhaustive oracle over all anchor frames") {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 1 + gen() % 10, frames = 1 + gen() % 4, ap = 1 + gen() % 10, d = 1 + gen() % 6;
    const Tensor target = oracle::random_tensor(gen, {p, d});
    const Tensor anchor = oracle::random_tensor(gen, {frames, ap, d});
    const CorrespondenceMap map = build_correspondence(target, anchor);
    for (std::size_t i = 0; i < p; ++i) {
      const auto best = oracle::exhaustive_argmax(target.data().data() + i * d, anchor.data().data(), frames * ap, d);
      CHECK(map.match[i].first * ap + map.match[i].second == static_cast<std::size_t>(best));
    }
  }
}

TEST_CASE("copied features match their source") {
  std::mt19937_64 gen(2);
  const Tensor anchor = oracle::random_tensor(gen, {3, 4, 5});
  Tensor target({2, 5});
  for (std::size_t c = 0; c < 5; ++c) {
    target.at({0, c}) = anchor.at({2, 1, c});
    target.at({1, c}) = 0.0f;
  }
  const CorrespondenceMap map = build_correspondence(target, anchor);
  CHECK(map.match[0] == std::pair<std::size_t, std::size_t>{2, 1});
  CHECK(map.score[0] == doctest::Approx(1.0));
  CHECK(map.unmatched[1] == 1);
  CHECK(map.mean_score() == doctest::Approx(1.0));
  CHECK_THROWS_AS(build_correspondence(target, Tensor({0, 4, 5})), ConfigError);
  CHECK_THROWS_AS(build_correspondence(Tensor({2, 4}), anchor), DimensionError);
}

TEST_CASE("injection only touches subject patches") {
  std::mt19937_64 gen(3);
  const Tensor anchor = oracle::random_tensor(gen, {2, 3, 4});
  const Tensor target = oracle::random_tensor(gen, {3, 4});
  const CorrespondenceMap map = build_correspondence(target, anchor);
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const Tensor out = inject_refinement(target, anchor, map, mask, 0.8);
  for (std::size_t c = 0; c < 4; ++c) CHECK(out.at({1, c}) == target.at({1, c}));
  for (std::size_t p : {0u, 2u}) {
    const auto [f, q] = map.match[p];
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(out.at({p, c}) == doctest::Approx(0.2 * target.at({p, c}) + 0.8 * anchor.at({f, q, c})).epsilon(1e-6));
    }
  }
  CHECK(bit_equal(inject_refinement(target, anchor, map, mask, 0.0), target));
  CHECK_THROWS_AS(inject_refinement(target, Tensor({1, 3, 4}), map, mask, 0.5), IntegrityError);
  CHECK_THROWS_AS(inject_refinement(target, anchor, map, mask, 1.5), ConfigError);
}

TEST_CASE("step handle shares maps between guidance passes") {
  StepRefinementHandle handle(600);
  CorrespondenceMap map;
  map.match = {{0, 1}};
  const auto stored = handle.store(1, 2, 3, map);
  CHECK(stored->id != 0);
  CHECK(handle.contains(1, 2, 3));
  CHECK(handle.fetch(1, 2, 3).get() == stored.get());
  CHECK_THROWS_AS(handle.fetch(1, 2, 4), IntegrityError);
  CHECK_THROWS_AS(handle.store(1, 2, 3, map), IntegrityError);
}
