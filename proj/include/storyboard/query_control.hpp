#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "storyboard/attention.hpp"
#include "storyboard/rng.hpp"
#include "storyboard/tensor.hpp"

namespace storyboard {

// Closed timestep interval [lo, hi]; empty when lo > hi.
struct Window {
  int lo = 1;
  int hi = 0;

  static Window none() { return {1, 0}; }
  bool empty() const { return lo > hi; }
  bool contains(int t) const { return t >= lo && t <= hi; }
  bool operator==(const Window&) const = default;
};

// Classifier-free guidance runs the network twice per step.
enum class Branch { cond, uncond };

std::string_view to_string(Branch branch);

// Vanilla-pass queries keyed by (timestep, layer), one tensor per guidance branch.
// Written once during the vanilla pass, read-only afterwards.
class FeatureCache {
 public:
  struct Entry {
    Tensor cond;
    Tensor uncond;
  };
  using Key = std::pair<int, int>;

  void put(int t, int layer, Branch branch, Tensor q);
  const Tensor& get(int t, int layer, Branch branch) const;
  bool contains(int t, int layer) const { return entries_.count({t, layer}) != 0; }
  // Number of (timestep, layer) entries.
  std::size_t size() const { return entries_.size(); }
  const std::map<Key, Entry>& entries() const { return entries_; }

  std::uint64_t seed_fingerprint = 0;

 private:
  std::map<Key, Entry> entries_;
};

bool bit_equal(const FeatureCache& a, const FeatureCache& b);

// Queries tagged with where they came from.
struct TaggedQuery {
  Tensor q;
  QueryRole role = QueryRole::consistent;
};

// Phase 1: returns the cached vanilla queries verbatim for t in [t_pres, total_steps].
TaggedQuery q_preserve(const Tensor& q_c, const FeatureCache& cache, int t, int layer, Branch branch,
                       int t_pres, int total_steps);

struct KeyframeIndex {
  std::vector<std::size_t> keyframes;
  std::size_t spacing = 4;

  // Every spacing-th frame, plus the last frame.
  static KeyframeIndex make(std::size_t frames, std::size_t spacing);
  // Nearest keyframes f_a <= frame <= f_b. A keyframe brackets itself with the
  // next keyframe; the last keyframe pairs with the one before it.
  std::pair<std::size_t, std::size_t> bracket(std::size_t frame) const;
};

enum class BlendWeight { sigmoid, linear };

// sigmoid((f_b − f)/(f_b − f_a)) by default; (f_b − f)/(f_b − f_a) for linear.
// A degenerate bracket (f_a == f_b) gives 1.
double blend_weight(std::size_t frame, std::size_t f_a, std::size_t f_b, BlendWeight mode);

// Index of the candidate row with maximal cosine similarity to `query`; ties go
// to the lowest index. Returns -1 for a zero query.
std::int64_t argmax_cosine(std::span<const float> query, const Tensor& candidates,
                           std::span<const double> candidate_norms);

struct FlowResult {
  Tensor q;                          // [P×d]
  std::vector<std::int64_t> match_a; // patch in f_a per patch, -1 when skipped
  std::vector<std::int64_t> match_b;
  std::size_t f_a = 0;
  std::size_t f_b = 0;
  double weight = 1.0;
  std::size_t skipped = 0;
};

// Phase 2 for one frame. Matches vanilla queries q_v[frame] against vanilla
// keyframe queries, then blends the consistent queries q_c at the matched
// locations. q_c and q_v are [F×P×d].
FlowResult q_flow(const Tensor& q_c, const Tensor& q_v, const KeyframeIndex& keyframes, std::size_t frame,
                  BlendWeight mode = BlendWeight::sigmoid);

struct DropoutResult {
  Tensor q;
  double kept_fraction = 0.0;  // share of patches that kept q_c
};

// Per patch (row of the last axis): keep q_c with probability `rate`, else q_injected.
DropoutResult q_dropout(const Tensor& q_injected, const Tensor& q_c, double rate, SeededRng& rng);

struct QuerySchedule {
  int total_steps = 1000;
  int t_pres = 750;
  Window flow_window{0, 749};
  std::vector<int> injection_layers;  // layers eligible for Q flow
  std::size_t keyframe_spacing = 4;
  BlendWeight weight = BlendWeight::sigmoid;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  bool is_injection_layer(int layer) const;
};

struct AuditRecord {
  std::string pass;
  Branch branch = Branch::cond;
  int t = 0;
  int layer = 0;
  QueryRole role = QueryRole::consistent;
  double dropout_kept_fraction = 0.0;
  bool sdsa = false;
  bool refine = false;
  std::uint64_t correspondence_id = 0;

  std::string to_json_line() const;
};

struct QuerySelection {
  TaggedQuery query;
  double kept_fraction = 0.0;
};

// Chooses the queries for one (t, layer, branch) over the batch q_c [S,F,P,d]:
// preservation for t >= t_pres, flow on injection layers inside the flow
// window, otherwise q_c. Dropout then mixes q_c back in per shot.
QuerySelection select_q(int t, int layer, Branch branch, const Tensor& q_c, const FeatureCache& cache,
                        const KeyframeIndex& keyframes, const QuerySchedule& schedule);

}  // namespace storyboard
