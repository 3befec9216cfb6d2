#include "storyboard/toy_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "storyboard/errors.hpp"
#include "storyboard/rng.hpp"

namespace storyboard {

namespace {

constexpr std::size_t kSubjectChannel = 0;
constexpr double kSubjectAmplitude = 2.0;

Tensor random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  Tensor m({rows, cols});
  for (float& v : m.data()) v = static_cast<float>(rng.normal() * scale);
  return m;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// Mean of per-token hashed Gaussian vectors; zero for an empty text.
std::vector<double> text_embedding(const std::string& text, std::size_t channels) {
  std::vector<double> out(channels, 0.0);
  const auto tokens = tokenize(text);
  for (const auto& tok : tokens) {
    SeededRng rng(fnv1a(tok));
    for (auto& v : out) v += rng.normal();
  }
  if (!tokens.empty())
    for (auto& v : out) v /= static_cast<double>(tokens.size());
  return out;
}

}  // namespace

Tensor pool2x(const Tensor& tokens, std::size_t side) {
  const std::size_t c = tokens.dim(1), half = side / 2;
  Tensor out({half * half, c});
  for (std::size_t y = 0; y < half; ++y)
    for (std::size_t x = 0; x < half; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) s += tokens[((2 * y + dy) * side + 2 * x + dx) * c + ch];
        out[(y * half + x) * c + ch] = static_cast<float>(s / 4.0);
      }
  return out;
}

Tensor upsample2x(const Tensor& tokens, std::size_t side) {
  const std::size_t c = tokens.dim(1), full = side * 2;
  Tensor out({full * full, c});
  for (std::size_t y = 0; y < full; ++y)
    for (std::size_t x = 0; x < full; ++x)
      std::copy_n(tokens.data().begin() + ((y / 2) * side + x / 2) * c, c, out.data().begin() + (y * full + x) * c);
  return out;
}

ToyDenoiser::ToyDenoiser(ToyModelSpec spec, const NoiseSchedule& schedule)
    : spec_(std::move(spec)), schedule_(schedule) {
  if (spec_.layers < 1 || spec_.patches_per_side < 1 || spec_.channels < 1 || spec_.frames < 1) {
    throw ConfigError("toy model dimensions must be positive");
  }
  const std::size_t c = static_cast<std::size_t>(spec_.channels);
  const double inv_root = 1.0 / std::sqrt(static_cast<double>(c));
  SeededRng rng(mix_seed({spec_.weight_seed, 0x746f79ull}));
  for (int l = 0; l < spec_.layers; ++l) {
    LayerWeights w;
    w.w_q = random_matrix(rng, c, c, 1.5 * inv_root);
    w.w_k = random_matrix(rng, c, c, 1.5 * inv_root);
    w.w_v = random_matrix(rng, c, c, inv_root);
    w.w_o = random_matrix(rng, c, c, 0.5 * inv_root);
    layers_.push_back(std::move(w));
  }
  w_out_ = random_matrix(rng, c, c, 0.1 * inv_root);
  for (std::size_t i = 0; i < c; ++i) w_out_[i * c + i] += 1.0f;
}

Tensor ToyDenoiser::condition(const std::vector<ShotPrompt>& prompts) const {
  const std::size_t shots = prompts.size(), frames = static_cast<std::size_t>(spec_.frames);
  const std::size_t side = static_cast<std::size_t>(spec_.patches_per_side), patches = side * side;
  const std::size_t c = static_cast<std::size_t>(spec_.channels);
  Tensor bias({shots, frames, patches, c});
  for (std::size_t s = 0; s < shots; ++s) {
    const auto global = text_embedding(prompts[s].full(), c);
    const auto subject = text_embedding(prompts[s].subject, c);
    SeededRng place(mix_seed({fnv1a(prompts[s].setting), 0x626c6f62ull}));
    const double span = static_cast<double>(side - 1);
    const double cx = span * (0.25 + 0.5 * place.uniform());
    const double cy = span * (0.25 + 0.5 * place.uniform());
    const double vx = (place.uniform() - 0.5) * 0.8;
    const double vy = (place.uniform() - 0.5) * 0.3;
    const double sigma = std::max(1.0, static_cast<double>(side) / 6.0);
    for (std::size_t f = 0; f < frames; ++f) {
      const double fx = std::clamp(cx + vx * static_cast<double>(f), 0.0, span);
      const double fy = std::clamp(cy + vy * static_cast<double>(f), 0.0, span);
      for (std::size_t p = 0; p < patches; ++p) {
        const double dx = static_cast<double>(p % side) - fx, dy = static_cast<double>(p / side) - fy;
        const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        float* dst = bias.data().data() + ((s * frames + f) * patches + p) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double local = ch == kSubjectChannel ? kSubjectAmplitude : 0.5 * subject[ch];
          dst[ch] = static_cast<float>(0.3 * global[ch] + blob * local);
        }
      }
    }
  }
  return bias;
}

Tensor ToyDenoiser::predict_noise(const Tensor& x, int t, const Tensor* bias, Branch branch, DenoiserHooks& hooks,
                                  std::size_t sub_batch) const {
  const std::size_t side = static_cast<std::size_t>(spec_.patches_per_side);
  const std::size_t c = static_cast<std::size_t>(spec_.channels);
  if (x.rank() != 4 || x.dim(2) != side * side || x.dim(3) != c) {
    throw DimensionError("toy denoiser: latents " + shape_to_string(x.shape()) + " do not match the model");
  }
  if (bias && bias->shape() != x.shape()) {
    throw DimensionError("toy denoiser: conditioning " + shape_to_string(bias->shape()) + " vs latents " +
                         shape_to_string(x.shape()));
  }
  const std::size_t shots = x.dim(0), frames = x.dim(1), patches = side * side;
  const std::size_t items = shots * frames;
  const double ab = schedule_.alpha_bar(t);
  const double signal = std::sqrt(ab);
  const double total = static_cast<double>(schedule_.total_steps());

  Tensor h(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t ch = i % c;
    const double temb = 0.1 * std::sin(static_cast<double>(ch + 1) * std::numbers::pi * t / total);
    h[i] = static_cast<float>(signal * x[i] + (bias ? (*bias)[i] : 0.0f) + temb);
  }

  for (int l = 0; l < spec_.layers; ++l) {
    try {
      const LayerWeights& w = layers_[static_cast<std::size_t>(l)];
      const std::size_t lside = static_cast<std::size_t>(spec_.layer_side(l));
      const std::size_t lp = lside * lside;
      const bool pooled = lside != side;

      Tensor tokens({items * lp, c});
      for (std::size_t it = 0; it < items; ++it) {
        Tensor frame({patches, c}, std::vector<float>(h.data().begin() + it * patches * c,
                                                      h.data().begin() + (it + 1) * patches * c));
        if (pooled) frame = pool2x(frame, side);
        std::copy(frame.data().begin(), frame.data().end(), tokens.data().begin() + it * lp * c);
      }
      const Shape feat_shape{shots, frames, lp, c};
      AttnFeatures feats;
      feats.q = matmul(tokens, w.w_q).reshaped(feat_shape);
      feats.k = matmul(tokens, w.w_k).reshaped(feat_shape);
      feats.v = matmul(tokens, w.w_v).reshaped(feat_shape);
      feats.layer_id = l;
      feats.role = hooks.substitute_queries(t, l, branch, feats.q);
      if (feats.q.shape() != feat_shape) throw DimensionError("query hook changed the query shape");

      SdsaOptions options;
      const SubjectMaskSet* masks = hooks.sdsa_masks(t, l, branch, options);
      const std::size_t chunk = sub_batch == 0 ? items : sub_batch;
      const Tensor attended = sub_batched_attention(feats, masks, chunk, options);
      Tensor o = matmul(attended.reshaped({items * lp, c}), w.w_o).reshaped(feat_shape);
      hooks.inject_outputs(t, l, branch, o);
      if (o.shape() != feat_shape) throw DimensionError("output hook changed the output shape");

      for (std::size_t it = 0; it < items; ++it) {
        Tensor block({lp, c}, std::vector<float>(o.data().begin() + it * lp * c, o.data().begin() + (it + 1) * lp * c));
        if (pooled) block = upsample2x(block, lside);
        float* dst = h.data().data() + it * patches * c;
        for (std::size_t i = 0; i < patches * c; ++i) dst[i] += block[i];
      }
    } catch (const StepError&) {
      throw;
    } catch (const std::exception& e) {
      throw StepError(t, l, e.what());
    }
  }

  const Tensor x0 = matmul(h.reshaped({items * patches, c}), w_out_);
  const double noise = std::sqrt(std::max(0.0, 1.0 - ab));
  Tensor eps(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0_hat = std::tanh(static_cast<double>(x0[i]));
    eps[i] = noise > 0.0 ? static_cast<float>((x[i] - signal * x0_hat) / noise) : 0.0f;
  }
  return eps;
}

}  // namespace storyboard
