#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "foamfed/dataset.hpp"
#include "foamfed/metrics.hpp"
#include "foamfed/raster.hpp"
#include "foamfed/tensor.hpp"

namespace foamfed {

// A point cue: label 1 marks foreground, 0 background.
struct PointPrompt {
  int x = 0;
  int y = 0;
  int label = 1;
};

inline constexpr int kFeatureChannels = 6;

// Per-pixel feature stack, channel-interleaved. Channels: intensity, 5x5
// local mean, 5x5 local std, Sobel gradient magnitude, positive-prompt
// proximity, negative-prompt proximity. All values in [0,1].
struct FeatureMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // (y*width + x)*kFeatureChannels + c

  FeatureMap() = default;
  FeatureMap(int w, int h)
      : width(w), height(h),
        data(static_cast<size_t>(w) * h * kFeatureChannels, 0.0f) {}
  float& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * kFeatureChannels + c];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * kFeatureChannels + c];
  }
};

// One positive prompt per 8-connected foreground component (uniform-random
// pixel within it); an empty mask yields a single negative prompt at the
// image center. Deterministic given the seed.
std::vector<PointPrompt> generate_point_prompts(const BinaryMask& gt, uint64_t rng_seed);

// Channels 0..3 (prompt-independent). Channels 4 and 5 are left zero.
FeatureMap extract_static_features(const GrayImage& img);

// Fills channels 4 (positive) and 5 (negative) with exp(-d/tau), d the
// Euclidean distance to the nearest prompt of that label, tau = 0.1 times the
// image diagonal. A label with no prompts leaves its channel at zero.
void apply_prompt_channels(FeatureMap& fm, const std::vector<PointPrompt>& prompts);

// Full feature stack in one call.
FeatureMap extract_features(const Image& img, const std::vector<PointPrompt>& prompts);

// Zero-initialized parameter manifest: w[K], b[1], w_s[K], b_s[1].
ModelParams make_model_params();

struct ForwardResult {
  ProbMask probs;
  double score = 0.0;
  std::array<double, kFeatureChannels> mean_features{};
};

// prob(p) = sigmoid(w . f(p) + b); score = sigmoid(w_s . mean_p f(p) + b_s).
ForwardResult forward(const ModelParams& params, const FeatureMap& features);

// p > 0.5 becomes 1. Strict, so an all-zero model predicts an empty mask.
BinaryMask threshold_probs(const ProbMask& probs, double threshold = 0.5);

// One element of a gradient batch. iou_target is treated as a constant.
struct GradientSample {
  const FeatureMap* features = nullptr;
  const BinaryMask* truth = nullptr;
  double iou_target = 0.0;
};

// Analytic gradient of the mean batch loss
//   L = alpha*DiceLoss + (1-alpha)*BCE + score_weight*(score - iou_target)^2
// with respect to every parameter tensor. Returns the mean batch loss via
// loss_out when non-null.
ModelParams gradient(const ModelParams& params, const std::vector<GradientSample>& batch,
                     const LossConfig& loss, double* loss_out = nullptr);

struct AdamWState {
  ModelParams m;
  ModelParams v;
  int64_t t = 0;
};

AdamWState make_adamw_state(const ModelParams& params);

// Decoupled-decay AdamW: theta -= lr*lambda*theta_old + lr*mhat/(sqrt(vhat)+eps),
// with bias-corrected moments.
void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

struct TrainConfig {
  int epochs = 30;
  int steps_per_epoch = 9;
  int batch_size = 32;
  double lr = 1e-5;
  double weight_decay = 4e-5;
  LossConfig loss;
  uint64_t seed = 0;
};

// E epochs of S minibatch AdamW steps over a seeded per-epoch shuffle; batch
// element j of step s is permutation[(s*B + j) mod N]. Prompts are redrawn
// per sample per epoch from hash(seed, index, epoch). Returns metrics
// averaged over the last epoch's visits. Throws on NaN/Inf.
RoundMetrics train_local(ModelParams& params, const std::vector<SamplePair>& data,
                         const TrainConfig& cfg);

// Forward-only metrics over the first min(n_samples, size) items.
RoundMetrics evaluate(const ModelParams& params, const std::vector<SamplePair>& data,
                      int n_samples, const LossConfig& loss = {});

}  // namespace foamfed
