#include "foamfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "foamfed/imaging.hpp"
#include "foamfed/rng.hpp"

namespace foamfed {

namespace {

constexpr int K = kFeatureChannels;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_manifest(const ModelParams& p) {
  auto need = [&](const char* name, uint32_t dim) {
    const NamedTensor* t = p.find(name);
    if (!t) throw std::invalid_argument(std::string("missing tensor '") + name + "'");
    if (t->shape != std::vector<uint32_t>{dim})
      throw std::invalid_argument(std::string("tensor '") + name + "' has wrong shape");
  };
  need("w", K);
  need("b", 1);
  need("w_s", K);
  need("b_s", 1);
}

}  // namespace

std::vector<PointPrompt> generate_point_prompts(const BinaryMask& gt, uint64_t rng_seed) {
  ComponentLabels labels = label_components(gt);
  if (labels.count == 0)
    return {PointPrompt{gt.width / 2, gt.height / 2, 0}};

  // Pixels of each component in row-major order, components in first-seen order.
  std::vector<std::vector<std::pair<int, int>>> pixels(labels.count);
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      int32_t lab = labels.labels[static_cast<size_t>(y) * gt.width + x];
      if (lab > 0) pixels[lab - 1].emplace_back(x, y);
    }

  Rng rng(rng_seed);
  std::vector<PointPrompt> prompts;
  prompts.reserve(pixels.size());
  for (const auto& comp : pixels) {
    auto [x, y] = comp[rng.bounded(static_cast<uint32_t>(comp.size()))];
    prompts.push_back(PointPrompt{x, y, 1});
  }
  return prompts;
}

FeatureMap extract_static_features(const GrayImage& img) {
  const int w = img.width, h = img.height;
  FeatureMap fm(w, h);
  auto px = [&](int x, int y) -> double {
    return img.data[static_cast<size_t>(reflect_index(y, h)) * w + reflect_index(x, w)];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = img.data[static_cast<size_t>(y) * w + x];
      double sum = 0.0, sum2 = 0.0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          double u = px(x + dx, y + dy);
          sum += u;
          sum2 += u * u;
        }
      double mean = sum / 25.0;
      double var = std::max(0.0, sum2 / 25.0 - mean * mean);

      double gx = (px(x + 1, y - 1) - px(x - 1, y - 1)) + 2 * (px(x + 1, y) - px(x - 1, y)) +
                  (px(x + 1, y + 1) - px(x - 1, y + 1));
      double gy = (px(x - 1, y + 1) - px(x - 1, y - 1)) + 2 * (px(x, y + 1) - px(x, y - 1)) +
                  (px(x + 1, y + 1) - px(x + 1, y - 1));
      gx /= 255.0;
      gy /= 255.0;
      double mag = std::sqrt(gx * gx + gy * gy) / (4.0 * std::sqrt(2.0));

      fm.at(x, y, 0) = static_cast<float>(v / 255.0);
      fm.at(x, y, 1) = static_cast<float>(mean / 255.0);
      fm.at(x, y, 2) = static_cast<float>(std::sqrt(var) / 127.5);
      fm.at(x, y, 3) = static_cast<float>(mag);
    }
  }
  return fm;
}

void apply_prompt_channels(FeatureMap& fm, const std::vector<PointPrompt>& prompts) {
  const int w = fm.width, h = fm.height;
  const double tau = 0.1 * std::sqrt(static_cast<double>(w) * w + static_cast<double>(h) * h);
  std::vector<const PointPrompt*> pos, neg;
  for (const auto& p : prompts) {
    if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h)
      throw std::invalid_argument("prompt out of bounds");
    (p.label == 1 ? pos : neg).push_back(&p);
  }
  auto fill = [&](int channel, const std::vector<const PointPrompt*>& pts) {
    if (pts.empty()) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) fm.at(x, y, channel) = 0.0f;
      return;
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double best = 1e300;
        for (const auto* p : pts) {
          double dx = x - p->x, dy = y - p->y;
          best = std::min(best, dx * dx + dy * dy);
        }
        fm.at(x, y, channel) = static_cast<float>(std::exp(-std::sqrt(best) / tau));
      }
  };
  fill(4, pos);
  fill(5, neg);
}

FeatureMap extract_features(const Image& img, const std::vector<PointPrompt>& prompts) {
  FeatureMap fm = extract_static_features(to_grayscale(img));
  apply_prompt_channels(fm, prompts);
  return fm;
}

ModelParams make_model_params() {
  ModelParams p;
  p.tensors.emplace_back("w", std::vector<uint32_t>{K});
  p.tensors.emplace_back("b", std::vector<uint32_t>{1});
  p.tensors.emplace_back("w_s", std::vector<uint32_t>{K});
  p.tensors.emplace_back("b_s", std::vector<uint32_t>{1});
  return p;
}

ForwardResult forward(const ModelParams& params, const FeatureMap& features) {
  check_manifest(params);
  const auto& w = params.at("w").data;
  const double b = params.at("b").data[0];
  const auto& ws = params.at("w_s").data;
  const double bs = params.at("b_s").data[0];

  const size_t n = static_cast<size_t>(features.width) * features.height;
  ForwardResult res;
  res.probs = ProbMask(features.width, features.height);
  std::array<double, K> fsum{};
  for (size_t i = 0; i < n; ++i) {
    double z = b;
    for (int c = 0; c < K; ++c) {
      double f = features.data[i * K + c];
      z += w[c] * f;
      fsum[c] += f;
    }
    res.probs.data[i] = static_cast<float>(sigmoid(z));
  }
  double zs = bs;
  for (int c = 0; c < K; ++c) {
    res.mean_features[c] = fsum[c] / static_cast<double>(n);
    zs += ws[c] * res.mean_features[c];
  }
  res.score = sigmoid(zs);
  if (!std::isfinite(res.score)) throw std::runtime_error("non-finite score");
  return res;
}

BinaryMask threshold_probs(const ProbMask& probs, double threshold) {
  BinaryMask m(probs.width, probs.height);
  for (size_t i = 0; i < probs.data.size(); ++i)
    m.data[i] = probs.data[i] > threshold ? 1 : 0;
  return m;
}

ModelParams gradient(const ModelParams& params, const std::vector<GradientSample>& batch,
                     const LossConfig& loss, double* loss_out) {
  check_manifest(params);
  if (batch.empty()) throw std::invalid_argument("empty gradient batch");

  ModelParams grads = make_model_params();
  auto& gw = grads.at("w").data;
  auto& gb = grads.at("b").data;
  auto& gws = grads.at("w_s").data;
  auto& gbs = grads.at("b_s").data;
  std::array<double, K> acc_w{}, acc_ws{};
  double acc_b = 0.0, acc_bs = 0.0, acc_loss = 0.0;

  const double smooth = 1.0;
  const double eps = 1e-7;

  for (const auto& sample : batch) {
    const FeatureMap& fm = *sample.features;
    const BinaryMask& gt = *sample.truth;
    if (fm.width != gt.width || fm.height != gt.height)
      throw std::invalid_argument("feature/truth dimensions differ");
    ForwardResult fwd = forward(params, fm);
    const size_t n = static_cast<size_t>(fm.width) * fm.height;
    const double m = static_cast<double>(n);

    // Dice ratio terms: N = 2*sum(p*g) + s, D = sum(p) + sum(g) + s.
    double inter = 0.0, psum = 0.0, tsum = 0.0, bce = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double p = fwd.probs.data[i];
      double g = gt.data[i] ? 1.0 : 0.0;
      inter += p * g;
      psum += p;
      tsum += g;
      double pc = std::clamp(p, eps, 1.0 - eps);
      bce += -(g * std::log(pc) + (1.0 - g) * std::log(1.0 - pc));
    }
    double num = 2.0 * inter + smooth;
    double den = psum + tsum + smooth;
    double dice_l = 1.0 - num / den;
    bce /= m;

    double score_err = fwd.score - sample.iou_target;
    double sample_loss =
        loss.alpha * dice_l + (1.0 - loss.alpha) * bce + loss.score_weight * score_err * score_err;
    acc_loss += sample_loss;

    // d(seg)/dz_i = alpha*(N - 2*g_i*D)/D^2 * p(1-p) + (1-alpha)*(p - g)/m.
    std::array<double, K> sw{};
    double sb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double p = fwd.probs.data[i];
      double g = gt.data[i] ? 1.0 : 0.0;
      double ddice_dp = (num - 2.0 * g * den) / (den * den);
      double dz = loss.alpha * ddice_dp * p * (1.0 - p) + (1.0 - loss.alpha) * (p - g) / m;
      for (int c = 0; c < K; ++c) sw[c] += dz * fm.data[i * K + c];
      sb += dz;
    }
    // Score head: d/dz_s of score_weight*(score - t)^2.
    double dzs = loss.score_weight * 2.0 * score_err * fwd.score * (1.0 - fwd.score);
    for (int c = 0; c < K; ++c) {
      acc_w[c] += sw[c];
      acc_ws[c] += dzs * fwd.mean_features[c];
    }
    acc_b += sb;
    acc_bs += dzs;
  }

  const double bn = static_cast<double>(batch.size());
  for (int c = 0; c < K; ++c) {
    gw[c] = static_cast<float>(acc_w[c] / bn);
    gws[c] = static_cast<float>(acc_ws[c] / bn);
  }
  gb[0] = static_cast<float>(acc_b / bn);
  gbs[0] = static_cast<float>(acc_bs / bn);
  if (loss_out) *loss_out = acc_loss / bn;
  return grads;
}

AdamWState make_adamw_state(const ModelParams& params) {
  AdamWState st;
  st.m = params;
  st.v = params;
  for (auto& t : st.m.tensors) std::fill(t.data.begin(), t.data.end(), 0.0f);
  for (auto& t : st.v.tensors) std::fill(t.data.begin(), t.data.end(), 0.0f);
  st.t = 0;
  return st;
}

void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  if (!same_manifest(params, grads) || !same_manifest(params, state.m))
    throw std::invalid_argument("parameter/gradient/state manifests differ");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& theta = params.tensors[ti].data;
    const auto& g = grads.tensors[ti].data;
    auto& m = state.m.tensors[ti].data;
    auto& v = state.v.tensors[ti].data;
    for (size_t i = 0; i < theta.size(); ++i) {
      double gi = g[i];
      double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      double old = theta[i];
      theta[i] = static_cast<float>(old - lr * weight_decay * old -
                                    lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

namespace {

void check_finite(const ModelParams& p, const char* what) {
  for (const auto& t : p.tensors)
    for (float v : t.data)
      if (!std::isfinite(v))
        throw std::runtime_error(std::string("non-finite value in ") + what);
}

}  // namespace

RoundMetrics train_local(ModelParams& params, const std::vector<SamplePair>& data,
                         const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  if (cfg.epochs < 1 || cfg.steps_per_epoch < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("epochs, steps and batch size must be >= 1");
  if (cfg.lr < 0.0 || cfg.weight_decay < 0.0)
    throw std::invalid_argument("lr and weight decay must be non-negative");
  check_manifest(params);

  const size_t n = data.size();
  std::vector<FeatureMap> statics;
  statics.reserve(n);
  for (const auto& s : data) statics.push_back(extract_static_features(to_grayscale(s.image)));

  AdamWState st = make_adamw_state(params);
  RoundMetrics acc;
  size_t acc_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x534855464645ull, static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i)
      std::swap(perm[i - 1], perm[shuffle_rng.bounded(static_cast<uint32_t>(i))]);

    const bool last_epoch = epoch == cfg.epochs - 1;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<FeatureMap> feats(static_cast<size_t>(cfg.batch_size));
      std::vector<GradientSample> batch(static_cast<size_t>(cfg.batch_size));
      for (int j = 0; j < cfg.batch_size; ++j) {
        size_t idx = perm[(static_cast<size_t>(step) * cfg.batch_size + j) % n];
        const SamplePair& sp = data[idx];
        feats[j] = statics[idx];
        auto prompts = generate_point_prompts(
            sp.mask, mix_seed(cfg.seed, idx, static_cast<uint64_t>(epoch)));
        apply_prompt_channels(feats[j], prompts);

        ForwardResult fwd = forward(params, feats[j]);
        BinaryMask pred = threshold_probs(fwd.probs);
        double iou_t = iou(pred, sp.mask);
        batch[j] = GradientSample{&feats[j], &sp.mask, iou_t};

        if (last_epoch) {
          double sample_loss = seg_loss(fwd.probs, sp.mask, cfg.loss) +
                               cfg.loss.score_weight * (fwd.score - iou_t) * (fwd.score - iou_t);
          acc.loss += sample_loss;
          acc.iou += iou_t;
          acc.dice += dice_coefficient(pred, sp.mask);
          acc.pixel_accuracy += pixel_accuracy(pred, sp.mask);
          ++acc_count;
        }
      }
      double batch_loss = 0.0;
      ModelParams grads = gradient(params, batch, cfg.loss, &batch_loss);
      if (!std::isfinite(batch_loss)) throw std::runtime_error("non-finite training loss");
      adamw_step(params, grads, st, cfg.lr, cfg.weight_decay);
      check_finite(params, "parameters");
    }
  }

  acc.loss /= static_cast<double>(acc_count);
  acc.iou /= static_cast<double>(acc_count);
  acc.dice /= static_cast<double>(acc_count);
  acc.pixel_accuracy /= static_cast<double>(acc_count);
  return acc;
}

RoundMetrics evaluate(const ModelParams& params, const std::vector<SamplePair>& data,
                      int n_samples, const LossConfig& loss) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  check_manifest(params);

  const size_t n = std::min(static_cast<size_t>(n_samples), data.size());
  RoundMetrics acc;
  for (size_t i = 0; i < n; ++i) {
    const SamplePair& sp = data[i];
    FeatureMap fm = extract_static_features(to_grayscale(sp.image));
    auto prompts = generate_point_prompts(sp.mask, mix_seed(0x4556414Cull, i));
    apply_prompt_channels(fm, prompts);
    ForwardResult fwd = forward(params, fm);
    BinaryMask pred = threshold_probs(fwd.probs);
    double iou_v = iou(pred, sp.mask);
    acc.loss += seg_loss(fwd.probs, sp.mask, loss) +
                loss.score_weight * score_loss(fwd.score, pred, sp.mask);
    acc.iou += iou_v;
    acc.dice += dice_coefficient(pred, sp.mask);
    acc.pixel_accuracy += pixel_accuracy(pred, sp.mask);
  }
  acc.loss /= static_cast<double>(n);
  acc.iou /= static_cast<double>(n);
  acc.dice /= static_cast<double>(n);
  acc.pixel_accuracy /= static_cast<double>(n);
  return acc;
}

}  // namespace foamfed
