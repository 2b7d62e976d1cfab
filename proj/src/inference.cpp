#include "foamfed/inference.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "foamfed/imaging.hpp"
#include "foamfed/metrics.hpp"

namespace foamfed {

std::vector<PointPrompt> generate_grid_points(int w, int h, int n) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (w < 1 || h < 1) throw std::invalid_argument("image dimensions must be positive");
  int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<PointPrompt> points;
  std::set<std::pair<int, int>> seen;
  for (int j = 0; j < g && static_cast<int>(points.size()) < n; ++j) {
    for (int i = 0; i < g && static_cast<int>(points.size()) < n; ++i) {
      int x = (2 * i + 1) * w / (2 * g);
      int y = (2 * j + 1) * h / (2 * g);
      if (seen.emplace(x, y).second) points.push_back(PointPrompt{x, y, 1});
    }
  }
  return points;
}

BinaryMask refine_masks(const std::vector<ScoredMask>& candidates, double overlap_threshold) {
  if (candidates.empty()) return BinaryMask{};
  const int w = candidates[0].mask.width;
  const int h = candidates[0].mask.height;
  for (const auto& c : candidates)
    if (c.mask.width != w || c.mask.height != h)
      throw std::invalid_argument("candidate mask dimensions differ");

  std::vector<size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (candidates[a].score != candidates[b].score)
      return candidates[a].score > candidates[b].score;
    const auto& pa = candidates[a].prompt;
    const auto& pb = candidates[b].prompt;
    if (pa.y != pb.y) return pa.y < pb.y;
    return pa.x < pb.x;
  });

  BinaryMask out(w, h);
  for (size_t idx : order) {
    if (iou(candidates[idx].mask, out) < overlap_threshold) {
      const auto& m = candidates[idx].mask;
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] |= m.data[i];
    }
  }
  return out;
}

double foam_percentage(const BinaryMask& m) {
  if (m.width <= 0 || m.height <= 0) throw std::invalid_argument("empty mask buffer");
  return 100.0 * static_cast<double>(m.set_count()) /
         static_cast<double>(static_cast<int64_t>(m.width) * m.height);
}

namespace {

// The thresholded prediction cut down to the 8-connected component under the
// prompt; empty when the prompt pixel itself is below threshold.
BinaryMask component_at_prompt(const BinaryMask& pred, const PointPrompt& p) {
  BinaryMask out(pred.width, pred.height);
  if (!pred.at(p.x, p.y)) return out;
  ComponentLabels labels = label_components(pred);
  int32_t target = labels.labels[static_cast<size_t>(p.y) * pred.width + p.x];
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = labels.labels[i] == target ? 1 : 0;
  return out;
}

}  // namespace

SegmentationResult segment_foam(const Image& img, const ModelParams& params,
                                const InferenceConfig& cfg) {
  if (cfg.n_points < 1) throw std::invalid_argument("n_points must be >= 1");
  if (cfg.overlap_threshold < 0.0 || cfg.overlap_threshold >= 1.0)
    throw std::invalid_argument("overlap_threshold must be in [0, 1)");
  if (cfg.min_area_frac < 0.0 || cfg.min_area_frac >= 1.0)
    throw std::invalid_argument("min_area_frac must be in [0, 1)");

  Image working = resize_max_dim(img, cfg.max_dim);
  GrayImage gray = to_grayscale(working);
  GrayImage filtered =
      bilateral_filter(gray, cfg.bilateral_d, cfg.bilateral_sigma_color, cfg.bilateral_sigma_space);
  GrayImage denoised = denoise_nlmeans(filtered, cfg.nlm_h, cfg.nlm_patch, cfg.nlm_window);

  const int w = denoised.width;
  const int h = denoised.height;
  std::vector<PointPrompt> prompts = generate_grid_points(w, h, cfg.n_points);

  // Channels 0..3 depend only on the image; the prompt channels are rewritten
  // per prediction, so one feature map is reused across prompts.
  FeatureMap features = extract_static_features(denoised);
  std::vector<ScoredMask> candidates;
  candidates.reserve(prompts.size());
  for (const auto& p : prompts) {
    apply_prompt_channels(features, {p});
    ForwardResult fwd = forward(params, features);
    BinaryMask pred = threshold_probs(fwd.probs, 0.5);
    candidates.push_back(ScoredMask{component_at_prompt(pred, p), fwd.score, p});
  }

  BinaryMask refined = refine_masks(candidates, cfg.overlap_threshold);

  Kernel kernel(KernelShape::kEllipse, cfg.morph_kernel, cfg.morph_kernel);
  BinaryMask opened = morphology(refined, MorphOp::kOpen, kernel, cfg.morph_iterations);
  BinaryMask closed = morphology(opened, MorphOp::kClose, kernel, cfg.morph_iterations);

  int64_t min_area = static_cast<int64_t>(
      std::ceil(cfg.min_area_frac * static_cast<double>(w) * static_cast<double>(h)));
  BinaryMask mask = connected_components_filter(closed, static_cast<int>(min_area));

  SegmentationResult res;
  res.foam_pct = foam_percentage(mask);
  res.mask = std::move(mask);
  return res;
}

}  // namespace foamfed
