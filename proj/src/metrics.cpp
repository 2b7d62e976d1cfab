#include "foamfed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace foamfed {

namespace {

void check_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("mask dimensions differ");
}

struct Overlap {
  int64_t inter = 0;
  int64_t pred = 0;
  int64_t truth = 0;
};

Overlap count_overlap(const BinaryMask& pred, const BinaryMask& truth) {
  check_same_shape(pred, truth);
  Overlap o;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    int p = pred.data[i] ? 1 : 0;
    int t = truth.data[i] ? 1 : 0;
    o.inter += p & t;
    o.pred += p;
    o.truth += t;
  }
  return o;
}

std::vector<float> mask_to_floats(const BinaryMask& m) {
  std::vector<float> out(m.data.size());
  for (size_t i = 0; i < m.data.size(); ++i) out[i] = m.data[i] ? 1.0f : 0.0f;
  return out;
}

}  // namespace

double dice_coefficient(const BinaryMask& pred, const BinaryMask& truth) {
  Overlap o = count_overlap(pred, truth);
  if (o.pred + o.truth == 0) return 1.0;
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.pred + o.truth);
}

double iou(const BinaryMask& pred, const BinaryMask& truth) {
  Overlap o = count_overlap(pred, truth);
  int64_t uni = o.pred + o.truth - o.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

double pixel_accuracy(const BinaryMask& pred, const BinaryMask& truth) {
  check_same_shape(pred, truth);
  if (pred.data.empty()) return 1.0;
  int64_t correct = 0;
  for (size_t i = 0; i < pred.data.size(); ++i)
    correct += (pred.data[i] ? 1 : 0) == (truth.data[i] ? 1 : 0);
  return static_cast<double>(correct) / static_cast<double>(pred.data.size());
}

double dice_loss(const std::vector<float>& probs, const std::vector<float>& truth, double smooth) {
  if (probs.size() != truth.size()) throw std::invalid_argument("prob/truth size differ");
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    inter += static_cast<double>(probs[i]) * truth[i];
    psum += probs[i];
    tsum += truth[i];
  }
  return 1.0 - (2.0 * inter + smooth) / (psum + tsum + smooth);
}

double bce_loss(const std::vector<float>& probs, const std::vector<float>& truth) {
  if (probs.size() != truth.size()) throw std::invalid_argument("prob/truth size differ");
  if (probs.empty()) return 0.0;
  const double eps = 1e-7;
  double sum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    double p = std::clamp(static_cast<double>(probs[i]), eps, 1.0 - eps);
    double t = truth[i];
    sum += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return sum / static_cast<double>(probs.size());
}

double seg_loss(const std::vector<float>& probs, const std::vector<float>& truth,
                const LossConfig& cfg) {
  return cfg.alpha * dice_loss(probs, truth) + (1.0 - cfg.alpha) * bce_loss(probs, truth);
}

double seg_loss(const ProbMask& pred, const BinaryMask& truth, const LossConfig& cfg) {
  if (pred.width != truth.width || pred.height != truth.height)
    throw std::invalid_argument("mask dimensions differ");
  return seg_loss(pred.data, mask_to_floats(truth), cfg);
}

double score_loss(double score, const BinaryMask& pred, const BinaryMask& truth) {
  return std::abs(score - iou(pred, truth));
}

}  // namespace foamfed
