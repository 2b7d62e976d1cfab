#pragma once

#include <vector>

#include "foamfed/raster.hpp"

namespace foamfed {

// Per-round training/evaluation summary.
struct RoundMetrics {
  double loss = 0.0;
  double iou = 0.0;
  double pixel_accuracy = 0.0;
  double dice = 0.0;
};

struct LossConfig {
  double alpha = 0.5;          // Dice weight inside the segmentation loss
  double score_weight = 0.05;  // weight of the quality-score term
};

// Overlap metrics on {0,1} masks. Both-empty inputs count as perfect
// agreement (1.0). Dimension mismatches throw.
double dice_coefficient(const BinaryMask& pred, const BinaryMask& truth);
double iou(const BinaryMask& pred, const BinaryMask& truth);
double pixel_accuracy(const BinaryMask& pred, const BinaryMask& truth);

// Soft-probability loss components on flat vectors (probs in [0,1], truth in
// {0,1}). `smooth` keeps the Dice ratio defined on empty masks.
double dice_loss(const std::vector<float>& probs, const std::vector<float>& truth,
                 double smooth = 1.0);
double bce_loss(const std::vector<float>& probs, const std::vector<float>& truth);

// alpha * DiceLoss + (1 - alpha) * BCE over a probability map.
double seg_loss(const ProbMask& pred, const BinaryMask& truth, const LossConfig& cfg);
double seg_loss(const std::vector<float>& probs, const std::vector<float>& truth,
                const LossConfig& cfg);

// |score - iou(pred, truth)|: quality-score error in its evaluation-time form.
double score_loss(double score, const BinaryMask& pred, const BinaryMask& truth);

}  // namespace foamfed
