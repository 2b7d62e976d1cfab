#pragma once

#include <string>
#include <vector>

#include "foamfed/model.hpp"
#include "foamfed/raster.hpp"
#include "foamfed/tensor.hpp"

namespace foamfed {

struct InferenceConfig {
  int n_points = 50;              // grid prompts per image
  int max_dim = 1024;             // shrink-only bound on the working image
  double overlap_threshold = 0.3; // candidates at/above this IoU are dropped
  double min_area_frac = 0.002;   // component area floor, fraction of w*h
  int morph_kernel = 5;           // elliptical OPEN+CLOSE kernel side
  int morph_iterations = 1;
  int bilateral_d = 9;
  double bilateral_sigma_color = 75.0;
  double bilateral_sigma_space = 75.0;
  double nlm_h = 10.0;
  int nlm_patch = 7;
  int nlm_window = 21;
};

// One per-prompt prediction: the thresholded probability map restricted to
// the connected component containing the prompt, plus the model's score.
struct ScoredMask {
  BinaryMask mask;
  double score = 0.0;
  PointPrompt prompt;
};

struct SegmentationResult {
  BinaryMask mask;      // at working resolution
  double foam_pct = 0.0;
};

// Cell centers of a g x g grid with g = ceil(sqrt(n)), truncated to the
// first n in row-major order (x fastest), duplicates removed. All label 1.
std::vector<PointPrompt> generate_grid_points(int w, int h, int n);

// Greedy selection: sort by score descending (ties broken by prompt position
// in row-major order), accept a candidate iff its IoU with the union of
// accepted masks so far is below overlap_threshold, return the union.
// An empty candidate list yields an empty (0 x 0) mask.
BinaryMask refine_masks(const std::vector<ScoredMask>& candidates, double overlap_threshold);

// 100 * set pixels / total pixels. Throws on an empty mask buffer.
double foam_percentage(const BinaryMask& m);

// Full pipeline: shrink to max_dim, bilateral filter, non-local-means
// denoise, grid prompts, one prediction per prompt, refinement, elliptical
// OPEN then CLOSE, small-component removal, foam percentage.
SegmentationResult segment_foam(const Image& img, const ModelParams& params,
                                const InferenceConfig& cfg = {});

}  // namespace foamfed
