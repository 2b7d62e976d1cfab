#pragma once

#include <cstdint>
#include <vector>

#include "foamfed/raster.hpp"

namespace foamfed {

// ITU-R 601 luma: round(0.299 R + 0.587 G + 0.114 B). 1-channel input is copied.
GrayImage to_grayscale(const Image& img);

// Arithmetic mean of pixel values, in [0, 255]. Throws on empty image.
double mean_brightness(const GrayImage& g);

// Per-pixel clamp(round(gain * v + bias), 0, 255). gain must be >= 0.
GrayImage linear_scale(const GrayImage& g, double gain, double bias);

// Contrast-limited adaptive histogram equalization.
//
// Per tile: 256-bin histogram, clipped at max(1, clip_limit * tile_pixels / 256)
// with the excess redistributed uniformly (one pass), then mapped through the
// classic equalization LUT  round((cdf(v) - cdf_min) * 255 / (n - cdf_min)).
// A tile holding a single gray level maps through the identity. Output pixels
// bilinearly interpolate between the LUTs of the four nearest tile centers.
// clip_limit may be +infinity (no clipping). Throws if the image is smaller
// than the tile grid.
GrayImage clahe(const GrayImage& g, double clip_limit, int tiles_x, int tiles_y);

// Non-local means denoising.
//
// For every pixel the candidates are all pixels within the search x search
// window; each candidate is weighted by exp(-msd / h^2) where msd is the mean
// squared difference between the template x template patches around the two
// pixels (patch windows clipped to the image, shifted reads reflected).
// Implemented with per-offset integral images; identical by construction to
// the direct double loop the tests use as oracle.
GrayImage denoise_nlmeans(const GrayImage& g, double h, int template_size, int search_size);

// Edge-preserving smoothing: weight = spatial Gaussian x range Gaussian,
// normalized over the diameter x diameter window. diameter must be odd.
GrayImage bilateral_filter(const GrayImage& g, int diameter, double sigma_color,
                           double sigma_space);

// Pixel = 1 iff v > (Gaussian-weighted local mean over block x block) - c.
// Bright-on-dark polarity: foam is bright against water. The Gaussian sigma
// follows the usual ksize rule 0.3*((block-1)*0.5 - 1) + 0.8; block odd >= 3.
BinaryMask adaptive_threshold_gaussian(const GrayImage& g, int block, double c);

enum class MorphOp { kErode, kDilate, kOpen, kClose };

// Binary morphology with reflected borders. OPEN = erode^it then dilate^it,
// CLOSE the reverse, matching the usual iterated-composite semantics.
BinaryMask morphology(const BinaryMask& m, MorphOp op, const Kernel& k, int iterations);

// 8-connected component labels. labels[i] is 0 for background, 1..count for
// components in row-major discovery order; areas[L-1] is component L's size.
struct ComponentLabels {
  int width = 0;
  int height = 0;
  std::vector<int32_t> labels;
  int count = 0;
  std::vector<int64_t> areas;
};

ComponentLabels label_components(const BinaryMask& m);

// Zeroes every 8-connected component with pixel count < min_area; all other
// pixels are preserved exactly.
BinaryMask connected_components_filter(const BinaryMask& m, int min_area);

// Bilinear resize (center-aligned sampling, clamped).
Image resize_bilinear(const Image& img, int out_w, int out_h);

// Shrink so the longest side equals max_dim, preserving aspect ratio;
// images already within max_dim are returned unchanged.
Image resize_max_dim(const Image& img, int max_dim);

// Nearest-neighbor mask resize (used when pairing masks with resized images).
BinaryMask resize_nearest(const BinaryMask& m, int out_w, int out_h);

}  // namespace foamfed
