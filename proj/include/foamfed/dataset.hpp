#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foamfed/raster.hpp"

namespace foamfed {

// One training example. Image and mask always share dimensions.
struct SamplePair {
  Image image;
  BinaryMask mask;
  std::string source_id;
};

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_brightness_contrast = 0.2;
  double p_affine = 0.5;
  double shift_limit = 0.05;        // fraction of width/height
  double scale_limit = 0.10;        // multiplicative, 1 +/- limit
  double rotate_limit_deg = 15.0;
  double brightness_limit = 0.2;    // additive, fraction of full range
  double contrast_limit = 0.2;      // multiplicative about mid-gray
  uint64_t seed = 0;
};

enum class PartitionMode { kIid, kBySource };

// Disjoint cover of sample indices, one sorted list per client.
struct Partition {
  std::vector<std::vector<size_t>> assignments;
  PartitionMode mode = PartitionMode::kIid;
};

// Loads image/mask pairs matched by filename stem: images/<stem>.(png|jpg),
// masks/<stem>_mask.png. Pairs are sorted by stem; images without a mask are
// warned about and skipped. target_w/target_h of 0 keeps native resolution
// (dimensions must then agree); otherwise images are resized bilinearly and
// masks nearest-neighbor then re-binarized. Throws if no pair matches.
std::vector<SamplePair> load_pairs(const std::string& image_dir, const std::string& mask_dir,
                                   int target_w, int target_h);

// Deterministic per-sample augmentation. Geometric transforms (flips, affine)
// apply identically to image and mask; photometric applies to the image only.
// Transform order is fixed: hflip, vflip, affine, photometric.
SamplePair augment(const SamplePair& pair, const AugmentConfig& cfg, uint64_t sample_seed);

// Affine resample used by augment: rotate about the image center, scale, then
// shift by (dx, dy) pixels. Image sampled bilinearly, mask nearest-neighbor;
// out-of-bounds source pixels read as 0.
SamplePair apply_affine(const SamplePair& pair, double angle_deg, double scale, double dx,
                        double dy);

// Splits n_samples across n_clients. IID: seeded shuffle dealt round-robin.
// BY_SOURCE: distinct source ids (sorted) are assigned to clients round-robin
// and every sample follows its source. Each client's index list is sorted.
Partition partition(size_t n_samples, const std::vector<std::string>& sources, PartitionMode mode,
                    int n_clients, uint64_t seed);

struct SynthConfig {
  int width = 256;
  int height = 256;
  double noise = 6.0;            // additive Gaussian pixel noise stddev
  std::string source_id = "synth";
  int min_blobs = 2;
  int max_blobs = 6;
};

// Procedural foam scenes: dark low-frequency water background (levels 20..80)
// with bright speckled ellipse-union foam blobs (levels 180..255) and an exact
// ground-truth mask. Sample i depends only on (seed, i), never on n, and blob
// axes are rescaled until foam covers 5%..50% of the frame.
SamplePair synth_sample(const SynthConfig& cfg, uint64_t sample_seed);
std::vector<SamplePair> synth_generate(int n, const SynthConfig& cfg, uint64_t seed);
std::vector<SamplePair> synth_generate(int n, int width, int height, uint64_t seed);

}  // namespace foamfed
