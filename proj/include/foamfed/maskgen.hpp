#pragma once

#include <cstdint>
#include <string>

#include "foamfed/config.hpp"
#include "foamfed/raster.hpp"

namespace foamfed {

// Tuning knobs for the automatic day/night mask pipeline. Defaults reproduce
// the reference behaviour; a flat key=value config file can override any knob.
struct MaskGenConfig {
  double night_threshold = 100.0;  // mean brightness below this takes the night branch

  // Night branch: brighten then denoise before thresholding.
  double night_gain = 1.5;
  double night_bias = 40.0;
  double nlm_h = 10.0;
  int nlm_patch = 7;
  int nlm_window = 21;

  // Day branch: local contrast enhancement before thresholding.
  double clahe_clip = 2.0;
  int clahe_tiles_x = 8;
  int clahe_tiles_y = 8;

  // Shared tail: adaptive threshold, opening, small-component removal.
  int thresh_block = 11;
  double thresh_c = 2.0;
  int open_kernel = 3;
  int open_iterations = 2;
  int min_area = 75;

  static MaskGenConfig from_config(const KeyValueConfig& cfg);
};

enum class DayNight : uint8_t { kDay = 0, kNight = 1 };

struct MaskGenResult {
  BinaryMask mask;
  Image overlay;         // source image with foam pixels blended 50% red
  DayNight branch;
  double brightness;     // mean grayscale brightness that chose the branch
  double foam_fraction;  // foam pixels / total pixels
};

// Source image (grayscale expands to RGB) with mask pixels blended 50%
// toward pure red. Dimensions must match.
Image render_overlay(const Image& src, const BinaryMask& mask);

// Runs the full pipeline on one image: grayscale, branch on mean brightness,
// enhance (night: linear scale + NL-means; day: CLAHE), adaptive threshold,
// morphological opening, small-component removal, overlay rendering.
MaskGenResult generate_mask(const Image& img, const MaskGenConfig& cfg = {});

struct DirectoryStats {
  int processed = 0;
  int skipped = 0;
  int day = 0;
  int night = 0;
};

// Processes every decodable image in in_dir (sorted by filename), writing
// <stem>_mask.png and <stem>_overlay.png into out_dir. Files that fail to
// decode are warned about and skipped.
DirectoryStats process_directory(const std::string& in_dir, const std::string& out_dir,
                                 const MaskGenConfig& cfg = {});

}  // namespace foamfed
