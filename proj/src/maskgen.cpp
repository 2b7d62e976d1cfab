#include "foamfed/maskgen.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "foamfed/imageio.hpp"
#include "foamfed/imaging.hpp"

namespace foamfed {

MaskGenConfig MaskGenConfig::from_config(const KeyValueConfig& cfg) {
  MaskGenConfig c;
  c.night_threshold = cfg.get_double("night_threshold", c.night_threshold);
  c.night_gain = cfg.get_double("night_gain", c.night_gain);
  c.night_bias = cfg.get_double("night_bias", c.night_bias);
  c.nlm_h = cfg.get_double("nlm_h", c.nlm_h);
  c.nlm_patch = cfg.get_int("nlm_patch", c.nlm_patch);
  c.nlm_window = cfg.get_int("nlm_window", c.nlm_window);
  c.clahe_clip = cfg.get_double("clahe_clip", c.clahe_clip);
  c.clahe_tiles_x = cfg.get_int("clahe_tiles_x", c.clahe_tiles_x);
  c.clahe_tiles_y = cfg.get_int("clahe_tiles_y", c.clahe_tiles_y);
  c.thresh_block = cfg.get_int("thresh_block", c.thresh_block);
  c.thresh_c = cfg.get_double("thresh_c", c.thresh_c);
  c.open_kernel = cfg.get_int("open_kernel", c.open_kernel);
  c.open_iterations = cfg.get_int("open_iterations", c.open_iterations);
  c.min_area = cfg.get_int("min_area", c.min_area);
  return c;
}

Image render_overlay(const Image& src, const BinaryMask& mask) {
  Image rgb(src.width, src.height, 3);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      uint8_t r, g, b;
      if (src.channels == 1) {
        r = g = b = src.at(x, y, 0);
      } else {
        r = src.at(x, y, 0);
        g = src.at(x, y, 1);
        b = src.at(x, y, 2);
      }
      if (mask.at(x, y)) {
        // 50% blend toward pure red marks foam pixels.
        r = static_cast<uint8_t>((static_cast<int>(r) + 255) / 2);
        g = static_cast<uint8_t>(g / 2);
        b = static_cast<uint8_t>(b / 2);
      }
      rgb.at(x, y, 0) = r;
      rgb.at(x, y, 1) = g;
      rgb.at(x, y, 2) = b;
    }
  }
  return rgb;
}

MaskGenResult generate_mask(const Image& img, const MaskGenConfig& cfg) {
  GrayImage gray = to_grayscale(img);
  double brightness = mean_brightness(gray);

  DayNight branch;
  GrayImage enhanced(gray.width, gray.height);
  if (brightness < cfg.night_threshold) {
    branch = DayNight::kNight;
    GrayImage boosted = linear_scale(gray, cfg.night_gain, cfg.night_bias);
    enhanced = denoise_nlmeans(boosted, cfg.nlm_h, cfg.nlm_patch, cfg.nlm_window);
  } else {
    branch = DayNight::kDay;
    enhanced = clahe(gray, cfg.clahe_clip, cfg.clahe_tiles_x, cfg.clahe_tiles_y);
  }

  BinaryMask th = adaptive_threshold_gaussian(enhanced, cfg.thresh_block, cfg.thresh_c);
  Kernel k(KernelShape::kRect, cfg.open_kernel, cfg.open_kernel);
  BinaryMask opened = morphology(th, MorphOp::kOpen, k, cfg.open_iterations);
  BinaryMask mask = connected_components_filter(opened, cfg.min_area);

  Image overlay = render_overlay(img, mask);
  MaskGenResult res{std::move(mask), std::move(overlay), branch, brightness, 0.0};
  res.foam_fraction =
      static_cast<double>(res.mask.set_count()) / (static_cast<double>(img.width) * img.height);
  return res;
}

DirectoryStats process_directory(const std::string& in_dir, const std::string& out_dir,
                                 const MaskGenConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(in_dir)) throw std::runtime_error("not a directory: " + in_dir);
  fs::create_directories(out_dir);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  DirectoryStats stats;
  for (const auto& p : files) {
    Image img(1, 1, 1);
    try {
      img = decode_image(read_file_bytes(p.string()));
    } catch (const std::exception& ex) {
      spdlog::warn("skipping {}: {}", p.string(), ex.what());
      ++stats.skipped;
      continue;
    }
    MaskGenResult res = generate_mask(img, cfg);
    std::string stem = p.stem().string();
    save_mask_png(res.mask, (fs::path(out_dir) / (stem + "_mask.png")).string());
    save_png(res.overlay, (fs::path(out_dir) / (stem + "_overlay.png")).string());
    ++stats.processed;
    if (res.branch == DayNight::kDay)
      ++stats.day;
    else
      ++stats.night;
    spdlog::info("{}: branch={} brightness={:.2f} foam={:.4f}", p.filename().string(),
                 res.branch == DayNight::kDay ? "day" : "night", res.brightness,
                 res.foam_fraction);
  }
  return stats;
}

}  // namespace foamfed
