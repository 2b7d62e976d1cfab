#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace foamfed {

// Interleaved row-major u8 raster, 1 (gray) or 3 (RGB) channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, uint8_t fill = 0) : width(w), height(h), channels(c) {
    if (w < 1 || h < 1) throw std::invalid_argument("Image: dims must be >= 1");
    if (c != 1 && c != 3) throw std::invalid_argument("Image: channels must be 1 or 3");
    data.assign(static_cast<size_t>(w) * h * c, fill);
  }

  uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, uint8_t fill = 0) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("GrayImage: dims must be >= 1");
    data.assign(static_cast<size_t>(w) * h, fill);
  }

  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Values are strictly 0 or 1.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h, uint8_t fill = 0) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("BinaryMask: dims must be >= 1");
    if (fill > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
    data.assign(static_cast<size_t>(w) * h, fill);
  }

  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }

  size_t set_count() const {
    size_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
};

// Per-pixel foreground probability in [0,1].
struct ProbMask {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ProbMask() = default;
  ProbMask(int w, int h, float fill = 0.f) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("ProbMask: dims must be >= 1");
    data.assign(static_cast<size_t>(w) * h, fill);
  }

  float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

enum class KernelShape { kRect, kEllipse };

// Morphology structuring element; width/height odd.
struct Kernel {
  KernelShape shape = KernelShape::kRect;
  int width = 3;
  int height = 3;

  Kernel() = default;
  Kernel(KernelShape s, int w, int h) : shape(s), width(w), height(h) {
    if (w < 1 || h < 1 || w % 2 == 0 || h % 2 == 0)
      throw std::invalid_argument("Kernel: dims must be odd and >= 1");
  }
};

// Reflect-101 border indexing (edge pixel not duplicated): -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace foamfed
