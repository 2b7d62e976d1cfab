#include "foamfed/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <utility>

namespace foamfed {

namespace {

uint8_t clamp_u8(double v) {
  double r = std::round(v);
  if (r < 0.0) return 0;
  if (r > 255.0) return 255;
  return static_cast<uint8_t>(r);
}

// Normalized 1-D Gaussian with the usual ksize-derived sigma.
std::vector<double> gaussian_kernel_1d(int ksize) {
  double sigma = 0.3 * ((ksize - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> k(ksize);
  int r = ksize / 2;
  double sum = 0.0;
  for (int i = 0; i < ksize; ++i) {
    double d = i - r;
    k[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

GrayImage to_grayscale(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("to_grayscale: unsupported channel count");
  GrayImage out(img.width, img.height);
  if (img.channels == 1) {
    out.data = img.data;
    return out;
  }
  size_t n = img.pixel_count();
  for (size_t i = 0; i < n; ++i) {
    double r = img.data[i * 3 + 0];
    double g = img.data[i * 3 + 1];
    double b = img.data[i * 3 + 2];
    out.data[i] = clamp_u8(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return out;
}

double mean_brightness(const GrayImage& g) {
  if (g.data.empty()) throw std::invalid_argument("mean_brightness: empty image");
  uint64_t sum = 0;
  for (uint8_t v : g.data) sum += v;
  return static_cast<double>(sum) / static_cast<double>(g.data.size());
}

GrayImage linear_scale(const GrayImage& g, double gain, double bias) {
  if (gain < 0.0) throw std::invalid_argument("linear_scale: gain must be >= 0");
  GrayImage out(g.width, g.height);
  for (size_t i = 0; i < g.data.size(); ++i)
    out.data[i] = clamp_u8(gain * g.data[i] + bias);
  return out;
}

GrayImage clahe(const GrayImage& g, double clip_limit, int tiles_x, int tiles_y) {
  if (tiles_x < 1 || tiles_y < 1) throw std::invalid_argument("clahe: tiles must be >= 1");
  if (clip_limit <= 0.0) throw std::invalid_argument("clahe: clip_limit must be > 0");
  if (g.width < tiles_x || g.height < tiles_y)
    throw std::invalid_argument("clahe: image smaller than tile grid");

  const int W = g.width, H = g.height;
  // Tile bounds and center coordinates.
  std::vector<int> x0(tiles_x), x1(tiles_x), y0(tiles_y), y1(tiles_y);
  std::vector<double> cx(tiles_x), cy(tiles_y);
  for (int t = 0; t < tiles_x; ++t) {
    x0[t] = static_cast<int>(static_cast<int64_t>(t) * W / tiles_x);
    x1[t] = static_cast<int>(static_cast<int64_t>(t + 1) * W / tiles_x);
    cx[t] = (x0[t] + x1[t] - 1) / 2.0;
  }
  for (int t = 0; t < tiles_y; ++t) {
    y0[t] = static_cast<int>(static_cast<int64_t>(t) * H / tiles_y);
    y1[t] = static_cast<int>(static_cast<int64_t>(t + 1) * H / tiles_y);
    cy[t] = (y0[t] + y1[t] - 1) / 2.0;
  }

  // Per-tile equalization LUTs.
  std::vector<std::array<uint8_t, 256>> luts(static_cast<size_t>(tiles_x) * tiles_y);
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      int64_t hist[256] = {0};
      int64_t count = 0;
      for (int y = y0[ty]; y < y1[ty]; ++y)
        for (int x = x0[tx]; x < x1[tx]; ++x) {
          ++hist[g.at(x, y)];
          ++count;
        }

      if (std::isfinite(clip_limit)) {
        int64_t cap = std::max<int64_t>(
            1, static_cast<int64_t>(clip_limit * static_cast<double>(count) / 256.0));
        int64_t excess = 0;
        for (int i = 0; i < 256; ++i) {
          if (hist[i] > cap) {
            excess += hist[i] - cap;
            hist[i] = cap;
          }
        }
        int64_t per = excess / 256;
        int64_t rem = excess % 256;
        for (int i = 0; i < 256; ++i) hist[i] += per + (i < rem ? 1 : 0);
      }

      auto& lut = luts[static_cast<size_t>(ty) * tiles_x + tx];
      int64_t cdf = 0, cdf_min = 0;
      for (int i = 0; i < 256; ++i)
        if (hist[i] > 0) { cdf_min = hist[i]; break; }
      // Redistribution keeps the total pixel count, so cdf[255] == count.
      if (cdf_min == count) {
        for (int i = 0; i < 256; ++i) lut[i] = static_cast<uint8_t>(i);
      } else {
        double scale = 255.0 / static_cast<double>(count - cdf_min);
        for (int i = 0; i < 256; ++i) {
          cdf += hist[i];
          double mapped = (static_cast<double>(cdf - cdf_min)) * scale;
          lut[i] = clamp_u8(std::max(0.0, mapped));
        }
      }
    }
  }

  auto tile_lo = [](const std::vector<double>& centers, int n, double coord) {
    int lo = 0;
    while (lo + 1 < n && centers[lo + 1] <= coord) ++lo;
    return lo;
  };

  GrayImage out(W, H);
  for (int y = 0; y < H; ++y) {
    int ty0 = tile_lo(cy, tiles_y, y);
    int ty1 = std::min(ty0 + 1, tiles_y - 1);
    double fy = 0.0;
    if (ty1 > ty0 && y >= cy[ty0]) fy = (y - cy[ty0]) / (cy[ty1] - cy[ty0]);
    if (y < cy[0]) { ty1 = ty0; fy = 0.0; }
    for (int x = 0; x < W; ++x) {
      int tx0 = tile_lo(cx, tiles_x, x);
      int tx1 = std::min(tx0 + 1, tiles_x - 1);
      double fx = 0.0;
      if (tx1 > tx0 && x >= cx[tx0]) fx = (x - cx[tx0]) / (cx[tx1] - cx[tx0]);
      if (x < cx[0]) { tx1 = tx0; fx = 0.0; }

      uint8_t v = g.at(x, y);
      double v00 = luts[static_cast<size_t>(ty0) * tiles_x + tx0][v];
      double v01 = luts[static_cast<size_t>(ty0) * tiles_x + tx1][v];
      double v10 = luts[static_cast<size_t>(ty1) * tiles_x + tx0][v];
      double v11 = luts[static_cast<size_t>(ty1) * tiles_x + tx1][v];
      double top = v00 * (1.0 - fx) + v01 * fx;
      double bot = v10 * (1.0 - fx) + v11 * fx;
      out.at(x, y) = clamp_u8(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

GrayImage denoise_nlmeans(const GrayImage& g, double h, int template_size, int search_size) {
  if (template_size < 1 || search_size < 1 || template_size % 2 == 0 || search_size % 2 == 0)
    throw std::invalid_argument("denoise_nlmeans: window sizes must be odd and >= 1");
  if (template_size > search_size)
    throw std::invalid_argument("denoise_nlmeans: template must be <= search");

  const int W = g.width, H = g.height;
  const int tr = template_size / 2;
  const int sr = search_size / 2;
  const double h2 = std::max(h, 1e-9) * std::max(h, 1e-9);

  std::vector<double> num(static_cast<size_t>(W) * H, 0.0);
  std::vector<double> den(static_cast<size_t>(W) * H, 0.0);

  // One squared-difference plane + integral image per search offset; patch
  // distances then come from four integral lookups per pixel.
  std::vector<double> diff2(static_cast<size_t>(W) * H);
  std::vector<double> integral(static_cast<size_t>(W + 1) * (H + 1));

  for (int dy = -sr; dy <= sr; ++dy) {
    for (int dx = -sr; dx <= sr; ++dx) {
      for (int y = 0; y < H; ++y) {
        int sy = reflect_index(y + dy, H);
        for (int x = 0; x < W; ++x) {
          int sx = reflect_index(x + dx, W);
          double d = static_cast<double>(g.at(x, y)) - static_cast<double>(g.at(sx, sy));
          diff2[static_cast<size_t>(y) * W + x] = d * d;
        }
      }
      for (int x = 0; x <= W; ++x) integral[x] = 0.0;
      for (int y = 1; y <= H; ++y) {
        integral[static_cast<size_t>(y) * (W + 1)] = 0.0;
        double row = 0.0;
        for (int x = 1; x <= W; ++x) {
          row += diff2[static_cast<size_t>(y - 1) * W + (x - 1)];
          integral[static_cast<size_t>(y) * (W + 1) + x] =
              integral[static_cast<size_t>(y - 1) * (W + 1) + x] + row;
        }
      }
      for (int y = 0; y < H; ++y) {
        int py0 = std::max(0, y - tr), py1 = std::min(H - 1, y + tr);
        int vy = reflect_index(y + dy, H);
        for (int x = 0; x < W; ++x) {
          int px0 = std::max(0, x - tr), px1 = std::min(W - 1, x + tr);
          double s = integral[static_cast<size_t>(py1 + 1) * (W + 1) + (px1 + 1)] -
                     integral[static_cast<size_t>(py0) * (W + 1) + (px1 + 1)] -
                     integral[static_cast<size_t>(py1 + 1) * (W + 1) + px0] +
                     integral[static_cast<size_t>(py0) * (W + 1) + px0];
          double area = static_cast<double>(py1 - py0 + 1) * (px1 - px0 + 1);
          double w = std::exp(-(s / area) / h2);
          int vx = reflect_index(x + dx, W);
          size_t idx = static_cast<size_t>(y) * W + x;
          num[idx] += w * g.at(vx, vy);
          den[idx] += w;
        }
      }
    }
  }

  GrayImage out(W, H);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = clamp_u8(num[i] / den[i]);
  return out;
}

GrayImage bilateral_filter(const GrayImage& g, int diameter, double sigma_color,
                           double sigma_space) {
  if (diameter < 1 || diameter % 2 == 0)
    throw std::invalid_argument("bilateral_filter: diameter must be odd and >= 1");
  const int r = diameter / 2;
  const int W = g.width, H = g.height;

  std::vector<double> spatial(static_cast<size_t>(diameter) * diameter);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      spatial[static_cast<size_t>(dy + r) * diameter + (dx + r)] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_space * sigma_space));

  double range[256];
  for (int d = 0; d < 256; ++d)
    range[d] = std::exp(-(static_cast<double>(d) * d) / (2.0 * sigma_color * sigma_color));

  GrayImage out(W, H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int center = g.at(x, y);
      double num = 0.0, den = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        int sy = reflect_index(y + dy, H);
        for (int dx = -r; dx <= r; ++dx) {
          int sx = reflect_index(x + dx, W);
          int v = g.at(sx, sy);
          double w = spatial[static_cast<size_t>(dy + r) * diameter + (dx + r)] *
                     range[std::abs(v - center)];
          num += w * v;
          den += w;
        }
      }
      out.at(x, y) = clamp_u8(num / den);
    }
  }
  return out;
}

BinaryMask adaptive_threshold_gaussian(const GrayImage& g, int block, double c) {
  if (block < 3 || block % 2 == 0)
    throw std::invalid_argument("adaptive_threshold_gaussian: block must be odd and >= 3");
  const int W = g.width, H = g.height;
  const int r = block / 2;
  std::vector<double> k = gaussian_kernel_1d(block);

  // Separable Gaussian-weighted local mean with reflected borders.
  std::vector<double> tmp(static_cast<size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * g.at(reflect_index(x + i, W), y);
      tmp[static_cast<size_t>(y) * W + x] = s;
    }

  BinaryMask out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double mean = 0.0;
      for (int i = -r; i <= r; ++i)
        mean += k[i + r] * tmp[static_cast<size_t>(reflect_index(y + i, H)) * W + x];
      out.at(x, y) = g.at(x, y) > mean - c ? 1 : 0;
    }
  return out;
}

namespace {

std::vector<std::pair<int, int>> kernel_offsets(const Kernel& k) {
  std::vector<std::pair<int, int>> offs;
  int rw = k.width / 2, rh = k.height / 2;
  for (int dy = -rh; dy <= rh; ++dy) {
    for (int dx = -rw; dx <= rw; ++dx) {
      if (k.shape == KernelShape::kEllipse) {
        double nx = rw > 0 ? static_cast<double>(dx) / rw : 0.0;
        double ny = rh > 0 ? static_cast<double>(dy) / rh : 0.0;
        if (nx * nx + ny * ny > 1.0 + 1e-12) continue;
      }
      offs.emplace_back(dx, dy);
    }
  }
  return offs;
}

BinaryMask erode_or_dilate(const BinaryMask& m, const std::vector<std::pair<int, int>>& offs,
                           bool erode) {
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      uint8_t v = erode ? 1 : 0;
      for (auto [dx, dy] : offs) {
        uint8_t s = m.at(reflect_index(x + dx, m.width), reflect_index(y + dy, m.height));
        if (erode) {
          if (!s) { v = 0; break; }
        } else {
          if (s) { v = 1; break; }
        }
      }
      out.at(x, y) = v;
    }
  }
  return out;
}

}  // namespace

BinaryMask morphology(const BinaryMask& m, MorphOp op, const Kernel& k, int iterations) {
  if (iterations < 1) throw std::invalid_argument("morphology: iterations must be >= 1");
  auto offs = kernel_offsets(k);
  BinaryMask cur = m;
  switch (op) {
    case MorphOp::kErode:
      for (int i = 0; i < iterations; ++i) cur = erode_or_dilate(cur, offs, true);
      break;
    case MorphOp::kDilate:
      for (int i = 0; i < iterations; ++i) cur = erode_or_dilate(cur, offs, false);
      break;
    case MorphOp::kOpen:
      for (int i = 0; i < iterations; ++i) cur = erode_or_dilate(cur, offs, true);
      for (int i = 0; i < iterations; ++i) cur = erode_or_dilate(cur, offs, false);
      break;
    case MorphOp::kClose:
      for (int i = 0; i < iterations; ++i) cur = erode_or_dilate(cur, offs, false);
      for (int i = 0; i < iterations; ++i) cur = erode_or_dilate(cur, offs, true);
      break;
  }
  return cur;
}

ComponentLabels label_components(const BinaryMask& m) {
  ComponentLabels cl;
  cl.width = m.width;
  cl.height = m.height;
  cl.labels.assign(m.data.size(), 0);

  std::vector<size_t> stack;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      size_t idx = static_cast<size_t>(y) * m.width + x;
      if (!m.data[idx] || cl.labels[idx]) continue;
      int32_t label = ++cl.count;
      int64_t area = 0;
      stack.push_back(idx);
      cl.labels[idx] = label;
      while (!stack.empty()) {
        size_t cur = stack.back();
        stack.pop_back();
        ++area;
        int cy = static_cast<int>(cur / m.width);
        int cx = static_cast<int>(cur % m.width);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || nx >= m.width || ny < 0 || ny >= m.height) continue;
            size_t nidx = static_cast<size_t>(ny) * m.width + nx;
            if (m.data[nidx] && !cl.labels[nidx]) {
              cl.labels[nidx] = label;
              stack.push_back(nidx);
            }
          }
        }
      }
      cl.areas.push_back(area);
    }
  }
  return cl;
}

BinaryMask connected_components_filter(const BinaryMask& m, int min_area) {
  if (min_area < 0) throw std::invalid_argument("connected_components_filter: min_area < 0");
  ComponentLabels cl = label_components(m);
  BinaryMask out(m.width, m.height);
  for (size_t i = 0; i < m.data.size(); ++i) {
    int32_t label = cl.labels[i];
    out.data[i] = (label > 0 && cl.areas[label - 1] >= min_area) ? 1 : 0;
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("resize: target dims must be >= 1");
  if (out_w == img.width && out_h == img.height) return img;

  Image out(out_w, out_h, img.channels);
  double sx = static_cast<double>(img.width) / out_w;
  double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, img.height - 1);
    int y1c = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, img.width - 1);
      int x1c = std::clamp(x0 + 1, 0, img.width - 1);
      for (int ch = 0; ch < img.channels; ++ch) {
        double top = img.at(x0c, y0c, ch) * (1.0 - wx) + img.at(x1c, y0c, ch) * wx;
        double bot = img.at(x0c, y1c, ch) * (1.0 - wx) + img.at(x1c, y1c, ch) * wx;
        out.at(x, y, ch) = clamp_u8(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image resize_max_dim(const Image& img, int max_dim) {
  if (max_dim < 1) throw std::invalid_argument("resize: max_dim must be >= 1");
  int longest = std::max(img.width, img.height);
  if (longest <= max_dim) return img;
  double scale = static_cast<double>(max_dim) / longest;
  int w = std::max(1, static_cast<int>(std::lround(img.width * scale)));
  int h = std::max(1, static_cast<int>(std::lround(img.height * scale)));
  return resize_bilinear(img, w, h);
}

BinaryMask resize_nearest(const BinaryMask& m, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("resize: target dims must be >= 1");
  if (out_w == m.width && out_h == m.height) return m;
  BinaryMask out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    int sy = std::min(m.height - 1,
                      static_cast<int>((static_cast<int64_t>(y) * 2 + 1) * m.height / (2 * out_h)));
    for (int x = 0; x < out_w; ++x) {
      int sx = std::min(m.width - 1,
                        static_cast<int>((static_cast<int64_t>(x) * 2 + 1) * m.width / (2 * out_w)));
      out.at(x, y) = m.at(sx, sy);
    }
  }
  return out;
}

}  // namespace foamfed
