#include "foamfed/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>

#include "foamfed/imageio.hpp"
#include "foamfed/imaging.hpp"
#include "foamfed/rng.hpp"

namespace foamfed {

namespace fs = std::filesystem;

std::vector<SamplePair> load_pairs(const std::string& image_dir, const std::string& mask_dir,
                                   int target_w, int target_h) {
  if (!fs::is_directory(image_dir)) throw std::runtime_error("not a directory: " + image_dir);
  if (!fs::is_directory(mask_dir)) throw std::runtime_error("not a directory: " + mask_dir);
  if ((target_w == 0) != (target_h == 0))
    throw std::invalid_argument("target dimensions must both be 0 or both be positive");

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<SamplePair> pairs;
  for (const auto& p : files) {
    std::string stem = p.stem().string();
    fs::path mask_path = fs::path(mask_dir) / (stem + "_mask.png");
    if (!fs::exists(mask_path)) {
      spdlog::warn("no mask for {}, skipping", p.string());
      continue;
    }
    Image img(1, 1, 1);
    BinaryMask mask(1, 1);
    try {
      img = decode_image(read_file_bytes(p.string()));
      mask = load_mask_png(mask_path.string());
    } catch (const std::exception& ex) {
      spdlog::warn("failed to load pair {}: {}", stem, ex.what());
      continue;
    }
    if (target_w > 0) {
      img = resize_bilinear(img, target_w, target_h);
      mask = resize_nearest(mask, target_w, target_h);
    } else if (img.width != mask.width || img.height != mask.height) {
      spdlog::warn("dimension mismatch for {}, skipping", stem);
      continue;
    }
    pairs.push_back(SamplePair{std::move(img), std::move(mask), stem});
  }
  if (pairs.empty()) throw std::runtime_error("no matching pairs found");
  return pairs;
}

namespace {

void hflip_inplace(SamplePair& s) {
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < s.image.width / 2; ++x) {
      int mx = s.image.width - 1 - x;
      for (int c = 0; c < s.image.channels; ++c)
        std::swap(s.image.at(x, y, c), s.image.at(mx, y, c));
      std::swap(s.mask.at(x, y), s.mask.at(mx, y));
    }
}

void vflip_inplace(SamplePair& s) {
  for (int y = 0; y < s.image.height / 2; ++y) {
    int my = s.image.height - 1 - y;
    for (int x = 0; x < s.image.width; ++x) {
      for (int c = 0; c < s.image.channels; ++c)
        std::swap(s.image.at(x, y, c), s.image.at(x, my, c));
      std::swap(s.mask.at(x, y), s.mask.at(x, my));
    }
  }
}

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

void photometric_inplace(Image& img, double brightness, double contrast) {
  for (auto& v : img.data)
    v = clamp_u8((1.0 + contrast) * (static_cast<double>(v) - 127.5) + 127.5 +
                 255.0 * brightness);
}

}  // namespace

SamplePair apply_affine(const SamplePair& pair, double angle_deg, double scale, double dx,
                        double dy) {
  const int w = pair.image.width, h = pair.image.height;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double cosr = std::cos(rad), sinr = std::sin(rad);
  if (scale <= 0.0) throw std::invalid_argument("scale must be positive");

  SamplePair out{Image(w, h, pair.image.channels), BinaryMask(w, h), pair.source_id};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Invert forward map p' = s*R(theta)*(p-c) + c + t to find the source.
      double ux = (x - cx - dx) / scale;
      double uy = (y - cy - dy) / scale;
      double sx = cosr * ux + sinr * uy + cx;
      double sy = -sinr * ux + cosr * uy + cy;

      int nx = static_cast<int>(std::lround(sx));
      int ny = static_cast<int>(std::lround(sy));
      out.mask.at(x, y) =
          (nx >= 0 && nx < w && ny >= 0 && ny < h) ? (pair.mask.at(nx, ny) ? 1 : 0) : 0;

      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < pair.image.channels; ++c) {
        auto sample = [&](int px, int py) -> double {
          if (px < 0 || px >= w || py < 0 || py >= h) return 0.0;
          return pair.image.at(px, py, c);
        };
        double v = sample(x0, y0) * (1 - fx) * (1 - fy) + sample(x0 + 1, y0) * fx * (1 - fy) +
                   sample(x0, y0 + 1) * (1 - fx) * fy + sample(x0 + 1, y0 + 1) * fx * fy;
        out.image.at(x, y, c) = clamp_u8(v);
      }
    }
  }
  return out;
}

SamplePair augment(const SamplePair& pair, const AugmentConfig& cfg, uint64_t sample_seed) {
  Rng rng(mix_seed(cfg.seed, sample_seed));
  SamplePair out = pair;
  if (rng.chance(cfg.p_hflip)) hflip_inplace(out);
  if (rng.chance(cfg.p_vflip)) vflip_inplace(out);
  if (rng.chance(cfg.p_affine)) {
    double angle = rng.uniform(-cfg.rotate_limit_deg, cfg.rotate_limit_deg);
    double scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit);
    double dx = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * pair.image.width;
    double dy = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * pair.image.height;
    out = apply_affine(out, angle, scale, dx, dy);
  }
  if (rng.chance(cfg.p_brightness_contrast)) {
    double brightness = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit);
    double contrast = rng.uniform(-cfg.contrast_limit, cfg.contrast_limit);
    photometric_inplace(out.image, brightness, contrast);
  }
  return out;
}

Partition partition(size_t n_samples, const std::vector<std::string>& sources, PartitionMode mode,
                    int n_clients, uint64_t seed) {
  if (n_clients < 1) throw std::invalid_argument("n_clients must be >= 1");
  Partition part;
  part.mode = mode;
  part.assignments.assign(static_cast<size_t>(n_clients), {});

  if (mode == PartitionMode::kIid) {
    std::vector<size_t> order(n_samples);
    for (size_t i = 0; i < n_samples; ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0x504152544954ull));
    for (size_t i = n_samples; i > 1; --i)
      std::swap(order[i - 1], order[rng.bounded(static_cast<uint32_t>(i))]);
    for (size_t i = 0; i < n_samples; ++i)
      part.assignments[i % n_clients].push_back(order[i]);
  } else {
    if (sources.size() != n_samples)
      throw std::invalid_argument("sources list must cover every sample");
    std::set<std::string> distinct(sources.begin(), sources.end());
    std::map<std::string, size_t> client_of;
    size_t next = 0;
    for (const auto& s : distinct) client_of[s] = next++ % n_clients;
    for (size_t i = 0; i < n_samples; ++i)
      part.assignments[client_of[sources[i]]].push_back(i);
  }
  for (auto& list : part.assignments) std::sort(list.begin(), list.end());
  return part;
}

namespace {

// Low-frequency value noise: random lattice values, bilinear between them.
GrayImage value_noise_background(int w, int h, Rng& rng, int lo, int hi) {
  const int cell = 16;
  int gw = w / cell + 2, gh = h / cell + 2;
  std::vector<double> lattice(static_cast<size_t>(gw) * gh);
  for (auto& v : lattice) v = rng.uniform(lo, hi);
  GrayImage bg(w, h);
  for (int y = 0; y < h; ++y) {
    double gy = static_cast<double>(y) / cell;
    int y0 = static_cast<int>(gy);
    double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      double gx = static_cast<double>(x) / cell;
      int x0 = static_cast<int>(gx);
      double fx = gx - x0;
      double v = lattice[y0 * gw + x0] * (1 - fx) * (1 - fy) +
                 lattice[y0 * gw + x0 + 1] * fx * (1 - fy) +
                 lattice[(y0 + 1) * gw + x0] * (1 - fx) * fy +
                 lattice[(y0 + 1) * gw + x0 + 1] * fx * fy;
      bg.data[static_cast<size_t>(y) * w + x] = clamp_u8(v);
    }
  }
  return bg;
}

struct Ellipse {
  double cx, cy, a, b, cosr, sinr;
  bool contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double u = (cosr * dx + sinr * dy) / a;
    double v = (-sinr * dx + cosr * dy) / b;
    return u * u + v * v <= 1.0;
  }
};

BinaryMask rasterize_union(const std::vector<Ellipse>& blobs, int w, int h) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (const auto& e : blobs)
        if (e.contains(x, y)) {
          m.at(x, y) = 1;
          break;
        }
  return m;
}

}  // namespace

SamplePair synth_sample(const SynthConfig& cfg, uint64_t sample_seed) {
  if (cfg.width < 16 || cfg.height < 16)
    throw std::invalid_argument("synthetic frames must be at least 16x16");
  const int w = cfg.width, h = cfg.height;
  Rng rng(sample_seed);

  GrayImage bg = value_noise_background(w, h, rng, 20, 80);

  int n_blobs = cfg.min_blobs + static_cast<int>(rng.bounded(
                                    static_cast<uint32_t>(cfg.max_blobs - cfg.min_blobs + 1)));
  std::vector<Ellipse> blobs;
  for (int i = 0; i < n_blobs; ++i) {
    Ellipse e;
    e.cx = rng.uniform(0.15 * w, 0.85 * w);
    e.cy = rng.uniform(0.15 * h, 0.85 * h);
    e.a = rng.uniform(w / 16.0, w / 5.0);
    e.b = rng.uniform(h / 16.0, h / 5.0);
    double rot = rng.uniform(0.0, 3.14159265358979323846);
    e.cosr = std::cos(rot);
    e.sinr = std::sin(rot);
    blobs.push_back(e);
  }

  // Rescale all axes together until foam covers 5%..50% of the frame. Border
  // clipping makes area nonlinear in the axes, hence the loop.
  BinaryMask mask = rasterize_union(blobs, w, h);
  const double total = static_cast<double>(w) * h;
  for (int iter = 0; iter < 24; ++iter) {
    double frac = mask.set_count() / total;
    if (frac >= 0.05 && frac <= 0.5) break;
    double target = frac < 0.05 ? 0.06 : 0.45;
    double factor = std::sqrt(target / std::max(frac, 1e-4));
    factor = std::clamp(factor, 0.5, 2.0);
    for (auto& e : blobs) {
      e.a *= factor;
      e.b *= factor;
    }
    mask = rasterize_union(blobs, w, h);
  }

  Image img(w, h, 1);
  double base = rng.uniform(200.0, 235.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v;
      if (mask.at(x, y)) {
        v = base + rng.uniform(-20.0, 20.0);   // speckle texture on foam
        v = std::clamp(v, 180.0, 255.0);
      } else {
        v = bg.data[static_cast<size_t>(y) * w + x];
      }
      if (cfg.noise > 0.0) v += rng.normal(0.0, cfg.noise);
      img.at(x, y, 0) = clamp_u8(v);
    }

  return SamplePair{std::move(img), std::move(mask), cfg.source_id};
}

std::vector<SamplePair> synth_generate(int n, const SynthConfig& cfg, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  std::vector<SamplePair> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_sample(cfg, mix_seed(seed, i)));
  return out;
}

std::vector<SamplePair> synth_generate(int n, int width, int height, uint64_t seed) {
  SynthConfig cfg;
  cfg.width = width;
  cfg.height = height;
  return synth_generate(n, cfg, seed);
}

}  // namespace foamfed
