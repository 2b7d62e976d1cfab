#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <vector>

#include "foamfed/dataset.hpp"
#include "foamfed/imageio.hpp"
#include "foamfed/imaging.hpp"
#include "foamfed/maskgen.hpp"
#include "foamfed/rng.hpp"
#include "testutil.hpp"

using namespace foamfed;
using testutil::TempDir;

namespace {

Image constant_image(int w, int h, uint8_t v) {
  Image img(w, h, 1, v);
  return img;
}

}  // namespace

TEST_CASE("the day/night branch is strict at the brightness threshold") {
  // Mean 99 is below the threshold; mean 100 is not.
  MaskGenResult night = generate_mask(constant_image(64, 64, 99));
  CHECK(night.branch == DayNight::kNight);
  CHECK(night.brightness == doctest::Approx(99.0));

  MaskGenResult day = generate_mask(constant_image(64, 64, 100));
  CHECK(day.branch == DayNight::kDay);
  CHECK(day.brightness == doctest::Approx(100.0));
}

TEST_CASE("a non-constant image on the boundary still picks by mean") {
  // Half 90, half 110: mean exactly 100 -> day branch.
  Image img(64, 64, 1);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) img.at(x, y, 0) = y < 32 ? 90 : 110;
  MaskGenResult res = generate_mask(img);
  CHECK(res.branch == DayNight::kDay);
  CHECK(res.brightness == doctest::Approx(100.0));

  // Nudging one pixel down moves the mean below the threshold.
  img.at(0, 0, 0) = 89;
  MaskGenResult res2 = generate_mask(img);
  CHECK(res2.branch == DayNight::kNight);
}

TEST_CASE("custom night threshold moves the branch point") {
  MaskGenConfig cfg;
  cfg.night_threshold = 150.0;
  CHECK(generate_mask(constant_image(48, 48, 120), cfg).branch == DayNight::kNight);
  CHECK(generate_mask(constant_image(48, 48, 160), cfg).branch == DayNight::kDay);
}

TEST_CASE("no output component is smaller than the area floor") {
  Rng rng(77);
  for (int trial = 0; trial < 3; ++trial) {
    auto data = synth_generate(1, 128, 128, 100 + trial);
    MaskGenResult res = generate_mask(data[0].image);
    ComponentLabels cl = label_components(res.mask);
    for (int64_t area : cl.areas) CHECK(area >= 75);
    CHECK(res.foam_fraction ==
          doctest::Approx(static_cast<double>(res.mask.set_count()) / (128.0 * 128.0)));
  }

  // A permissive floor keeps smaller structures.
  MaskGenConfig loose;
  loose.min_area = 1;
  auto data = synth_generate(1, 96, 96, 5);
  MaskGenResult strict_res = generate_mask(data[0].image);
  MaskGenResult loose_res = generate_mask(data[0].image, loose);
  CHECK(loose_res.mask.set_count() >= strict_res.mask.set_count());
}

TEST_CASE("overlay blends masked pixels halfway to red") {
  Image img(2, 1, 3);
  img.at(0, 0, 0) = 100;
  img.at(0, 0, 1) = 60;
  img.at(0, 0, 2) = 31;
  img.at(1, 0, 0) = 10;
  img.at(1, 0, 1) = 20;
  img.at(1, 0, 2) = 30;
  BinaryMask m(2, 1);
  m.at(0, 0) = 1;

  Image ov = render_overlay(img, m);
  REQUIRE(ov.channels == 3);
  CHECK(ov.at(0, 0, 0) == (100 + 255) / 2);
  CHECK(ov.at(0, 0, 1) == 30);
  CHECK(ov.at(0, 0, 2) == 15);  // integer halving
  CHECK(ov.at(1, 0, 0) == 10);
  CHECK(ov.at(1, 0, 1) == 20);
  CHECK(ov.at(1, 0, 2) == 30);
}

TEST_CASE("gray sources expand to rgb in the overlay") {
  Image img = constant_image(3, 1, 200);
  BinaryMask m(3, 1);
  m.at(1, 0) = 1;
  Image ov = render_overlay(img, m);
  CHECK(ov.at(0, 0, 0) == 200);
  CHECK(ov.at(0, 0, 1) == 200);
  CHECK(ov.at(0, 0, 2) == 200);
  CHECK(ov.at(1, 0, 0) == (200 + 255) / 2);
  CHECK(ov.at(1, 0, 1) == 100);
}

TEST_CASE("config files override individual knobs") {
  KeyValueConfig kv = KeyValueConfig::parse(
      "# pipeline overrides\n"
      "night_threshold = 120\n"
      "min_area = 10\n"
      "open_iterations = 1\n");
  MaskGenConfig cfg = MaskGenConfig::from_config(kv);
  CHECK(cfg.night_threshold == 120.0);
  CHECK(cfg.min_area == 10);
  CHECK(cfg.open_iterations == 1);
  // Untouched knobs keep their defaults.
  CHECK(cfg.clahe_clip == 2.0);
  CHECK(cfg.thresh_block == 11);
  CHECK(cfg.nlm_window == 21);
}

TEST_CASE("the pipeline is deterministic byte for byte") {
  auto data = synth_generate(1, 96, 96, 42);
  MaskGenResult a = generate_mask(data[0].image);
  MaskGenResult b = generate_mask(data[0].image);
  CHECK(a.mask.data == b.mask.data);
  CHECK(encode_png(a.overlay) == encode_png(b.overlay));
}

TEST_CASE("process_directory writes mask and overlay pairs, skipping junk") {
  TempDir tmp("maskdir");
  std::string in = tmp.sub("in"), out = tmp.sub("out");
  std::filesystem::create_directories(in);

  auto data = synth_generate(2, 64, 64, 8);
  save_png(data[0].image, in + "/frame_a.png");
  save_png(data[1].image, in + "/frame_b.png");
  const char junk[] = "not an image at all";
  write_file_atomic(in + "/broken.png", junk, sizeof junk);

  DirectoryStats stats = process_directory(in, out);
  CHECK(stats.processed == 2);
  CHECK(stats.skipped == 1);
  CHECK(stats.day + stats.night == 2);
  CHECK(std::filesystem::exists(out + "/frame_a_mask.png"));
  CHECK(std::filesystem::exists(out + "/frame_a_overlay.png"));
  CHECK(std::filesystem::exists(out + "/frame_b_mask.png"));
  CHECK(std::filesystem::exists(out + "/frame_b_overlay.png"));

  // Written masks decode back to exactly the in-memory result.
  MaskGenResult direct = generate_mask(data[0].image);
  BinaryMask reloaded = load_mask_png(out + "/frame_a_mask.png");
  CHECK(reloaded.data == direct.mask.data);

  CHECK_THROWS(process_directory(tmp.sub("missing"), out));
}
