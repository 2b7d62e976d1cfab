// Acquisition loop: capture timestamp parsing, the directory store, the
// append-only registry, image validation, polling, backfill, and the
// bounded queue that joins the poller to the worker.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "foamfed/acquisition.hpp"
#include "foamfed/imageio.hpp"
#include "foamfed/model.hpp"
#include "foamfed/queue.hpp"
#include "foamfed/rng.hpp"
#include "foamfed/wire.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace foamfed;

namespace {

// Non-constant gray ramp, comfortably above the minimum accepted size.
Image sample_image(int w = 96, int h = 96, uint8_t base = 40) {
  Image img(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.data[static_cast<size_t>(y) * w + x] = static_cast<uint8_t>((base + 2 * x + y) % 256);
  return img;
}

void write_store_image(const fs::path& p, uint8_t base = 40) {
  fs::create_directories(p.parent_path());
  save_png(sample_image(96, 96, base), p.string());
}

size_t line_count(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return static_cast<size_t>(std::count(content.begin(), content.end(), '\n'));
}

// In-memory store with scriptable failures, for exercising the poll and
// error paths without touching the filesystem.
struct StubStore : ImageStore {
  std::vector<StoreEntry> entries;
  std::map<std::string, std::vector<uint8_t>> blobs;
  std::set<std::string> fail_fetch;

  std::vector<StoreEntry> list_all() override {
    auto v = entries;
    std::sort(v.begin(), v.end(),
              [](const StoreEntry& a, const StoreEntry& b) { return a.name < b.name; });
    return v;
  }
  std::vector<StoreEntry> list(int64_t day) override {
    std::vector<StoreEntry> out;
    for (auto& e : list_all())
      if (e.captured_at / 1000000 == day) out.push_back(e);
    return out;
  }
  std::vector<uint8_t> fetch(const std::string& name) override {
    if (fail_fetch.count(name)) throw std::runtime_error("simulated fetch failure");
    auto it = blobs.find(name);
    if (it == blobs.end()) throw std::runtime_error("missing blob: " + name);
    return it->second;
  }
};

}  // namespace

TEST_CASE("capture timestamps parse from basenames") {
  CHECK(parse_capture_timestamp("cam1_20240117_153000.png") == 20240117153000LL);
  CHECK(parse_capture_timestamp("20240117_153000") == 20240117153000LL);
  // Directory components are stripped before scanning.
  CHECK(parse_capture_timestamp("20990101/cam_20240117_153000.png") == 20240117153000LL);
  // Extra digits around the run do not break the match.
  CHECK(parse_capture_timestamp("x20240117_1530001.png") == 20240117153000LL);
  // An implausible first run is skipped and a later valid one wins.
  CHECK(parse_capture_timestamp("20241317_000000__20240101_120000.png") == 20240101120000LL);

  CHECK_FALSE(parse_capture_timestamp("snapshot.png").has_value());
  CHECK_FALSE(parse_capture_timestamp("20240117-153000.png").has_value());  // wrong separator
  CHECK_FALSE(parse_capture_timestamp("2024011_153000.png").has_value());   // short date
  CHECK_FALSE(parse_capture_timestamp("20241317_120000.png").has_value());  // month 13
  CHECK_FALSE(parse_capture_timestamp("20240100_120000.png").has_value());  // day 0
  CHECK_FALSE(parse_capture_timestamp("20240101_240000.png").has_value());  // hour 24
  CHECK_FALSE(parse_capture_timestamp("20240101_126000.png").has_value());  // minute 60
  CHECK_FALSE(parse_capture_timestamp("20240101_120060.png").has_value());  // second 60
  CHECK_FALSE(parse_capture_timestamp("19691231_235959.png").has_value());  // before epoch
  CHECK(parse_capture_timestamp("19700101_000000.png") == 19700101000000LL);
}

TEST_CASE("the store lists flat files and date subdirectories") {
  testutil::TempDir dir;
  write_store_image(dir.path() / "cam_20240101_080000.png", 10);
  write_store_image(dir.path() / "cam_20240101_090000.jpg", 20);
  write_store_image(dir.path() / "20240102" / "cam_20240102_091500.png", 30);

  // Ignored: wrong extension, unparsable name, non-date subdirectory,
  // and anything nested deeper than one level.
  std::ofstream(dir.path() / "notes.txt") << "not an image";
  write_store_image(dir.path() / "untimed.png");
  write_store_image(dir.path() / "stuff" / "cam_20240103_000000.png");
  write_store_image(dir.path() / "20240104" / "deep" / "cam_20240104_000000.png");

  LocalDirStore store(dir.path().string());
  auto all = store.list_all();
  REQUIRE(all.size() == 3);
  CHECK(all[0].name == "20240102/cam_20240102_091500.png");
  CHECK(all[0].captured_at == 20240102091500LL);
  CHECK(all[1].name == "cam_20240101_080000.png");
  CHECK(all[2].name == "cam_20240101_090000.jpg");

  auto day1 = store.list(20240101);
  REQUIRE(day1.size() == 2);
  CHECK(day1[0].name == "cam_20240101_080000.png");
  CHECK(store.list(20240102).size() == 1);
  CHECK(store.list(20240105).empty());

  auto bytes = store.fetch("20240102/cam_20240102_091500.png");
  CHECK(bytes == read_file_bytes((dir.path() / "20240102" / "cam_20240102_091500.png").string()));
  CHECK_THROWS(store.fetch("nope.png"));
}

TEST_CASE("the registry appends, reloads, and keeps the newest row per name") {
  testutil::TempDir dir;
  std::string path = dir.sub("registry.csv");

  ImageRecord ok;
  ok.name = "a_20240101_080000.png";
  ok.captured_at = 20240101080000LL;
  ok.processed_at = 20240101081000LL;
  ok.foam_pct = 12.345678901234567;
  ok.mask_path = "masks/a_20240101_080000_mask.png";
  ok.status = RecordStatus::kOk;

  ImageRecord bad;
  bad.name = "b_20240101_090000.png";
  bad.captured_at = 20240101090000LL;
  bad.processed_at = 20240101091000LL;
  bad.status = RecordStatus::kInvalid;

  {
    Registry reg(path);
    CHECK(reg.size() == 0);
    reg.append(ok);
    reg.append(bad);
    CHECK(reg.size() == 2);
    CHECK(reg.contains(ok.name));
    CHECK_FALSE(reg.contains("missing.png"));

    auto found = reg.find(ok.name);
    REQUIRE(found.has_value());
    CHECK(found->foam_pct == ok.foam_pct);
    CHECK(found->status == RecordStatus::kOk);

    // A later row for the same name shadows the earlier one.
    ImageRecord retry = bad;
    retry.status = RecordStatus::kOk;
    retry.foam_pct = 3.5;
    retry.mask_path = "masks/b.png";
    reg.append(retry);
    CHECK(reg.size() == 2);
    CHECK(reg.find(bad.name)->status == RecordStatus::kOk);

    auto names = reg.names();
    REQUIRE(names.size() == 2);
    CHECK(names[0] == ok.name);
    CHECK(names[1] == bad.name);

    ImageRecord evil = ok;
    evil.name = "a,b.png";
    CHECK_THROWS_AS(reg.append(evil), std::invalid_argument);
    evil.name = "";
    CHECK_THROWS_AS(reg.append(evil), std::invalid_argument);
    evil.name = "fine.png";
    evil.mask_path = "bad\npath";
    CHECK_THROWS_AS(reg.append(evil), std::invalid_argument);
  }

  // Reload from disk: same view, and the stored float survives exactly.
  Registry reloaded(path);
  CHECK(reloaded.size() == 2);
  auto found = reloaded.find(ok.name);
  REQUIRE(found.has_value());
  CHECK(found->foam_pct == ok.foam_pct);
  CHECK(found->captured_at == ok.captured_at);
  CHECK(found->mask_path == ok.mask_path);
  CHECK(reloaded.find(bad.name)->foam_pct == 3.5);

  // File format: header first, OK rows carry a foam value, non-OK rows
  // leave the field empty.
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == Registry::kHeader);
  REQUIRE(std::getline(in, line));
  CHECK(line.substr(0, ok.name.size() + 1) == ok.name + ",");
  CHECK(line.find(",12.345678901234567,") != std::string::npos);
  REQUIRE(std::getline(in, line));
  std::string tail = ",,,INVALID";  // empty foam and mask fields
  REQUIRE(line.size() > tail.size());
  CHECK(line.substr(line.size() - tail.size()) == tail);
}

TEST_CASE("torn and malformed registry lines are dropped on reload") {
  testutil::TempDir dir;
  std::string path = dir.sub("registry.csv");
  {
    std::ofstream out(path, std::ios::binary);
    out << Registry::kHeader << "\n";
    out << "good_20240101_080000.png,20240101080000,20240101081000,5.5,masks/g.png,OK\n";
    out << "garbage line with no commas\n";
    out << "wrongstatus.png,1,2,3.0,m,WEIRD\n";
    out << "badnumber.png,notanumber,2,,m,OK\n";
    out << "\n";
    out << "torn_20240101_090000.png,20240101090000,20240101091000,1.0,masks/t";  // no newline
  }

  Registry reg(path);
  CHECK(reg.size() == 1);
  CHECK(reg.contains("good_20240101_080000.png"));
  CHECK_FALSE(reg.contains("torn_20240101_090000.png"));
  CHECK_FALSE(reg.contains("wrongstatus.png"));
  CHECK_FALSE(reg.contains("badnumber.png"));

  // Appending after the torn tail still yields a parsable file.
  ImageRecord rec;
  rec.name = "next.png";
  rec.status = RecordStatus::kFailed;
  reg.append(rec);
  Registry again(path);
  CHECK(again.size() == 2);
  CHECK(again.contains("next.png"));
}

TEST_CASE("validation rejects undecodable, small, and constant images") {
  std::vector<uint8_t> junk = {0xde, 0xad, 0xbe, 0xef};
  CHECK_FALSE(validate_image(junk).ok);
  CHECK(validate_image(junk).reason == "decode");

  auto png_of = [](const Image& img) { return encode_png(img); };

  ValidationResult small = validate_image(png_of(sample_image(63, 64)));
  CHECK_FALSE(small.ok);
  CHECK(small.reason == "too-small");

  Image flat(64, 64, 1);
  std::fill(flat.data.begin(), flat.data.end(), uint8_t{128});
  ValidationResult constant = validate_image(png_of(flat));
  CHECK_FALSE(constant.ok);
  CHECK(constant.reason == "constant");

  ValidationResult good = validate_image(png_of(sample_image(64, 64)));
  CHECK(good.ok);
  CHECK(good.reason.empty());
  CHECK(good.image.width == 64);
}

TEST_CASE("poll_latest returns the newest unprocessed capture") {
  testutil::TempDir dir;
  StubStore store;
  store.entries = {
      {"cam_a.png", 20240401080000LL},
      {"cam_b.png", 20240401090000LL},
      {"cam_c.png", 20240401090000LL},  // timestamp tie with cam_b
      {"other_day.png", 20240402080000LL},
  };

  Registry reg(dir.sub("reg.csv"));
  // Tie on captured_at breaks toward the lexicographically larger name.
  CHECK(poll_latest(store, reg, 20240401) == std::string("cam_c.png"));

  ImageRecord rec;
  rec.name = "cam_c.png";
  rec.status = RecordStatus::kOk;
  reg.append(rec);
  CHECK(poll_latest(store, reg, 20240401) == std::string("cam_b.png"));

  rec.name = "cam_b.png";
  reg.append(rec);
  rec.name = "cam_a.png";
  reg.append(rec);
  CHECK_FALSE(poll_latest(store, reg, 20240401).has_value());
  CHECK(poll_latest(store, reg, 20240402) == std::string("other_day.png"));

  SUBCASE("randomized listings match a brute-force oracle") {
    Rng rng(901);
    for (int iter = 0; iter < 30; ++iter) {
      StubStore s;
      int n = 3 + static_cast<int>(rng.bounded(10));
      for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "e%02d.png", i);
        s.entries.push_back({name, 20240401000000LL + static_cast<int64_t>(rng.bounded(5))});
      }
      Registry r(dir.sub("poll_" + std::to_string(iter) + ".csv"));
      std::optional<StoreEntry> want;
      for (const auto& e : s.entries) {
        if (rng.chance(0.4)) {
          ImageRecord done;
          done.name = e.name;
          done.status = RecordStatus::kOk;
          r.append(done);
          continue;
        }
        if (!want || e.captured_at > want->captured_at ||
            (e.captured_at == want->captured_at && e.name > want->name))
          want = e;
      }
      auto got = poll_latest(s, r, 20240401);
      if (want) {
        REQUIRE(got.has_value());
        CHECK(*got == want->name);
      } else {
        CHECK_FALSE(got.has_value());
      }
    }
  }
}

TEST_CASE("single image processing is idempotent over OK rows") {
  testutil::TempDir dir;
  write_store_image(dir.path() / "store" / "cam_20240101_103000.png");
  Image flat(96, 96, 1);
  std::fill(flat.data.begin(), flat.data.end(), uint8_t{77});
  save_png(flat, (dir.path() / "store" / "flat_20240101_104500.png").string());

  LocalDirStore store((dir.path() / "store").string());
  std::string reg_path = dir.sub("reg.csv");
  Registry reg(reg_path);
  ModelParams model = make_model_params();
  InferenceConfig icfg;
  icfg.n_points = 9;  // keep the prompt grid small for speed
  std::string mask_dir = dir.sub("masks");

  ImageRecord rec = process_one("cam_20240101_103000.png", store, reg, model, icfg, mask_dir);
  CHECK(rec.status == RecordStatus::kOk);
  CHECK(rec.captured_at == 20240101103000LL);
  CHECK(rec.foam_pct >= 0.0);
  CHECK(rec.foam_pct <= 100.0);
  CHECK(fs::exists(rec.mask_path));
  CHECK(reg.size() == 1);

  // An OK row short-circuits: no reprocessing, no new file line.
  size_t lines_before = line_count(reg_path);
  ImageRecord again = process_one("cam_20240101_103000.png", store, reg, model, icfg, mask_dir);
  CHECK(again.status == RecordStatus::kOk);
  CHECK(again.foam_pct == rec.foam_pct);
  CHECK(again.processed_at == rec.processed_at);
  CHECK(line_count(reg_path) == lines_before);

  // Constant frame: recorded INVALID, no mask written.
  ImageRecord inv = process_one("flat_20240101_104500.png", store, reg, model, icfg, mask_dir);
  CHECK(inv.status == RecordStatus::kInvalid);
  CHECK(inv.mask_path.empty());
  CHECK(reg.size() == 2);

  // Non-OK rows are retried on the next call (still invalid here, so a
  // fresh row lands but the name count stays put).
  size_t lines_mid = line_count(reg_path);
  process_one("flat_20240101_104500.png", store, reg, model, icfg, mask_dir);
  CHECK(line_count(reg_path) == lines_mid + 1);
  CHECK(reg.size() == 2);

  // Fetch failures are recorded FAILED instead of propagating.
  StubStore flaky;
  flaky.fail_fetch.insert("gone_20240101_110000.png");
  ImageRecord failed =
      process_one("gone_20240101_110000.png", flaky, reg, model, icfg, mask_dir);
  CHECK(failed.status == RecordStatus::kFailed);
  CHECK(reg.find("gone_20240101_110000.png")->status == RecordStatus::kFailed);
}

TEST_CASE("backfill recovers exactly the missing rows, oldest first") {
  testutil::TempDir dir;
  fs::path root = dir.path() / "store";
  // Name order deliberately disagrees with capture order.
  write_store_image(root / "z_20240101_000000.png", 5);
  write_store_image(root / "y_20240102_000000.png", 15);
  write_store_image(root / "a_20240103_000000.png", 25);
  write_store_image(root / "b_20240103_000000.png", 35);  // timestamp tie with a_
  Image flat(96, 96, 1);
  std::fill(flat.data.begin(), flat.data.end(), uint8_t{200});
  save_png(flat, (root / "c_20240104_000000.png").string());

  LocalDirStore store(root.string());
  Registry reg(dir.sub("reg.csv"));
  ModelParams model = make_model_params();
  InferenceConfig icfg;
  icfg.n_points = 9;
  std::string mask_dir = dir.sub("masks");

  // Pre-register one image; the sweep must not touch it.
  process_one("y_20240102_000000.png", store, reg, model, icfg, mask_dir);
  size_t lines_before = line_count(dir.sub("reg.csv"));

  auto recovered = verify_and_backfill(store, reg, model, icfg, mask_dir);
  // The constant image is recorded but not counted as recovered.
  REQUIRE(recovered.size() == 3);
  CHECK(recovered[0] == "z_20240101_000000.png");
  CHECK(recovered[1] == "a_20240103_000000.png");
  CHECK(recovered[2] == "b_20240103_000000.png");
  CHECK(reg.size() == 5);
  CHECK(reg.find("c_20240104_000000.png")->status == RecordStatus::kInvalid);
  CHECK(line_count(dir.sub("reg.csv")) == lines_before + 4);

  // Idempotent: everything is registered now, nothing left to do.
  CHECK(verify_and_backfill(store, reg, model, icfg, mask_dir).empty());
  CHECK(line_count(dir.sub("reg.csv")) == lines_before + 4);
}

TEST_CASE("self-check reports each component") {
  testutil::TempDir dir;
  write_store_image(dir.path() / "store" / "cam_20240101_103000.png");
  save_checkpoint(dir.sub("model.fp"), make_model_params());

  AcquisitionConfig cfg;
  cfg.store_root = dir.sub("store");
  cfg.registry_path = dir.sub("reg.csv");
  cfg.model_path = dir.sub("model.fp");

  ReadinessReport good = self_check(cfg);
  CHECK(good.ready);
  REQUIRE(good.checks.size() == 3);
  for (const auto& c : good.checks) {
    CHECK(c.ok);
    CHECK_FALSE(c.detail.empty());
  }
  CHECK(good.checks[0].component == "store");
  CHECK(good.checks[1].component == "registry");
  CHECK(good.checks[2].component == "model");

  SUBCASE("missing store root") {
    cfg.store_root = dir.sub("nowhere");
    ReadinessReport rep = self_check(cfg);
    CHECK_FALSE(rep.ready);
    CHECK_FALSE(rep.checks[0].ok);
    CHECK(rep.checks[1].ok);
    CHECK(rep.checks[2].ok);
  }

  SUBCASE("missing model checkpoint") {
    cfg.model_path = dir.sub("missing.fp");
    ReadinessReport rep = self_check(cfg);
    CHECK_FALSE(rep.ready);
    CHECK_FALSE(rep.checks[2].ok);
  }

  SUBCASE("checkpoint with a foreign manifest") {
    ModelParams stranger;
    stranger.tensors.push_back(NamedTensor("w", {3}, {1.0f, 2.0f, 3.0f}));
    save_checkpoint(dir.sub("stranger.fp"), stranger);
    cfg.model_path = dir.sub("stranger.fp");
    ReadinessReport rep = self_check(cfg);
    CHECK_FALSE(rep.ready);
    CHECK_FALSE(rep.checks[2].ok);
    CHECK(rep.checks[2].detail.find("manifest") != std::string::npos);
  }

  SUBCASE("registry path blocked by a regular file") {
    std::ofstream(dir.sub("blocker")) << "file";
    cfg.registry_path = dir.sub("blocker") + "/reg.csv";
    ReadinessReport rep = self_check(cfg);
    CHECK_FALSE(rep.ready);
    CHECK_FALSE(rep.checks[1].ok);
  }
}

TEST_CASE("the monitor sweep and loop process todays captures") {
  testutil::TempDir dir;
  fs::path root = dir.path() / "store";
  write_store_image(root / "cam_20240315_080000.png", 10);
  write_store_image(root / "cam_20240315_101500.png", 60);
  write_store_image(root / "cam_20240310_101500.png", 90);  // older day
  save_checkpoint(dir.sub("model.fp"), make_model_params());

  AcquisitionConfig cfg;
  cfg.store_root = root.string();
  cfg.registry_path = dir.sub("out/reg.csv");
  cfg.model_path = dir.sub("model.fp");
  cfg.infer.n_points = 9;
  cfg.today = [] { return int64_t{20240315}; };
  cfg.poll_interval_s = 0.01;
  cfg.max_polls = 120;

  SUBCASE("verification sweep covers every day in the store") {
    CHECK(monitor_run(cfg, true) == 0);
    Registry reg(cfg.registry_path);
    CHECK(reg.size() == 3);
    for (const auto& name : reg.names()) CHECK(reg.find(name)->status == RecordStatus::kOk);
    // Default mask directory sits next to the registry.
    CHECK(fs::exists(dir.path() / "out" / "masks" / "cam_20240315_080000_mask.png"));
  }

  SUBCASE("bounded polling loop drains the current day") {
    CHECK(monitor_run(cfg, false) == 0);
    Registry reg(cfg.registry_path);
    CHECK(reg.size() == 2);
    CHECK(reg.contains("cam_20240315_080000.png"));
    CHECK(reg.contains("cam_20240315_101500.png"));
    CHECK_FALSE(reg.contains("cam_20240310_101500.png"));
  }

  SUBCASE("a failing self-check refuses to start") {
    cfg.model_path = dir.sub("missing.fp");
    CHECK(monitor_run(cfg, true) == 1);
  }
}

TEST_CASE("bounded queue ordering, close, and timeout") {
  BoundedQueue<int> q(4);
  CHECK(q.push(1));
  CHECK(q.push(2));
  CHECK(q.size() == 2);
  CHECK(q.pop() == 1);
  CHECK(q.pop() == 2);

  auto soon = std::chrono::steady_clock::now() + std::chrono::milliseconds(20);
  CHECK_FALSE(q.pop_until(soon).has_value());

  q.push(7);
  q.close();
  CHECK(q.closed());
  CHECK_FALSE(q.push(8));     // rejected after close
  CHECK(q.pop() == 7);        // close still drains buffered items
  CHECK_FALSE(q.pop().has_value());

  SUBCASE("producer and consumer meet across threads") {
    BoundedQueue<int> pipe(2);
    int64_t sum = 0;
    std::thread consumer([&] {
      while (auto v = pipe.pop()) sum += *v;
    });
    for (int i = 1; i <= 100; ++i) pipe.push(i);
    pipe.close();
    consumer.join();
    CHECK(sum == 5050);
  }
}
