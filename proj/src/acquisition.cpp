#include "foamfed/acquisition.hpp"

#include <fcntl.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "foamfed/imageio.hpp"
#include "foamfed/queue.hpp"
#include "foamfed/wire.hpp"

namespace fs = std::filesystem;

namespace foamfed {

namespace {

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isdigit(c) != 0;
  });
}

bool plausible_date(int year, int month, int day) {
  return year >= 1970 && year <= 9999 && month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

bool plausible_time(int hour, int minute, int second) {
  return hour < 24 && minute < 60 && second < 60;
}

bool image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::optional<int64_t> parse_capture_timestamp(const std::string& name) {
  std::string base = fs::path(name).filename().string();
  // First YYYYMMDD_HHMMSS run anywhere in the basename.
  for (size_t i = 0; i + 15 <= base.size(); ++i) {
    if (base[i + 8] != '_') continue;
    std::string date = base.substr(i, 8);
    std::string time = base.substr(i + 9, 6);
    if (!all_digits(date) || !all_digits(time)) continue;
    int year = std::stoi(date.substr(0, 4));
    int month = std::stoi(date.substr(4, 2));
    int day = std::stoi(date.substr(6, 2));
    int hour = std::stoi(time.substr(0, 2));
    int minute = std::stoi(time.substr(2, 2));
    int second = std::stoi(time.substr(4, 2));
    if (!plausible_date(year, month, day) || !plausible_time(hour, minute, second)) continue;
    return std::stoll(date) * 1000000 + std::stoll(time);
  }
  return std::nullopt;
}

int64_t utc_today() { return utc_now_compact() / 1000000; }

int64_t utc_now_compact() {
  std::time_t t = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  return (tm_utc.tm_year + 1900LL) * 10000000000LL + (tm_utc.tm_mon + 1) * 100000000LL +
         tm_utc.tm_mday * 1000000LL + tm_utc.tm_hour * 10000LL + tm_utc.tm_min * 100LL +
         tm_utc.tm_sec;
}

LocalDirStore::LocalDirStore(std::string root) : root_(std::move(root)) {}

std::vector<StoreEntry> LocalDirStore::list_all() {
  std::vector<StoreEntry> out;
  auto consider = [&](const fs::path& file, const std::string& rel) {
    if (!fs::is_regular_file(file) || !image_extension(file)) return;
    auto ts = parse_capture_timestamp(file.filename().string());
    if (!ts) return;
    out.push_back(StoreEntry{rel, *ts});
  };
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_directory()) {
      std::string dir = entry.path().filename().string();
      if (dir.size() != 8 || !all_digits(dir)) continue;
      for (const auto& inner : fs::directory_iterator(entry.path()))
        consider(inner.path(), dir + "/" + inner.path().filename().string());
    } else {
      consider(entry.path(), entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const StoreEntry& a, const StoreEntry& b) { return a.name < b.name; });
  return out;
}

std::vector<StoreEntry> LocalDirStore::list(int64_t day) {
  std::vector<StoreEntry> out;
  for (auto& e : list_all())
    if (e.captured_at / 1000000 == day) out.push_back(std::move(e));
  return out;
}

std::vector<uint8_t> LocalDirStore::fetch(const std::string& name) {
  return read_file_bytes((fs::path(root_) / name).string());
}

const char* to_string(RecordStatus s) {
  switch (s) {
    case RecordStatus::kOk:
      return "OK";
    case RecordStatus::kInvalid:
      return "INVALID";
    case RecordStatus::kFailed:
      return "FAILED";
  }
  return "FAILED";
}

namespace {

std::optional<RecordStatus> status_from_string(const std::string& s) {
  if (s == "OK") return RecordStatus::kOk;
  if (s == "INVALID") return RecordStatus::kInvalid;
  if (s == "FAILED") return RecordStatus::kFailed;
  return std::nullopt;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string format_row(const ImageRecord& rec) {
  char buf[512];
  if (rec.status == RecordStatus::kOk) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%.17g,%s,%s\n", rec.name.c_str(),
                  static_cast<long long>(rec.captured_at),
                  static_cast<long long>(rec.processed_at), rec.foam_pct, rec.mask_path.c_str(),
                  to_string(rec.status));
  } else {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,,%s,%s\n", rec.name.c_str(),
                  static_cast<long long>(rec.captured_at),
                  static_cast<long long>(rec.processed_at), rec.mask_path.c_str(),
                  to_string(rec.status));
  }
  return buf;
}

}  // namespace

Registry::Registry(const std::string& path) : path_(path) {
  bool existed = fs::exists(path);
  uintmax_t keep_bytes = 0;
  bool truncate_torn = false;
  if (existed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open registry: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t pos = 0;
    int line_no = 0;
    while (pos < content.size()) {
      size_t nl = content.find('\n', pos);
      if (nl == std::string::npos) {
        // A crash mid-append left a partial row. It was never a record, and
        // appending after it would corrupt the next row, so cut it off.
        spdlog::warn("registry {}: dropping torn trailing line", path);
        keep_bytes = pos;
        truncate_torn = true;
        break;
      }
      std::string line = content.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.empty()) continue;
      if (line_no == 1 && line == kHeader) continue;
      auto fields = split_csv(line);
      auto status = fields.size() == 6 ? status_from_string(fields[5]) : std::nullopt;
      if (!status) {
        spdlog::warn("registry {}: skipping malformed line {}", path, line_no);
        continue;
      }
      ImageRecord rec;
      rec.name = fields[0];
      try {
        rec.captured_at = fields[1].empty() ? 0 : std::stoll(fields[1]);
        rec.processed_at = fields[2].empty() ? 0 : std::stoll(fields[2]);
        rec.foam_pct = fields[3].empty() ? 0.0 : std::stod(fields[3]);
      } catch (const std::exception&) {
        spdlog::warn("registry {}: skipping malformed line {}", path, line_no);
        continue;
      }
      rec.mask_path = fields[4];
      rec.status = *status;
      rows_.push_back(std::move(rec));
    }
  }

  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open registry for append: " + path);
  if (truncate_torn) {
    if (::ftruncate(fd_, static_cast<off_t>(keep_bytes)) != 0)
      throw std::runtime_error("cannot truncate torn registry tail: " + path);
    ::fsync(fd_);
  }
  if (!existed || fs::file_size(path) == 0) {
    std::string header = std::string(kHeader) + "\n";
    if (::write(fd_, header.data(), header.size()) != static_cast<ssize_t>(header.size()))
      throw std::runtime_error("cannot write registry header");
    ::fsync(fd_);
  }

  // Newest row per name; rows_ order is file order, later rows win.
  std::map<std::string, size_t> latest;
  for (size_t i = 0; i < rows_.size(); ++i) latest[rows_[i].name] = i;
  for (auto& [name, i] : latest) index_.push_back(i);
}

Registry::~Registry() {
  if (fd_ >= 0) ::close(fd_);
}

size_t Registry::locate(const std::string& name) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), name,
                             [&](size_t i, const std::string& n) { return rows_[i].name < n; });
  if (it == index_.end() || rows_[*it].name != name) return static_cast<size_t>(-1);
  return static_cast<size_t>(it - index_.begin());
}

bool Registry::contains(const std::string& name) const {
  std::lock_guard lock(mu_);
  return locate(name) != static_cast<size_t>(-1);
}

std::optional<ImageRecord> Registry::find(const std::string& name) const {
  std::lock_guard lock(mu_);
  size_t pos = locate(name);
  if (pos == static_cast<size_t>(-1)) return std::nullopt;
  return rows_[index_[pos]];
}

size_t Registry::size() const {
  std::lock_guard lock(mu_);
  return index_.size();
}

void Registry::append(const ImageRecord& rec) {
  if (rec.name.empty() || rec.name.find(',') != std::string::npos ||
      rec.name.find('\n') != std::string::npos)
    throw std::invalid_argument("registry names must be nonempty and comma/newline free");
  if (rec.mask_path.find(',') != std::string::npos ||
      rec.mask_path.find('\n') != std::string::npos)
    throw std::invalid_argument("mask paths must be comma/newline free");

  std::string line = format_row(rec);
  std::lock_guard lock(mu_);
  if (::write(fd_, line.data(), line.size()) != static_cast<ssize_t>(line.size()))
    throw std::runtime_error("registry append failed");
  ::fsync(fd_);

  rows_.push_back(rec);
  size_t row = rows_.size() - 1;
  auto it = std::lower_bound(index_.begin(), index_.end(), rec.name,
                             [&](size_t i, const std::string& n) { return rows_[i].name < n; });
  if (it != index_.end() && rows_[*it].name == rec.name)
    *it = row;
  else
    index_.insert(it, row);
}

std::vector<std::string> Registry::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  out.reserve(index_.size());
  for (size_t i : index_) out.push_back(rows_[i].name);
  return out;
}

ValidationResult validate_image(const std::vector<uint8_t>& bytes) {
  ValidationResult res;
  Image img;
  try {
    img = decode_image(bytes);
  } catch (const std::exception&) {
    res.reason = "decode";
    return res;
  }
  if (img.width < 64 || img.height < 64) {
    res.reason = "too-small";
    return res;
  }
  uint8_t first = img.data.empty() ? 0 : img.data[0];
  bool constant = std::all_of(img.data.begin(), img.data.end(),
                              [&](uint8_t v) { return v == first; });
  if (constant) {
    res.reason = "constant";
    return res;
  }
  res.ok = true;
  res.image = std::move(img);
  return res;
}

ReadinessReport self_check(const AcquisitionConfig& cfg) {
  ReadinessReport report;

  CheckResult store{"store", false, ""};
  try {
    if (!fs::is_directory(cfg.store_root)) {
      store.detail = "store root is not a directory: " + cfg.store_root;
    } else {
      LocalDirStore probe(cfg.store_root);
      size_t n = probe.list_all().size();
      store.ok = true;
      store.detail = std::to_string(n) + " images listed";
    }
  } catch (const std::exception& ex) {
    store.detail = ex.what();
  }
  report.checks.push_back(store);

  CheckResult reg{"registry", false, ""};
  try {
    Registry probe(cfg.registry_path);
    reg.ok = true;
    reg.detail = std::to_string(probe.size()) + " records";
  } catch (const std::exception& ex) {
    reg.detail = ex.what();
  }
  report.checks.push_back(reg);

  CheckResult model{"model", false, ""};
  try {
    ModelParams params = load_checkpoint(cfg.model_path);
    if (same_manifest(params, make_model_params())) {
      model.ok = true;
      model.detail = "checkpoint manifest valid";
    } else {
      model.detail = "checkpoint manifest does not match the model";
    }
  } catch (const std::exception& ex) {
    model.detail = ex.what();
  }
  report.checks.push_back(model);

  report.ready = std::all_of(report.checks.begin(), report.checks.end(),
                             [](const CheckResult& c) { return c.ok; });
  return report;
}

std::optional<std::string> poll_latest(ImageStore& store, const Registry& registry, int64_t day) {
  std::optional<StoreEntry> best;
  for (auto& e : store.list(day)) {
    if (registry.contains(e.name)) continue;
    if (!best || e.captured_at > best->captured_at ||
        (e.captured_at == best->captured_at && e.name > best->name))
      best = std::move(e);
  }
  if (!best) return std::nullopt;
  return best->name;
}

ImageRecord process_one(const std::string& name, ImageStore& store, Registry& registry,
                        const ModelParams& model, const InferenceConfig& infer_cfg,
                        const std::string& mask_dir) {
  if (auto existing = registry.find(name); existing && existing->status == RecordStatus::kOk)
    return *existing;

  ImageRecord rec;
  rec.name = name;
  rec.captured_at = parse_capture_timestamp(name).value_or(0);
  rec.processed_at = utc_now_compact();

  std::vector<uint8_t> bytes;
  try {
    bytes = store.fetch(name);
  } catch (const std::exception& ex) {
    spdlog::warn("{}: fetch failed: {}", name, ex.what());
    rec.status = RecordStatus::kFailed;
    registry.append(rec);
    return rec;
  }

  ValidationResult valid = validate_image(bytes);
  if (!valid.ok) {
    spdlog::warn("{}: invalid image ({})", name, valid.reason);
    rec.status = RecordStatus::kInvalid;
    registry.append(rec);
    return rec;
  }

  try {
    SegmentationResult seg = segment_foam(valid.image, model, infer_cfg);
    fs::create_directories(mask_dir);
    std::string stem = fs::path(name).stem().string();
    std::string mask_path = (fs::path(mask_dir) / (stem + "_mask.png")).string();
    save_mask_png(seg.mask, mask_path);
    rec.foam_pct = seg.foam_pct;
    rec.mask_path = mask_path;
    rec.status = RecordStatus::kOk;
  } catch (const std::exception& ex) {
    spdlog::warn("{}: processing failed: {}", name, ex.what());
    rec.status = RecordStatus::kFailed;
  }
  registry.append(rec);
  return rec;
}

std::vector<std::string> verify_and_backfill(ImageStore& store, Registry& registry,
                                             const ModelParams& model,
                                             const InferenceConfig& infer_cfg,
                                             const std::string& mask_dir) {
  std::vector<StoreEntry> missing;
  for (auto& e : store.list_all())
    if (!registry.contains(e.name)) missing.push_back(std::move(e));
  std::sort(missing.begin(), missing.end(), [](const StoreEntry& a, const StoreEntry& b) {
    if (a.captured_at != b.captured_at) return a.captured_at < b.captured_at;
    return a.name < b.name;
  });

  std::vector<std::string> recovered;
  for (const auto& e : missing) {
    ImageRecord rec = process_one(e.name, store, registry, model, infer_cfg, mask_dir);
    if (rec.status == RecordStatus::kOk) recovered.push_back(e.name);
  }
  if (!missing.empty())
    spdlog::info("backfill: {} missing, {} recovered", missing.size(), recovered.size());
  return recovered;
}

int monitor_run(const AcquisitionConfig& cfg, bool verify_only) {
  ReadinessReport report = self_check(cfg);
  for (const auto& c : report.checks)
    spdlog::info("self-check {}: {} ({})", c.component, c.ok ? "pass" : "FAIL", c.detail);
  if (!report.ready) {
    spdlog::error("self-check failed, not starting");
    return 1;
  }

  std::string mask_dir = cfg.mask_dir;
  if (mask_dir.empty()) {
    fs::path reg(cfg.registry_path);
    mask_dir = (reg.has_parent_path() ? reg.parent_path() / "masks" : fs::path("masks")).string();
  }

  ModelParams model = load_checkpoint(cfg.model_path);
  LocalDirStore store(cfg.store_root);
  Registry registry(cfg.registry_path);

  if (verify_only) {
    auto recovered = verify_and_backfill(store, registry, model, cfg.infer, mask_dir);
    spdlog::info("verification sweep complete: {} images processed", recovered.size());
    return 0;
  }

  auto today = cfg.today ? cfg.today : utc_today;
  BoundedQueue<std::string> pending(16);
  std::atomic<bool> stop{false};

  std::thread poller([&] {
    std::vector<std::string> pushed;  // avoid re-queueing while inference runs
    int polls = 0;
    while (!stop.load()) {
      if (cfg.max_polls >= 0 && polls >= cfg.max_polls) break;
      ++polls;
      try {
        auto name = poll_latest(store, registry, today());
        if (name && std::find(pushed.begin(), pushed.end(), *name) == pushed.end()) {
          pushed.push_back(*name);
          if (!pending.push(*name)) break;
          spdlog::info("queued {}", *name);
        }
      } catch (const std::exception& ex) {
        spdlog::warn("poll failed (will retry): {}", ex.what());
      }
      auto wake = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(cfg.poll_interval_s));
      while (!stop.load() && std::chrono::steady_clock::now() < wake)
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    pending.close();
  });

  while (auto name = pending.pop()) {
    ImageRecord rec = process_one(*name, store, registry, model, cfg.infer, mask_dir);
    spdlog::info("processed {}: {} foam={:.2f}%", *name, to_string(rec.status),
                 rec.status == RecordStatus::kOk ? rec.foam_pct : 0.0);
  }

  stop.store(true);
  poller.join();
  return 0;
}

}  // namespace foamfed
