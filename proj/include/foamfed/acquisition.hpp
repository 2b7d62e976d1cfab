#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "foamfed/inference.hpp"
#include "foamfed/raster.hpp"
#include "foamfed/tensor.hpp"

namespace foamfed {

// Capture timestamps ride in filenames as YYYYMMDD_HHMMSS and are handled
// internally as the integer YYYYMMDDHHMMSS; a day is the integer YYYYMMDD.
std::optional<int64_t> parse_capture_timestamp(const std::string& name);
int64_t utc_today();
int64_t utc_now_compact();

struct StoreEntry {
  std::string name;  // store-relative path usable with fetch()
  int64_t captured_at = 0;
};

// Listing is complete for committed files; fetch of a listed name either
// succeeds or throws (transient failure, caller retries).
class ImageStore {
 public:
  virtual ~ImageStore() = default;
  virtual std::vector<StoreEntry> list(int64_t day) = 0;
  virtual std::vector<StoreEntry> list_all() = 0;
  virtual std::vector<uint8_t> fetch(const std::string& name) = 0;
};

// Directory-backed store: images sit either flat in the root or inside
// one-level YYYYMMDD subdirectories. Files without a parsable capture
// timestamp or image extension are ignored.
class LocalDirStore : public ImageStore {
 public:
  explicit LocalDirStore(std::string root);
  std::vector<StoreEntry> list(int64_t day) override;
  std::vector<StoreEntry> list_all() override;
  std::vector<uint8_t> fetch(const std::string& name) override;

 private:
  std::string root_;
};

enum class RecordStatus { kOk, kInvalid, kFailed };

const char* to_string(RecordStatus s);

struct ImageRecord {
  std::string name;
  int64_t captured_at = 0;
  int64_t processed_at = 0;
  double foam_pct = 0.0;  // meaningful only when status == kOk
  std::string mask_path;
  RecordStatus status = RecordStatus::kFailed;
};

// Append-only CSV ledger, loaded fully at startup. Each append is a single
// write followed by fsync, so a crash leaves at most one torn trailing line,
// which the loader tolerates and drops. The newest row per name wins.
// Safe for one appending thread plus concurrent readers.
class Registry {
 public:
  static constexpr const char* kHeader = "name,captured_at,processed_at,foam_pct,mask_path,status";

  explicit Registry(const std::string& path);  // creates file+header if absent
  ~Registry();
  Registry(const Registry&) = delete;

  bool contains(const std::string& name) const;
  std::optional<ImageRecord> find(const std::string& name) const;
  void append(const ImageRecord& rec);
  size_t size() const;
  std::vector<std::string> names() const;
  const std::string& path() const { return path_; }

 private:
  size_t locate(const std::string& name) const;  // index_ position or npos

  std::string path_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::vector<ImageRecord> rows_;
  std::vector<size_t> index_;  // newest row per name, sorted by name
};

struct ValidationResult {
  bool ok = false;
  Image image;
  std::string reason;  // "decode" | "too-small" | "constant" when !ok
};

// Decode plus sanity checks: at least 64x64 and not a constant frame
// (all-black transmission failures are the common case).
ValidationResult validate_image(const std::vector<uint8_t>& bytes);

struct AcquisitionConfig {
  double poll_interval_s = 600.0;
  std::string store_root;
  std::string registry_path;
  std::string model_path;
  std::string mask_dir;  // "" = "masks" directory next to the registry
  InferenceConfig infer;
  int max_polls = -1;                // >= 0 bounds the continuous loop
  std::function<int64_t()> today;    // injectable clock, default utc_today
};

struct CheckResult {
  std::string component;
  bool ok = false;
  std::string detail;
};

struct ReadinessReport {
  bool ready = false;
  std::vector<CheckResult> checks;
};

// Startup self-check: store root listable, registry openable or creatable,
// model checkpoint loads with the expected manifest. Failures are report
// entries, not exceptions.
ReadinessReport self_check(const AcquisitionConfig& cfg);

// Picks the maximum-timestamp listing of the given day not yet in the
// registry (ties broken toward the lexicographically larger name).
std::optional<std::string> poll_latest(ImageStore& store, const Registry& registry, int64_t day);

// fetch -> validate -> segment -> mask PNG -> registry row. Idempotent:
// a name already recorded OK is returned unchanged without reprocessing.
// Fetch/validate/inference failures yield FAILED or INVALID rows.
ImageRecord process_one(const std::string& name, ImageStore& store, Registry& registry,
                        const ModelParams& model, const InferenceConfig& infer_cfg,
                        const std::string& mask_dir);

// Full-listing sweep: every store entry without a registry row is processed
// oldest-first. Returns the names that came back OK.
std::vector<std::string> verify_and_backfill(ImageStore& store, Registry& registry,
                                             const ModelParams& model,
                                             const InferenceConfig& infer_cfg,
                                             const std::string& mask_dir);

// Monitor entrypoint: self-check, then either one verification sweep
// (verify_only) or the continuous poll/process loop with a bounded handoff
// queue between the polling and inference threads. Returns a process exit
// code.
int monitor_run(const AcquisitionConfig& cfg, bool verify_only);

}  // namespace foamfed
