#pragma once

// Offline profiling: device throughput curves, per-level writer demand of a
// running store, and the placement scheme derived from both.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tierkv/device.hpp"
#include "tierkv/placement.hpp"
#include "tierkv/status.hpp"
#include "tierkv/tier_fs.hpp"

namespace tierkv {

enum class ProfileMode { kRead, kWrite };

struct DeviceProfileOptions {
  std::vector<int> thread_counts{1, 2, 4, 8, 16, 32, 64};
  std::chrono::milliseconds duration{500};  // wall time per point
  ProfileMode mode = ProfileMode::kWrite;
  // Stop after this many consecutive points more than `tolerance` below the
  // best seen so far.
  double tolerance = 0.10;
  int stop_after = 2;
  // Blocks in each worker's private region.
  uint64_t region_blocks = 16;
  // Points with fewer operations than this are flagged low-confidence.
  uint64_t min_ops = 200;
  // Model dilation. Zero picks one from the configured curve so one core
  // can keep up.
  double time_scale = 0;
  Interpolation interpolation = Interpolation::kLinear;
};

struct MeasuredPoint {
  int concurrency = 1;
  double ops_per_sec = 0;  // model ops/s
  uint64_t ops = 0;
  bool low_confidence = false;
};

struct DeviceMeasurement {
  std::vector<MeasuredPoint> points;
  int knee = 1;
  bool stopped_early = false;
  bool low_confidence = false;
  double time_scale = 1;

  ThroughputCurve Curve() const;
};

// Closed-loop 4 KiB sequential I/O with n workers on disjoint files, for
// each n in order. Talks to the device directly; nothing goes through the
// facade, so no hotness or writer accounting is touched. Unlimited devices
// report +inf at every point.
Status ProfileDevice(const DeviceProfile& tier, const DeviceProfileOptions& options,
                     DeviceMeasurement* out);

// Writes both curves into a profile for `tier`, keeping its capacity and
// backing path.
Status ProfileDeviceBoth(const DeviceProfile& tier, DeviceProfileOptions options,
                         DeviceProfile* out);

struct ConcurrencyDemand {
  double wal = 0;
  double flush = 0;
  std::map<int, double> per_level;        // mean compaction writers into level
  std::map<int, uint64_t> level_size;     // mean resident bytes
  uint64_t wal_bytes = 0;
  bool no_compactions = false;
  uint64_t samples = 0;

  double Level(int level) const;
  uint64_t Size(int level) const;
  int max_level() const;

  std::string Serialize() const;
  static Status Parse(std::string_view text, ConcurrencyDemand* out);
  static Status Load(const std::filesystem::path& file, ConcurrencyDemand* out);
  Status Save(const std::filesystem::path& file) const;
};

// Samples the facade's open-writer counts every `period` and averages them.
class DemandSampler {
 public:
  using SizeProbe = std::function<std::map<int, uint64_t>()>;

  DemandSampler(TierFs* fs, std::chrono::milliseconds period, int levels,
                SizeProbe sizes = nullptr);
  ~DemandSampler();

  void Start();
  ConcurrencyDemand Stop();
  // Sample once; also called by the background thread.
  void SampleNow();

 private:
  void Loop();

  TierFs* fs_;
  std::chrono::milliseconds period_;
  int levels_;
  SizeProbe sizes_;

  std::mutex mu_;
  uint64_t samples_ = 0;
  uint64_t wal_sum_ = 0, flush_sum_ = 0;
  std::vector<uint64_t> level_sum_;
  std::map<int, double> size_sum_;
  uint64_t size_samples_ = 0;
  uint64_t compaction_seen_ = 0;

  std::atomic<bool> stop_{false};
  std::thread thread_;
};

// Time-averaged writer counts over [begin, end] recomputed from an event log.
// Writers open at `begin` are not known to the log and must be zero.
ConcurrencyDemand DemandFromEvents(const std::vector<WriterEvent>& events,
                                   std::chrono::steady_clock::time_point begin,
                                   std::chrono::steady_clock::time_point end);

struct SchemeOptions {
  // Fraction of tier-0 capacity kept away from extra levels.
  double reserve_fraction = 0.2;
  int levels = 7;
};

// WAL, L0 and L1 go to tier 0. Deeper levels follow while the summed demand
// stays within tier 0's write parallelism and their summed size within
// capacity * (1 - reserve). The rest fill later tiers by capacity. Space no
// level claims becomes cache budget on every tier but the last.
Status GenerateScheme(const ConcurrencyDemand& demand, const std::vector<DeviceProfile>& tiers,
                      const SchemeOptions& options, PlacementScheme* out);

}  // namespace tierkv
