#pragma once

// YCSB-style operation streams: key choosers, operation mixes and the
// standard A-F presets.

#include <atomic>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "tierkv/kv_text.hpp"
#include "tierkv/status.hpp"

namespace tierkv {

enum class KeyDistribution { kUniform, kZipfian, kLatest };

Status ParseKeyDistribution(std::string_view name, KeyDistribution* out);
std::string_view KeyDistributionName(KeyDistribution d);

struct OpMix {
  double read = 0;
  double update = 0;
  double insert = 0;
  double scan = 0;
  double read_modify_write = 0;

  double Sum() const { return read + update + insert + scan + read_modify_write; }
};

struct WorkloadSpec {
  std::string name = "custom";
  OpMix mix{.read = 0.5, .update = 0.5};
  KeyDistribution distribution = KeyDistribution::kZipfian;
  double theta = 0.99;
  uint64_t record_count = 200000;
  uint64_t operation_count = 500000;
  int client_threads = 4;
  size_t value_bytes = 1024;
  uint64_t seed = 1;
  int max_scan_length = 100;

  Status Validate() const;

  // YCSB core workloads "a" to "f" with this spec's sizes.
  static Status Preset(std::string_view letter, WorkloadSpec* out);
  // Reads `workload` (a preset letter) and `workload.*` keys.
  Status Apply(const KvText& kv);
};

// Zipfian ranks in [0, n) by rejection-inversion (Hormann and Derflinger),
// rank 0 most popular. Needs O(1) setup, so it also serves growing ranges.
class ZipfianGenerator {
 public:
  ZipfianGenerator(uint64_t n, double theta);

  template <typename Rng>
  uint64_t Next(Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    while (true) {
      double u = h_n_ + u01(rng) * (h_x1_ - h_n_);
      double x = HInverse(u);
      double k = std::floor(x + 0.5);
      if (k < 1) k = 1;
      if (k > double(n_)) k = double(n_);
      if (k - x <= s_ || u >= H(k + 0.5) - std::exp(-theta_ * std::log(k))) {
        return static_cast<uint64_t>(k) - 1;
      }
    }
  }

  uint64_t n() const { return n_; }

 private:
  double H(double x) const;
  double HInverse(double x) const;

  uint64_t n_;
  double theta_;
  double h_x1_, h_n_, s_;
};

enum class OpType { kRead, kUpdate, kInsert, kScan, kReadModifyWrite };

std::string_view OpTypeName(OpType t);

struct Operation {
  OpType type = OpType::kRead;
  uint64_t key = 0;  // record index
  int scan_length = 0;
};

// Record index -> key. Indices are hashed so popular ranks spread over the
// key space instead of clustering at its start.
std::string RecordKey(uint64_t index);
// Deterministic value for (record, version) of `bytes` length.
std::string RecordValue(uint64_t index, uint64_t version, size_t bytes);

// Shared across the client threads of one run: the insert frontier.
class KeySpace {
 public:
  explicit KeySpace(uint64_t loaded) : next_(loaded), acked_(loaded) {}
  uint64_t ReserveInsert() { return next_.fetch_add(1, std::memory_order_relaxed); }
  void AckInsert(uint64_t index);
  // Records known to exist.
  uint64_t acked() const { return acked_.load(std::memory_order_acquire); }

 private:
  std::atomic<uint64_t> next_;
  std::atomic<uint64_t> acked_;
};

// One client's operation stream. With the same spec, stream id and insert
// order it yields the same operations.
class OpGenerator {
 public:
  OpGenerator(const WorkloadSpec& spec, KeySpace* keys, uint64_t stream);

  Operation Next();

 private:
  uint64_t ChooseExisting();

  const WorkloadSpec& spec_;
  KeySpace* keys_;
  std::mt19937_64 rng_;
  ZipfianGenerator zipf_;
  double cumulative_[5];
};

}  // namespace tierkv
