#pragma once

// Write-ahead log: a sequence of [crc32][length][payload] records. A torn or
// corrupt tail ends replay.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tierkv/lsm/format.hpp"
#include "tierkv/status.hpp"
#include "tierkv/tier_fs.hpp"

namespace tierkv::lsm {

// Puts and deletes applied atomically with consecutive sequence numbers.
class WriteBatch {
 public:
  void Put(std::string_view key, std::string_view value);
  void Delete(std::string_view key);
  void Append(const WriteBatch& other);
  void Clear();
  size_t count() const { return count_; }
  size_t ApproximateSize() const { return body_.size(); }

  // fixed64 first sequence, varint count, then the operations.
  std::string Encode(SequenceNumber first) const;
  using Handler = std::function<void(SequenceNumber, ValueType, std::string_view,
                                     std::string_view)>;
  // Applies every operation of an encoded batch.
  static Status Iterate(std::string_view encoded, const Handler& fn);
  Status ForEach(SequenceNumber first, const Handler& fn) const;

 private:
  std::string body_;
  size_t count_ = 0;
};

class WalWriter {
 public:
  WalWriter(TierFs* fs, uint64_t fd) : fs_(fs), fd_(fd) {}
  ~WalWriter();
  WalWriter(const WalWriter&) = delete;
  WalWriter& operator=(const WalWriter&) = delete;

  Status AddRecord(std::string_view payload);
  Status Sync();
  Status Close();
  uint64_t bytes() const { return bytes_; }

 private:
  TierFs* fs_;
  uint64_t fd_;
  bool closed_ = false;
  uint64_t bytes_ = 0;
};

struct WalReadResult {
  std::vector<std::string> records;
  bool torn_tail = false;
};

// Reads every intact record of a log file through the facade.
Status ReadWal(TierFs* fs, const std::string& name, WalReadResult* out);

}  // namespace tierkv::lsm
