#pragma once

// Sorted string tables: 4 KiB data blocks, an index block and a fixed footer,
// each block followed by a CRC32 of its contents.

#include <atomic>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tierkv/io_context.hpp"
#include "tierkv/lsm/iterator.hpp"
#include "tierkv/status.hpp"
#include "tierkv/tier_fs.hpp"

namespace tierkv::lsm {

inline constexpr size_t kBlockTarget = 4096 - 4;  // content bytes; the CRC fills the block
inline constexpr size_t kFooterSize = 32;
inline constexpr uint64_t kTableMagic = 0x7469657273737431ull;

using BlockPtr = std::shared_ptr<const std::string>;

// LRU cache of data blocks keyed by (file number, offset). Keyed by the
// logical file, so reads served from any replica share entries.
class BlockCache {
 public:
  explicit BlockCache(size_t capacity_bytes);

  BlockPtr Lookup(uint64_t file, uint64_t offset);
  void Insert(uint64_t file, uint64_t offset, BlockPtr block);
  size_t capacity() const { return capacity_; }
  size_t usage() const;
  uint64_t hits() const { return hits_.load(std::memory_order_relaxed); }
  uint64_t misses() const { return misses_.load(std::memory_order_relaxed); }

 private:
  static constexpr int kShards = 16;
  struct Key {
    uint64_t file, offset;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    size_t operator()(const Key& k) const { return std::hash<uint64_t>()(k.file * 0x9e3779b97f4a7c15ull ^ k.offset); }
  };
  struct Shard {
    mutable std::mutex mu;
    std::list<std::pair<Key, BlockPtr>> lru;  // front = most recent
    std::unordered_map<Key, std::list<std::pair<Key, BlockPtr>>::iterator, KeyHash> map;
    size_t usage = 0;
  };
  Shard& ShardFor(const Key& k) { return shards_[KeyHash()(k) % kShards]; }

  size_t capacity_;
  Shard shards_[kShards];
  std::atomic<uint64_t> hits_{0}, misses_{0};
};

struct TableProperties {
  uint64_t entries = 0;
  uint64_t file_size = 0;
  std::string smallest;
  std::string largest;
};

class TableBuilder {
 public:
  static Status Create(TierFs* fs, const std::string& name, const IoContext& context,
                       std::unique_ptr<TableBuilder>* out);
  ~TableBuilder();

  // Keys must be strictly increasing.
  Status Add(std::string_view key, SequenceNumber seq, ValueType type, std::string_view value);
  // Writes the index and footer, syncs and closes the file.
  Status Finish(TableProperties* props);
  // Closes and removes the partial file.
  void Abandon();

  uint64_t entries() const { return props_.entries; }
  uint64_t EstimatedSize() const { return offset_ + block_.size() + pending_.size(); }

 private:
  TableBuilder(TierFs* fs, std::string name, uint64_t fd) : fs_(fs), name_(std::move(name)), fd_(fd) {}
  Status FinishBlock();
  Status FlushPending(bool force);

  TierFs* fs_;
  std::string name_;
  uint64_t fd_;
  bool closed_ = false;
  std::string block_;
  std::string pending_;  // finished blocks not yet written
  std::string index_;
  std::string last_key_;
  uint64_t offset_ = 0;  // bytes already written to the file
  TableProperties props_;
};

// An open table. Holds a read-only descriptor and the parsed index.
class Table : public std::enable_shared_from_this<Table> {
 public:
  static Status Open(TierFs* fs, const std::string& name, uint64_t number, BlockCache* cache,
                     std::shared_ptr<Table>* out);
  ~Table();

  // Looks `key` up; `*found` is false when the table does not hold it.
  Status Get(std::string_view key, bool* found, std::string* value, bool* deleted);

  // `fill_cache` false leaves the block cache untouched (compaction input).
  std::unique_ptr<InternalIterator> NewIterator(bool fill_cache);

  uint64_t number() const { return number_; }
  size_t block_count() const { return index_.size(); }

 private:
  friend class TableIterator;
  struct IndexEntry {
    std::string last_key;
    uint64_t offset;
    uint32_t size;
  };

  Table(TierFs* fs, uint64_t fd, uint64_t number, BlockCache* cache)
      : fs_(fs), fd_(fd), number_(number), cache_(cache) {}
  Status ReadBlock(size_t i, bool fill_cache, BlockPtr* out) const;

  TierFs* fs_;
  uint64_t fd_;
  uint64_t number_;
  BlockCache* cache_;
  std::vector<IndexEntry> index_;
};

using TablePtr = std::shared_ptr<Table>;

// One block entry decoded in place.
struct BlockEntry {
  std::string_view key;
  std::string_view value;
  SequenceNumber seq = 0;
  ValueType type = ValueType::kValue;
};

// Decodes the entry at the front of `*in`.
bool DecodeBlockEntry(std::string_view* in, BlockEntry* e);

}  // namespace tierkv::lsm
