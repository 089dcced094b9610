#pragma once

#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tierkv/lsm/iterator.hpp"

namespace tierkv::lsm {

// Sorted write buffer holding the newest version of each key.
class Memtable {
 public:
  // Charged per entry on top of key and value bytes.
  static constexpr size_t kEntryOverhead = 16;

  void Add(SequenceNumber seq, ValueType type, std::string_view key, std::string_view value);

  // True when the key is present; `*deleted` tells a tombstone apart.
  bool Get(std::string_view key, std::string* value, bool* deleted) const;

  // Sum over entries of key + value + kEntryOverhead.
  size_t bytes() const;
  size_t entries() const;
  bool empty() const { return entries() == 0; }
  SequenceNumber max_seq() const;

  // Copies entries from `start` on until `live` non-deletions were copied.
  std::vector<OwnedEntry> CopyFrom(std::string_view start, size_t live) const;
  // Iterator over a snapshot copy of every entry.
  std::unique_ptr<InternalIterator> NewIterator() const;

 private:
  struct Rec {
    SequenceNumber seq;
    ValueType type;
    std::string value;
  };

  mutable std::shared_mutex mu_;
  std::map<std::string, Rec, std::less<>> map_;
  size_t bytes_ = 0;
  SequenceNumber max_seq_ = 0;
};

using MemtablePtr = std::shared_ptr<Memtable>;

}  // namespace tierkv::lsm
