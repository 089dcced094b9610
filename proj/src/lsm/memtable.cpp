#include "tierkv/lsm/memtable.hpp"

#include <algorithm>
#include <mutex>

namespace tierkv::lsm {

void Memtable::Add(SequenceNumber seq, ValueType type, std::string_view key,
                   std::string_view value) {
  std::unique_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) {
    map_.emplace(std::string(key), Rec{seq, type, std::string(value)});
    bytes_ += key.size() + value.size() + kEntryOverhead;
  } else {
    bytes_ -= it->second.value.size();
    bytes_ += value.size();
    it->second = Rec{seq, type, std::string(value)};
  }
  max_seq_ = std::max(max_seq_, seq);
}

bool Memtable::Get(std::string_view key, std::string* value, bool* deleted) const {
  std::shared_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return false;
  *deleted = it->second.type == ValueType::kDeletion;
  if (!*deleted) *value = it->second.value;
  return true;
}

size_t Memtable::bytes() const {
  std::shared_lock lock(mu_);
  return bytes_;
}

size_t Memtable::entries() const {
  std::shared_lock lock(mu_);
  return map_.size();
}

SequenceNumber Memtable::max_seq() const {
  std::shared_lock lock(mu_);
  return max_seq_;
}

std::vector<OwnedEntry> Memtable::CopyFrom(std::string_view start, size_t live) const {
  std::vector<OwnedEntry> out;
  std::shared_lock lock(mu_);
  size_t got = 0;
  for (auto it = map_.lower_bound(start); it != map_.end() && got < live; ++it) {
    out.push_back({it->first, it->second.value, it->second.seq, it->second.type});
    if (it->second.type == ValueType::kValue) ++got;
  }
  return out;
}

std::unique_ptr<InternalIterator> Memtable::NewIterator() const {
  std::vector<OwnedEntry> all;
  {
    std::shared_lock lock(mu_);
    all.reserve(map_.size());
    for (const auto& [k, r] : map_) all.push_back({k, r.value, r.seq, r.type});
  }
  return std::make_unique<VectorIterator>(std::move(all));
}

}  // namespace tierkv::lsm
