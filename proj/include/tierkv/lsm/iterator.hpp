#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tierkv/lsm/format.hpp"
#include "tierkv/status.hpp"

namespace tierkv::lsm {

// Ordered cursor over (key, sequence, type, value). Each source holds at
// most one version of a key.
class InternalIterator {
 public:
  virtual ~InternalIterator() = default;
  virtual void SeekToFirst() = 0;
  // First entry with key >= target.
  virtual void Seek(std::string_view target) = 0;
  virtual bool Valid() const = 0;
  virtual void Next() = 0;
  virtual std::string_view key() const = 0;
  virtual std::string_view value() const = 0;
  virtual SequenceNumber seq() const = 0;
  virtual ValueType type() const = 0;
  virtual Status status() const { return Status::OK(); }
};

struct OwnedEntry {
  std::string key;
  std::string value;
  SequenceNumber seq = 0;
  ValueType type = ValueType::kValue;
};

// Iterates a sorted vector it owns.
class VectorIterator : public InternalIterator {
 public:
  explicit VectorIterator(std::vector<OwnedEntry> entries) : entries_(std::move(entries)) {}
  void SeekToFirst() override { pos_ = 0; }
  void Seek(std::string_view target) override;
  bool Valid() const override { return pos_ < entries_.size(); }
  void Next() override { ++pos_; }
  std::string_view key() const override { return entries_[pos_].key; }
  std::string_view value() const override { return entries_[pos_].value; }
  SequenceNumber seq() const override { return entries_[pos_].seq; }
  ValueType type() const override { return entries_[pos_].type; }

 private:
  std::vector<OwnedEntry> entries_;
  size_t pos_ = 0;
};

// Merges children; for a key present in several children only the entry with
// the highest sequence number is yielded. Deletions are yielded too.
std::unique_ptr<InternalIterator> NewMergingIterator(
    std::vector<std::unique_ptr<InternalIterator>> children);

}  // namespace tierkv::lsm
