#include "tierkv/lsm/iterator.hpp"

#include <algorithm>

namespace tierkv::lsm {

void VectorIterator::Seek(std::string_view target) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), target,
                             [](const OwnedEntry& e, std::string_view t) { return e.key < t; });
  pos_ = static_cast<size_t>(it - entries_.begin());
}

namespace {

class MergingIterator : public InternalIterator {
 public:
  explicit MergingIterator(std::vector<std::unique_ptr<InternalIterator>> children)
      : children_(std::move(children)) {}

  void SeekToFirst() override {
    for (auto& c : children_) c->SeekToFirst();
    FindCurrent();
  }
  void Seek(std::string_view target) override {
    for (auto& c : children_) c->Seek(target);
    FindCurrent();
  }
  bool Valid() const override { return current_ != nullptr; }
  void Next() override {
    // Step every child sitting on the current key past it.
    std::string k(current_->key());
    for (auto& c : children_) {
      if (c->Valid() && c->key() == k) c->Next();
    }
    FindCurrent();
  }
  std::string_view key() const override { return current_->key(); }
  std::string_view value() const override { return current_->value(); }
  SequenceNumber seq() const override { return current_->seq(); }
  ValueType type() const override { return current_->type(); }
  Status status() const override {
    for (const auto& c : children_) {
      Status s = c->status();
      if (!s.ok()) return s;
    }
    return Status::OK();
  }

 private:
  void FindCurrent() {
    current_ = nullptr;
    for (auto& c : children_) {
      if (!c->Valid()) continue;
      if (current_ == nullptr || c->key() < current_->key() ||
          (c->key() == current_->key() && c->seq() > current_->seq())) {
        current_ = c.get();
      }
    }
  }

  std::vector<std::unique_ptr<InternalIterator>> children_;
  InternalIterator* current_ = nullptr;
};

}  // namespace

std::unique_ptr<InternalIterator> NewMergingIterator(
    std::vector<std::unique_ptr<InternalIterator>> children) {
  return std::make_unique<MergingIterator>(std::move(children));
}

}  // namespace tierkv::lsm
