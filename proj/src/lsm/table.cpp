#include "tierkv/lsm/table.hpp"

#include <algorithm>

namespace tierkv::lsm {

namespace {

constexpr size_t kWriteChunk = 64 * 1024;

void EncodeEntry(std::string* dst, std::string_view key, SequenceNumber seq, ValueType type,
                 std::string_view value) {
  PutVarint64(dst, key.size());
  PutVarint64(dst, value.size());
  PutFixed64(dst, (seq << 8) | static_cast<uint8_t>(type));
  dst->append(key);
  dst->append(value);
}

}  // namespace

bool DecodeBlockEntry(std::string_view* in, BlockEntry* e) {
  uint64_t klen = 0, vlen = 0, tag = 0;
  if (!GetVarint64(in, &klen) || !GetVarint64(in, &vlen) || !GetFixed64(in, &tag)) return false;
  if (in->size() < klen + vlen) return false;
  e->key = in->substr(0, klen);
  e->value = in->substr(klen, vlen);
  e->seq = tag >> 8;
  uint8_t t = tag & 0xff;
  if (t > 1) return false;
  e->type = static_cast<ValueType>(t);
  in->remove_prefix(klen + vlen);
  return true;
}

// Block cache.

BlockCache::BlockCache(size_t capacity_bytes) : capacity_(capacity_bytes) {}

BlockPtr BlockCache::Lookup(uint64_t file, uint64_t offset) {
  if (capacity_ == 0) return nullptr;
  Key k{file, offset};
  Shard& s = ShardFor(k);
  std::lock_guard lock(s.mu);
  auto it = s.map.find(k);
  if (it == s.map.end()) {
    misses_.fetch_add(1, std::memory_order_relaxed);
    return nullptr;
  }
  s.lru.splice(s.lru.begin(), s.lru, it->second);
  hits_.fetch_add(1, std::memory_order_relaxed);
  return it->second->second;
}

void BlockCache::Insert(uint64_t file, uint64_t offset, BlockPtr block) {
  if (capacity_ == 0) return;
  Key k{file, offset};
  Shard& s = ShardFor(k);
  size_t limit = capacity_ / kShards;
  std::lock_guard lock(s.mu);
  auto it = s.map.find(k);
  if (it != s.map.end()) {
    s.usage -= it->second->second->size();
    s.lru.erase(it->second);
    s.map.erase(it);
  }
  s.usage += block->size();
  s.lru.emplace_front(k, std::move(block));
  s.map[k] = s.lru.begin();
  while (s.usage > limit && !s.lru.empty()) {
    auto& victim = s.lru.back();
    s.usage -= victim.second->size();
    s.map.erase(victim.first);
    s.lru.pop_back();
  }
}

size_t BlockCache::usage() const {
  size_t total = 0;
  for (const auto& s : shards_) {
    std::lock_guard lock(s.mu);
    total += s.usage;
  }
  return total;
}

// Builder.

Status TableBuilder::Create(TierFs* fs, const std::string& name, const IoContext& context,
                            std::unique_ptr<TableBuilder>* out) {
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(fs->OpenFile(name, OpenFlags::Create(), context, &fd));
  out->reset(new TableBuilder(fs, name, fd));
  return Status::OK();
}

TableBuilder::~TableBuilder() {
  if (!closed_) Abandon();
}

Status TableBuilder::Add(std::string_view key, SequenceNumber seq, ValueType type,
                         std::string_view value) {
  if (props_.entries > 0 && key <= std::string_view(last_key_)) {
    return Status::InvalidArgument("table keys out of order");
  }
  std::string entry;
  EncodeEntry(&entry, key, seq, type, value);
  if (!block_.empty() && block_.size() + entry.size() > kBlockTarget) {
    TIERKV_RETURN_IF_ERROR(FinishBlock());
  }
  block_ += entry;
  if (props_.entries == 0) props_.smallest.assign(key);
  last_key_.assign(key);
  ++props_.entries;
  return Status::OK();
}

Status TableBuilder::FinishBlock() {
  if (block_.empty()) return Status::OK();
  uint64_t block_offset = offset_ + pending_.size();
  uint32_t crc = Crc32(block_);
  pending_ += block_;
  PutFixed32(&pending_, crc);
  PutLengthPrefixed(&index_, last_key_);
  PutFixed64(&index_, block_offset);
  PutFixed32(&index_, static_cast<uint32_t>(block_.size() + 4));
  block_.clear();
  return FlushPending(false);
}

Status TableBuilder::FlushPending(bool force) {
  if (pending_.empty() || (!force && pending_.size() < kWriteChunk)) return Status::OK();
  TIERKV_RETURN_IF_ERROR(fs_->Append(fd_, pending_));
  offset_ += pending_.size();
  pending_.clear();
  return Status::OK();
}

Status TableBuilder::Finish(TableProperties* props) {
  TIERKV_RETURN_IF_ERROR(FinishBlock());
  uint64_t index_offset = offset_ + pending_.size();
  uint32_t crc = Crc32(index_);
  pending_ += index_;
  PutFixed32(&pending_, crc);
  PutFixed64(&pending_, index_offset);
  PutFixed64(&pending_, index_.size() + 4);
  PutFixed64(&pending_, props_.entries);
  PutFixed64(&pending_, kTableMagic);
  TIERKV_RETURN_IF_ERROR(FlushPending(true));
  TIERKV_RETURN_IF_ERROR(fs_->Fsync(fd_));
  closed_ = true;
  TIERKV_RETURN_IF_ERROR(fs_->Close(fd_));
  props_.largest = last_key_;
  props_.file_size = offset_;
  *props = props_;
  return Status::OK();
}

void TableBuilder::Abandon() {
  if (!closed_) {
    closed_ = true;
    fs_->Close(fd_);
  }
  fs_->Unlink(name_);
}

// Reader.

Status Table::Open(TierFs* fs, const std::string& name, uint64_t number, BlockCache* cache,
                   std::shared_ptr<Table>* out) {
  // Metadata reads never count toward file hotness.
  ContextScope scope(IoContext::Unknown());
  uint64_t size = 0;
  TIERKV_RETURN_IF_ERROR(fs->FileSize(name, &size));
  if (size < kFooterSize) return Status::Corruption(name + ": too short for a table");
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(fs->OpenFile(name, OpenFlags::ReadOnly(), std::nullopt, &fd));
  std::shared_ptr<Table> t(new Table(fs, fd, number, cache));

  std::string footer;
  TIERKV_RETURN_IF_ERROR(fs->Read(fd, size - kFooterSize, kFooterSize, &footer));
  if (footer.size() != kFooterSize) return Status::Corruption(name + ": short footer");
  uint64_t index_offset = DecodeFixed64(footer.data());
  uint64_t index_size = DecodeFixed64(footer.data() + 8);
  uint64_t magic = DecodeFixed64(footer.data() + 24);
  if (magic != kTableMagic || index_size < 4 || index_offset + index_size + kFooterSize != size) {
    return Status::Corruption(name + ": bad footer");
  }
  std::string index;
  TIERKV_RETURN_IF_ERROR(fs->Read(fd, index_offset, index_size, &index));
  if (index.size() != index_size) return Status::Corruption(name + ": short index");
  std::string_view body(index.data(), index.size() - 4);
  if (Crc32(body) != DecodeFixed32(index.data() + index.size() - 4)) {
    return Status::Corruption(name + ": index checksum mismatch");
  }
  while (!body.empty()) {
    std::string_view last;
    IndexEntry e;
    uint32_t sz = 0;
    if (!GetLengthPrefixed(&body, &last) || !GetFixed64(&body, &e.offset) ||
        !GetFixed32(&body, &sz)) {
      return Status::Corruption(name + ": bad index entry");
    }
    e.last_key.assign(last);
    e.size = sz;
    t->index_.push_back(std::move(e));
  }
  *out = std::move(t);
  return Status::OK();
}

Table::~Table() { fs_->Close(fd_); }

Status Table::ReadBlock(size_t i, bool fill_cache, BlockPtr* out) const {
  const IndexEntry& e = index_[i];
  if (fill_cache && cache_) {
    if (BlockPtr b = cache_->Lookup(number_, e.offset)) {
      *out = std::move(b);
      return Status::OK();
    }
  }
  std::string raw;
  TIERKV_RETURN_IF_ERROR(fs_->Read(fd_, e.offset, e.size, &raw));
  if (raw.size() != e.size || e.size < 4) {
    return Status::Corruption("table " + std::to_string(number_) + ": short block");
  }
  uint32_t crc = DecodeFixed32(raw.data() + raw.size() - 4);
  raw.resize(raw.size() - 4);
  if (Crc32(raw) != crc) {
    return Status::Corruption("table " + std::to_string(number_) + ": block checksum mismatch");
  }
  auto block = std::make_shared<const std::string>(std::move(raw));
  if (fill_cache && cache_) cache_->Insert(number_, e.offset, block);
  *out = std::move(block);
  return Status::OK();
}

Status Table::Get(std::string_view key, bool* found, std::string* value, bool* deleted) {
  *found = false;
  auto it = std::lower_bound(index_.begin(), index_.end(), key,
                             [](const IndexEntry& e, std::string_view k) { return e.last_key < k; });
  if (it == index_.end()) return Status::OK();
  BlockPtr block;
  TIERKV_RETURN_IF_ERROR(ReadBlock(static_cast<size_t>(it - index_.begin()), true, &block));
  std::string_view in(*block);
  BlockEntry e;
  while (!in.empty()) {
    if (!DecodeBlockEntry(&in, &e)) return Status::Corruption("bad block entry");
    if (e.key == key) {
      *found = true;
      *deleted = e.type == ValueType::kDeletion;
      if (!*deleted) value->assign(e.value);
      return Status::OK();
    }
    if (e.key > key) break;
  }
  return Status::OK();
}

class TableIterator : public InternalIterator {
 public:
  TableIterator(TablePtr table, bool fill_cache)
      : table_(std::move(table)), fill_cache_(fill_cache) {}

  void SeekToFirst() override { LoadBlock(0); }

  void Seek(std::string_view target) override {
    const auto& idx = table_->index_;
    auto it = std::lower_bound(idx.begin(), idx.end(), target,
                               [](const Table::IndexEntry& e, std::string_view k) {
                                 return e.last_key < k;
                               });
    LoadBlock(static_cast<size_t>(it - idx.begin()));
    while (Valid() && key() < target) Next();
  }

  bool Valid() const override { return pos_ < entries_.size(); }
  void Next() override {
    if (++pos_ >= entries_.size()) LoadBlock(block_ + 1);
  }
  std::string_view key() const override { return entries_[pos_].key; }
  std::string_view value() const override { return entries_[pos_].value; }
  SequenceNumber seq() const override { return entries_[pos_].seq; }
  ValueType type() const override { return entries_[pos_].type; }
  Status status() const override { return status_; }

 private:
  void LoadBlock(size_t b) {
    entries_.clear();
    pos_ = 0;
    data_.reset();
    block_ = b;
    while (status_.ok() && block_ < table_->index_.size() && entries_.empty()) {
      status_ = table_->ReadBlock(block_, fill_cache_, &data_);
      if (!status_.ok()) break;
      std::string_view in(*data_);
      BlockEntry e;
      while (!in.empty()) {
        if (!DecodeBlockEntry(&in, &e)) {
          status_ = Status::Corruption("bad block entry");
          entries_.clear();
          return;
        }
        entries_.push_back(e);
      }
      if (entries_.empty()) ++block_;
    }
  }

  TablePtr table_;
  bool fill_cache_;
  size_t block_ = 0;
  BlockPtr data_;
  std::vector<BlockEntry> entries_;
  size_t pos_ = 0;
  Status status_;
};

std::unique_ptr<InternalIterator> Table::NewIterator(bool fill_cache) {
  return std::make_unique<TableIterator>(shared_from_this(), fill_cache);
}

}  // namespace tierkv::lsm
