#include "tierkv/lsm/wal.hpp"

namespace tierkv::lsm {

void WriteBatch::Put(std::string_view key, std::string_view value) {
  body_.push_back(static_cast<char>(ValueType::kValue));
  PutLengthPrefixed(&body_, key);
  PutLengthPrefixed(&body_, value);
  ++count_;
}

void WriteBatch::Delete(std::string_view key) {
  body_.push_back(static_cast<char>(ValueType::kDeletion));
  PutLengthPrefixed(&body_, key);
  ++count_;
}

void WriteBatch::Append(const WriteBatch& other) {
  body_ += other.body_;
  count_ += other.count_;
}

void WriteBatch::Clear() {
  body_.clear();
  count_ = 0;
}

std::string WriteBatch::Encode(SequenceNumber first) const {
  std::string out;
  PutFixed64(&out, first);
  PutVarint64(&out, count_);
  out += body_;
  return out;
}

namespace {

Status IterateBody(std::string_view in, SequenceNumber seq, uint64_t count,
                   const WriteBatch::Handler& fn) {
  for (uint64_t i = 0; i < count; ++i) {
    if (in.empty()) return Status::Corruption("batch shorter than its count");
    auto type = static_cast<ValueType>(in.front());
    in.remove_prefix(1);
    std::string_view key, value;
    if (!GetLengthPrefixed(&in, &key)) return Status::Corruption("bad batch key");
    if (type == ValueType::kValue) {
      if (!GetLengthPrefixed(&in, &value)) return Status::Corruption("bad batch value");
    } else if (type != ValueType::kDeletion) {
      return Status::Corruption("bad batch op");
    }
    fn(seq + i, type, key, value);
  }
  if (!in.empty()) return Status::Corruption("trailing bytes in batch");
  return Status::OK();
}

}  // namespace

Status WriteBatch::Iterate(std::string_view encoded, const Handler& fn) {
  uint64_t first = 0, count = 0;
  if (!GetFixed64(&encoded, &first) || !GetVarint64(&encoded, &count)) {
    return Status::Corruption("bad batch header");
  }
  return IterateBody(encoded, first, count, fn);
}

Status WriteBatch::ForEach(SequenceNumber first, const Handler& fn) const {
  return IterateBody(body_, first, count_, fn);
}

WalWriter::~WalWriter() { Close(); }

Status WalWriter::AddRecord(std::string_view payload) {
  std::string rec;
  rec.reserve(payload.size() + 8);
  PutFixed32(&rec, Crc32(payload));
  PutFixed32(&rec, static_cast<uint32_t>(payload.size()));
  rec.append(payload);
  TIERKV_RETURN_IF_ERROR(fs_->Append(fd_, rec));
  bytes_ += rec.size();
  return Status::OK();
}

Status WalWriter::Sync() { return fs_->Fsync(fd_); }

Status WalWriter::Close() {
  if (closed_) return Status::OK();
  closed_ = true;
  return fs_->Close(fd_);
}

Status ReadWal(TierFs* fs, const std::string& name, WalReadResult* out) {
  *out = WalReadResult{};
  uint64_t size = 0;
  TIERKV_RETURN_IF_ERROR(fs->FileSize(name, &size));
  uint64_t fd = 0;
  TIERKV_RETURN_IF_ERROR(fs->OpenFile(name, OpenFlags::ReadOnly(), IoContext::Unknown(), &fd));
  std::string data;
  Status s;
  constexpr uint64_t kChunk = 1 << 20;
  for (uint64_t off = 0; off < size && s.ok(); off += kChunk) {
    std::string part;
    s = fs->Read(fd, off, std::min(kChunk, size - off), &part);
    data += part;
  }
  fs->Close(fd);
  TIERKV_RETURN_IF_ERROR(s);

  std::string_view in(data);
  while (!in.empty()) {
    uint32_t crc = 0, len = 0;
    std::string_view probe = in;
    if (!GetFixed32(&probe, &crc) || !GetFixed32(&probe, &len) || probe.size() < len) {
      out->torn_tail = true;
      break;
    }
    std::string_view payload = probe.substr(0, len);
    if (Crc32(payload) != crc) {
      out->torn_tail = true;
      break;
    }
    out->records.emplace_back(payload);
    in = probe.substr(len);
  }
  return Status::OK();
}

}  // namespace tierkv::lsm
