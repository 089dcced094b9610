#include "tierkv/lsm/version.hpp"

#include <algorithm>
#include <set>

namespace tierkv::lsm {

uint64_t Version::LevelBytes(int level) const {
  uint64_t total = 0;
  for (const auto& f : files[level]) total += f->size;
  return total;
}

std::vector<FileMetaPtr> Version::Overlapping(int level, std::string_view lo,
                                              std::string_view hi) const {
  std::vector<FileMetaPtr> out;
  for (const auto& f : files[level]) {
    if (f->Overlaps(lo, hi)) out.push_back(f);
  }
  return out;
}

FileMetaPtr Version::FileFor(int level, std::string_view key) const {
  const auto& fs = files[level];
  auto it = std::lower_bound(fs.begin(), fs.end(), key, [](const FileMetaPtr& f, std::string_view k) {
    return f->largest < k;
  });
  if (it == fs.end() || (*it)->smallest > key) return nullptr;
  return *it;
}

Status Version::CheckInvariants() const {
  for (int l = 1; l < levels(); ++l) {
    const auto& fs = files[l];
    for (size_t i = 0; i < fs.size(); ++i) {
      if (fs[i]->smallest > fs[i]->largest) {
        return Status::Corruption("L" + std::to_string(l) + " file with inverted range");
      }
      if (i > 0 && fs[i - 1]->largest >= fs[i]->smallest) {
        return Status::Corruption("L" + std::to_string(l) + " files " +
                                  std::to_string(fs[i - 1]->number) + " and " +
                                  std::to_string(fs[i]->number) + " overlap");
      }
    }
  }
  return Status::OK();
}

namespace {

enum Tag : uint64_t {
  kLogNumber = 1,
  kNextFile = 2,
  kLastSequence = 3,
  kDeletedFile = 4,
  kNewFile = 5,
};

}  // namespace

std::string VersionEdit::Encode() const {
  std::string out;
  if (log_number) {
    PutVarint64(&out, kLogNumber);
    PutVarint64(&out, *log_number);
  }
  if (next_file) {
    PutVarint64(&out, kNextFile);
    PutVarint64(&out, *next_file);
  }
  if (last_sequence) {
    PutVarint64(&out, kLastSequence);
    PutVarint64(&out, *last_sequence);
  }
  for (const auto& [level, number] : deleted) {
    PutVarint64(&out, kDeletedFile);
    PutVarint64(&out, level);
    PutVarint64(&out, number);
  }
  for (const auto& f : added) {
    PutVarint64(&out, kNewFile);
    PutVarint64(&out, f.level);
    PutVarint64(&out, f.meta->number);
    PutVarint64(&out, f.meta->size);
    PutVarint64(&out, f.meta->entries);
    PutLengthPrefixed(&out, f.meta->smallest);
    PutLengthPrefixed(&out, f.meta->largest);
  }
  return out;
}

Status VersionEdit::Decode(std::string_view in, VersionEdit* out) {
  VersionEdit e;
  auto bad = [] { return Status::Corruption("bad version edit"); };
  while (!in.empty()) {
    uint64_t tag = 0, a = 0, b = 0;
    if (!GetVarint64(&in, &tag)) return bad();
    switch (tag) {
      case kLogNumber:
        if (!GetVarint64(&in, &a)) return bad();
        e.log_number = a;
        break;
      case kNextFile:
        if (!GetVarint64(&in, &a)) return bad();
        e.next_file = a;
        break;
      case kLastSequence:
        if (!GetVarint64(&in, &a)) return bad();
        e.last_sequence = a;
        break;
      case kDeletedFile:
        if (!GetVarint64(&in, &a) || !GetVarint64(&in, &b)) return bad();
        e.deleted.emplace_back(static_cast<int>(a), b);
        break;
      case kNewFile: {
        auto m = std::make_shared<FileMeta>();
        std::string_view lo, hi;
        if (!GetVarint64(&in, &a) || !GetVarint64(&in, &m->number) ||
            !GetVarint64(&in, &m->size) || !GetVarint64(&in, &m->entries) ||
            !GetLengthPrefixed(&in, &lo) || !GetLengthPrefixed(&in, &hi)) {
          return bad();
        }
        m->smallest.assign(lo);
        m->largest.assign(hi);
        e.added.push_back({static_cast<int>(a), std::move(m)});
        break;
      }
      default:
        return bad();
    }
  }
  *out = std::move(e);
  return Status::OK();
}

Status ApplyEdit(const Version& base, const VersionEdit& edit, Version* out) {
  Version v(base.levels());
  std::set<std::pair<int, uint64_t>> gone(edit.deleted.begin(), edit.deleted.end());
  for (int l = 0; l < base.levels(); ++l) {
    for (const auto& f : base.files[l]) {
      if (!gone.count({l, f->number})) v.files[l].push_back(f);
    }
  }
  for (const auto& nf : edit.added) {
    if (nf.level < 0 || nf.level >= v.levels()) {
      return Status::Corruption("edit adds a file to level " + std::to_string(nf.level));
    }
    v.files[nf.level].push_back(nf.meta);
  }
  std::sort(v.files[0].begin(), v.files[0].end(),
            [](const FileMetaPtr& a, const FileMetaPtr& b) { return a->number > b->number; });
  for (int l = 1; l < v.levels(); ++l) {
    std::sort(v.files[l].begin(), v.files[l].end(),
              [](const FileMetaPtr& a, const FileMetaPtr& b) { return a->smallest < b->smallest; });
  }
  *out = std::move(v);
  return Status::OK();
}

}  // namespace tierkv::lsm
