#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tierkv/lsm/format.hpp"
#include "tierkv/status.hpp"

namespace tierkv::lsm {

struct FileMeta {
  uint64_t number = 0;
  uint64_t size = 0;
  uint64_t entries = 0;
  std::string smallest;
  std::string largest;

  // Set once a version edit drops the file. The destructor then runs
  // `on_obsolete`, so the file goes away when the last version using it does.
  bool obsolete = false;
  std::function<void(uint64_t)> on_obsolete;

  ~FileMeta() {
    if (obsolete && on_obsolete) on_obsolete(number);
  }

  bool Overlaps(std::string_view lo, std::string_view hi) const {
    return !(largest < lo || smallest > hi);
  }
};

using FileMetaPtr = std::shared_ptr<FileMeta>;

// Immutable snapshot of the live files per level. Level 0 is ordered newest
// first; deeper levels by smallest key.
struct Version {
  std::vector<std::vector<FileMetaPtr>> files;

  explicit Version(int levels = 7) : files(levels) {}
  int levels() const { return static_cast<int>(files.size()); }
  uint64_t LevelBytes(int level) const;
  int NumFiles(int level) const { return static_cast<int>(files[level].size()); }
  std::vector<FileMetaPtr> Overlapping(int level, std::string_view lo, std::string_view hi) const;
  // File of a level >= 1 whose range may hold `key`, or null.
  FileMetaPtr FileFor(int level, std::string_view key) const;
  // Sorted order and disjointness of levels >= 1.
  Status CheckInvariants() const;
};

struct VersionEdit {
  struct NewFile {
    int level = 0;
    FileMetaPtr meta;
  };

  std::optional<uint64_t> log_number;
  std::optional<uint64_t> next_file;
  std::optional<SequenceNumber> last_sequence;
  std::vector<std::pair<int, uint64_t>> deleted;  // (level, number)
  std::vector<NewFile> added;

  std::string Encode() const;
  static Status Decode(std::string_view in, VersionEdit* out);
};

// Applies an edit to `base`, producing a new version. Files are shared, not
// copied.
Status ApplyEdit(const Version& base, const VersionEdit& edit, Version* out);

}  // namespace tierkv::lsm
