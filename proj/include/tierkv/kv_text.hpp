#pragma once

// Flat `key=value` text documents, used for device profiles, placement
// schemes and run configuration. Blank lines and `#` comments are ignored.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "tierkv/status.hpp"

namespace tierkv {

class KvText {
 public:
  static Status Parse(std::string_view text, KvText* out);
  static Status Load(const std::filesystem::path& file, KvText* out);

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  std::optional<std::string> Get(const std::string& key) const;
  Status GetString(const std::string& key, std::string* out) const;
  Status GetInt(const std::string& key, int64_t* out) const;
  Status GetUint(const std::string& key, uint64_t* out) const;
  Status GetDouble(const std::string& key, double* out) const;
  Status GetBool(const std::string& key, bool* out) const;

  // Leave `*out` untouched when the key is absent.
  Status MaybeInt(const std::string& key, int64_t* out) const;
  Status MaybeUint(const std::string& key, uint64_t* out) const;
  Status MaybeDouble(const std::string& key, double* out) const;
  Status MaybeBool(const std::string& key, bool* out) const;
  Status MaybeString(const std::string& key, std::string* out) const;
  // Byte counts with an optional K/M/G/T suffix.
  Status MaybeBytes(const std::string& key, uint64_t* out) const;

  void Set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Accepts plain integers and K/M/G/T suffixes (powers of 1024), with an
// optional trailing B or iB.
Status ParseByteSize(std::string_view text, uint64_t* out);

Status ReadWholeFile(const std::filesystem::path& file, std::string* out);
Status WriteWholeFile(const std::filesystem::path& file, std::string_view data);

}  // namespace tierkv
