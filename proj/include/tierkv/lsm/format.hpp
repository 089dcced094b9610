#pragma once

// Byte encodings shared by the WAL, SST and manifest formats.

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace tierkv::lsm {

enum class ValueType : uint8_t { kDeletion = 0, kValue = 1 };

using SequenceNumber = uint64_t;

inline void PutFixed32(std::string* dst, uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>(v >> (8 * i));
  dst->append(buf, 4);
}

inline void PutFixed64(std::string* dst, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>(v >> (8 * i));
  dst->append(buf, 8);
}

inline uint32_t DecodeFixed32(const char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(static_cast<uint8_t>(p[i])) << (8 * i);
  return v;
}

inline uint64_t DecodeFixed64(const char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(static_cast<uint8_t>(p[i])) << (8 * i);
  return v;
}

inline void PutVarint64(std::string* dst, uint64_t v) {
  while (v >= 0x80) {
    dst->push_back(static_cast<char>(v | 0x80));
    v >>= 7;
  }
  dst->push_back(static_cast<char>(v));
}

inline void PutLengthPrefixed(std::string* dst, std::string_view s) {
  PutVarint64(dst, s.size());
  dst->append(s);
}

// Consume-from-the-front readers. Return false on truncated input.
bool GetVarint64(std::string_view* in, uint64_t* v);
bool GetFixed32(std::string_view* in, uint32_t* v);
bool GetFixed64(std::string_view* in, uint64_t* v);
bool GetLengthPrefixed(std::string_view* in, std::string_view* out);

uint32_t Crc32(std::string_view data);

// "000012.sst", "000013.log", "MANIFEST-000004".
std::string TableFileName(uint64_t number);
std::string LogFileName(uint64_t number);
std::string ManifestFileName(uint64_t number);
inline constexpr const char* kCurrentFile = "CURRENT";

enum class StoreFile { kTable, kLog, kManifest, kCurrent, kTemp, kOther };
// Parses a store file name; `number` is set for tables, logs and manifests.
StoreFile ParseStoreFileName(std::string_view name, uint64_t* number);

}  // namespace tierkv::lsm
