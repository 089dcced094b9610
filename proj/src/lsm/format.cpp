#include "tierkv/lsm/format.hpp"

#include <zlib.h>

#include <cstdio>

namespace tierkv::lsm {

bool GetVarint64(std::string_view* in, uint64_t* v) {
  uint64_t result = 0;
  for (int shift = 0; shift <= 63 && !in->empty(); shift += 7) {
    auto byte = static_cast<uint8_t>(in->front());
    in->remove_prefix(1);
    result |= uint64_t(byte & 0x7f) << shift;
    if ((byte & 0x80) == 0) {
      *v = result;
      return true;
    }
  }
  return false;
}

bool GetFixed32(std::string_view* in, uint32_t* v) {
  if (in->size() < 4) return false;
  *v = DecodeFixed32(in->data());
  in->remove_prefix(4);
  return true;
}

bool GetFixed64(std::string_view* in, uint64_t* v) {
  if (in->size() < 8) return false;
  *v = DecodeFixed64(in->data());
  in->remove_prefix(8);
  return true;
}

bool GetLengthPrefixed(std::string_view* in, std::string_view* out) {
  uint64_t len = 0;
  if (!GetVarint64(in, &len) || in->size() < len) return false;
  *out = in->substr(0, len);
  in->remove_prefix(len);
  return true;
}

uint32_t Crc32(std::string_view data) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

namespace {

std::string Numbered(uint64_t number, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06llu%s", static_cast<unsigned long long>(number), suffix);
  return buf;
}

bool ParseNumber(std::string_view s, uint64_t* out) {
  if (s.empty() || s.size() > 19) return false;
  uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + uint64_t(c - '0');
  }
  *out = v;
  return true;
}

}  // namespace

std::string TableFileName(uint64_t number) { return Numbered(number, ".sst"); }
std::string LogFileName(uint64_t number) { return Numbered(number, ".log"); }
std::string ManifestFileName(uint64_t number) { return "MANIFEST-" + Numbered(number, ""); }

StoreFile ParseStoreFileName(std::string_view name, uint64_t* number) {
  if (name == kCurrentFile) return StoreFile::kCurrent;
  if (name.size() > 4 && name.substr(name.size() - 4) == ".tmp") return StoreFile::kTemp;
  if (name.rfind("MANIFEST-", 0) == 0) {
    return ParseNumber(name.substr(9), number) ? StoreFile::kManifest : StoreFile::kOther;
  }
  if (name.size() > 4) {
    std::string_view stem = name.substr(0, name.size() - 4);
    std::string_view ext = name.substr(name.size() - 4);
    if (ext == ".sst" && ParseNumber(stem, number)) return StoreFile::kTable;
    if (ext == ".log" && ParseNumber(stem, number)) return StoreFile::kLog;
  }
  return StoreFile::kOther;
}

}  // namespace tierkv::lsm
