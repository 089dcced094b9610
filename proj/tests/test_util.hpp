#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tierkv/device.hpp"
#include "tierkv/tier_fs.hpp"

namespace tierkv::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "tierkv-XXXXXX").string();
    char* p = ::mkdtemp(tmpl.data());
    path_ = p ? std::filesystem::path(p) : std::filesystem::path(tmpl);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

struct TierSpec {
  DevicePreset preset = DevicePreset::kZeroDelay;
  uint64_t capacity = 64ull << 20;
};

inline std::vector<DeviceProfile> MakeProfiles(const TempDir& dir,
                                               const std::vector<TierSpec>& specs) {
  std::vector<DeviceProfile> out;
  for (size_t i = 0; i < specs.size(); ++i) {
    out.push_back(MakePresetProfile(specs[i].preset, static_cast<int>(i), specs[i].capacity,
                                    dir / ("tier" + std::to_string(i))));
  }
  return out;
}

inline TierFsOptions ZeroDelayOptions(const TempDir& dir, const std::vector<uint64_t>& caps) {
  std::vector<TierSpec> specs;
  for (uint64_t c : caps) specs.push_back({DevicePreset::kZeroDelay, c});
  TierFsOptions o;
  o.tiers = MakeProfiles(dir, specs);
  o.delay.enabled = false;
  o.scheme.wal_tier = 0;
  o.scheme.level_tier = {0, 0};
  for (size_t i = 2; i < 7; ++i) {
    o.scheme.level_tier.push_back(std::min<int>(static_cast<int>(i) - 1,
                                                static_cast<int>(caps.size()) - 1));
  }
  return o;
}

inline std::string Pattern(size_t n, uint32_t seed) {
  std::string s(n, '\0');
  uint32_t x = seed * 2654435761u + 1;
  for (size_t i = 0; i < n; ++i) {
    x = x * 1103515245u + 12345u;
    s[i] = static_cast<char>(x >> 24);
  }
  return s;
}

}  // namespace tierkv::testing
