#pragma once

#include <optional>
#include <ostream>
#include <string>

#include "tierkv/status.hpp"

namespace tierkv {

// Names the KVS-internal operation an I/O request originates from.
struct IoContext {
  enum class Kind { kWalWrite, kFlush, kCompaction, kCacheCopy, kMigration, kForeground, kUnknown };

  Kind kind = Kind::kUnknown;
  std::optional<int> from_level;
  std::optional<int> to_level;

  static IoContext WalWrite() { return {Kind::kWalWrite, std::nullopt, std::nullopt}; }
  static IoContext Flush() { return {Kind::kFlush, std::nullopt, 0}; }
  static IoContext Compaction(int from, int to) { return {Kind::kCompaction, from, to}; }
  static IoContext CacheCopy() { return {Kind::kCacheCopy, std::nullopt, std::nullopt}; }
  static IoContext Migration() { return {Kind::kMigration, std::nullopt, std::nullopt}; }
  static IoContext Foreground() { return {Kind::kForeground, std::nullopt, std::nullopt}; }
  static IoContext Unknown() { return {}; }

  // COMPACTION carries both levels, FLUSH targets level 0, others carry none.
  Status Validate() const;
  // CACHE_COPY and MIGRATION belong to the middleware's own workers.
  bool IsInternal() const { return kind == Kind::kCacheCopy || kind == Kind::kMigration; }
  std::string ToString() const;

  friend bool operator==(const IoContext&, const IoContext&) = default;
};

std::ostream& operator<<(std::ostream& os, const IoContext& ctx);

// Ambient per-thread context. Defaults to UNKNOWN; never inherited across
// task handoffs.
void SetContext(const IoContext& ctx);
IoContext GetContext();

// Sets a context for the enclosing scope and restores the previous one.
class ContextScope {
 public:
  explicit ContextScope(const IoContext& ctx) : saved_(GetContext()) { SetContext(ctx); }
  ~ContextScope() { SetContext(saved_); }
  ContextScope(const ContextScope&) = delete;
  ContextScope& operator=(const ContextScope&) = delete;

 private:
  IoContext saved_;
};

}  // namespace tierkv
