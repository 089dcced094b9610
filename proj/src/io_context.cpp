#include "tierkv/io_context.hpp"

namespace tierkv {

namespace {
thread_local IoContext tls_context;
}  // namespace

Status IoContext::Validate() const {
  switch (kind) {
    case Kind::kCompaction:
      if (!from_level || !to_level) {
        return Status::InvalidArgument("compaction context needs from and to levels");
      }
      if (*from_level < 0 || *to_level <= *from_level) {
        return Status::InvalidArgument("compaction must move data to a deeper level");
      }
      return Status::OK();
    case Kind::kFlush:
      if (from_level || to_level != 0) {
        return Status::InvalidArgument("flush context targets level 0 only");
      }
      return Status::OK();
    default:
      if (from_level || to_level) {
        return Status::InvalidArgument(ToString() + " carries no levels");
      }
      return Status::OK();
  }
}

std::string IoContext::ToString() const {
  switch (kind) {
    case Kind::kWalWrite: return "WAL_WRITE";
    case Kind::kFlush: return "FLUSH";
    case Kind::kCompaction:
      return "COMPACTION(" + std::to_string(from_level.value_or(-1)) + "->" +
             std::to_string(to_level.value_or(-1)) + ")";
    case Kind::kCacheCopy: return "CACHE_COPY";
    case Kind::kMigration: return "MIGRATION";
    case Kind::kForeground: return "FOREGROUND";
    case Kind::kUnknown: return "UNKNOWN";
  }
  return "UNKNOWN";
}

std::ostream& operator<<(std::ostream& os, const IoContext& ctx) {
  return os << ctx.ToString();
}

void SetContext(const IoContext& ctx) { tls_context = ctx; }
IoContext GetContext() { return tls_context; }

}  // namespace tierkv
