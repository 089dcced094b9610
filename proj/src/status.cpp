#include "tierkv/status.hpp"

namespace tierkv {

std::string Status::ToString() const {
  const char* name = "OK";
  switch (code_) {
    case Code::kOk: return "OK";
    case Code::kNotFound: name = "NotFound"; break;
    case Code::kTierFull: name = "TierFull"; break;
    case Code::kIOError: name = "IOError"; break;
    case Code::kConflict: name = "Conflict"; break;
    case Code::kInvalidArgument: name = "InvalidArgument"; break;
    case Code::kAllocationFailure: name = "AllocationFailure"; break;
    case Code::kImmutable: name = "Immutable"; break;
    case Code::kAborted: name = "Aborted"; break;
    case Code::kCorruption: name = "Corruption"; break;
    case Code::kBusy: name = "Busy"; break;
    case Code::kConfiguration: name = "Configuration"; break;
  }
  return msg_.empty() ? std::string(name) : std::string(name) + ": " + msg_;
}

}  // namespace tierkv
