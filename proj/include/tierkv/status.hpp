#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <utility>

namespace tierkv {

// Result of an operation. Cheap to copy when ok().
class Status {
 public:
  enum class Code {
    kOk = 0,
    kNotFound,
    kTierFull,
    kIOError,
    kConflict,
    kInvalidArgument,
    kAllocationFailure,
    kImmutable,
    kAborted,
    kCorruption,
    kBusy,
    kConfiguration,
  };

  Status() = default;

  static Status OK() { return Status(); }
  static Status NotFound(std::string_view msg) { return {Code::kNotFound, msg}; }
  static Status TierFull(std::string_view msg) { return {Code::kTierFull, msg}; }
  static Status IOError(std::string_view msg) { return {Code::kIOError, msg}; }
  static Status Conflict(std::string_view msg) { return {Code::kConflict, msg}; }
  static Status InvalidArgument(std::string_view msg) {
    return {Code::kInvalidArgument, msg};
  }
  static Status AllocationFailure(std::string_view msg) {
    return {Code::kAllocationFailure, msg};
  }
  static Status Immutable(std::string_view msg) { return {Code::kImmutable, msg}; }
  static Status Aborted(std::string_view msg) { return {Code::kAborted, msg}; }
  static Status Corruption(std::string_view msg) { return {Code::kCorruption, msg}; }
  static Status Busy(std::string_view msg) { return {Code::kBusy, msg}; }
  static Status Configuration(std::string_view msg) {
    return {Code::kConfiguration, msg};
  }

  bool ok() const { return code_ == Code::kOk; }
  bool IsNotFound() const { return code_ == Code::kNotFound; }
  bool IsTierFull() const { return code_ == Code::kTierFull; }
  bool IsIOError() const { return code_ == Code::kIOError; }
  bool IsConflict() const { return code_ == Code::kConflict; }
  bool IsInvalidArgument() const { return code_ == Code::kInvalidArgument; }
  bool IsAllocationFailure() const { return code_ == Code::kAllocationFailure; }
  bool IsImmutable() const { return code_ == Code::kImmutable; }
  bool IsAborted() const { return code_ == Code::kAborted; }
  bool IsCorruption() const { return code_ == Code::kCorruption; }
  bool IsBusy() const { return code_ == Code::kBusy; }
  bool IsConfiguration() const { return code_ == Code::kConfiguration; }

  Code code() const { return code_; }
  const std::string& message() const { return msg_; }

  std::string ToString() const;

  // Prefixes the message with extra context, keeping the code.
  Status WithContext(std::string_view ctx) const {
    if (ok()) return *this;
    return Status(code_, std::string(ctx) + ": " + msg_);
  }

 private:
  Status(Code code, std::string_view msg) : code_(code), msg_(msg) {}

  Code code_ = Code::kOk;
  std::string msg_;
};

inline std::ostream& operator<<(std::ostream& os, const Status& s) {
  return os << s.ToString();
}

}  // namespace tierkv

#define TIERKV_RETURN_IF_ERROR(expr)        \
  do {                                      \
    ::tierkv::Status _st = (expr);          \
    if (!_st.ok()) return _st;              \
  } while (0)
