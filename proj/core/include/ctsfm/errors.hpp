#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctsfm {

/// Machine-readable failure categories. The CLI prints these verbatim.
enum class ErrorCode {
  kInvalidArgument,
  kBranchAmbiguity,
  kDegenerateInterval,
  kOutOfRange,
  kBehindCamera,
  kLowParallax,
  kCheirality,
  kRankDeficient,
  kDivergence,
  kMonotonicity,
  kEmptyStream,
  kNoOverlap,
  kUnderdetermined,
  kSchema,
  kUnsupportedInput,
  kBootstrapFailure,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace ctsfm
