#include "ctsfm/errors.hpp"

namespace ctsfm {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kBranchAmbiguity: return "BRANCH_AMBIGUITY";
    case ErrorCode::kDegenerateInterval: return "DEGENERATE_INTERVAL";
    case ErrorCode::kOutOfRange: return "OUT_OF_RANGE";
    case ErrorCode::kBehindCamera: return "BEHIND_CAMERA";
    case ErrorCode::kLowParallax: return "LOW_PARALLAX";
    case ErrorCode::kCheirality: return "CHEIRALITY";
    case ErrorCode::kRankDeficient: return "RANK_DEFICIENT";
    case ErrorCode::kDivergence: return "DIVERGENCE";
    case ErrorCode::kMonotonicity: return "MONOTONICITY";
    case ErrorCode::kEmptyStream: return "EMPTY_STREAM";
    case ErrorCode::kNoOverlap: return "NO_OVERLAP";
    case ErrorCode::kUnderdetermined: return "UNDERDETERMINED";
    case ErrorCode::kSchema: return "SCHEMA";
    case ErrorCode::kUnsupportedInput: return "UNSUPPORTED_INPUT";
    case ErrorCode::kBootstrapFailure: return "BOOTSTRAP_FAILURE";
    case ErrorCode::kIo: return "IO";
  }
  return "UNKNOWN";
}

}  // namespace ctsfm
