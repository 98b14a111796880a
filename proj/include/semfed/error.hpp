#pragma once

#include <stdexcept>
#include <string>

namespace semfed {

enum class ErrorCode {
  kDimension,
  kEvaluation,
  kState,
  kParse,
  kReference,
  kSplit,
  kFormat,
  kInput,
  kDegenerateInput,
  kNoNeighbor,
  kProtocol,
  kConfig,
  kSampling,
  kPrompt,
  kTraining,
  kIo,
};

const char* error_code_name(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

  // Training divergence and evaluation failures are runtime errors; the rest
  // are validation errors of inputs, files or configuration.
  bool is_runtime() const noexcept {
    return code_ == ErrorCode::kTraining || code_ == ErrorCode::kEvaluation;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace semfed
