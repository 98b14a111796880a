#include "semfed/error.hpp"

namespace semfed {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension error";
    case ErrorCode::kEvaluation: return "evaluation error";
    case ErrorCode::kState: return "state error";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kReference: return "reference error";
    case ErrorCode::kSplit: return "split error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kInput: return "input error";
    case ErrorCode::kDegenerateInput: return "degenerate-input error";
    case ErrorCode::kNoNeighbor: return "no-neighbor error";
    case ErrorCode::kProtocol: return "protocol error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kSampling: return "sampling error";
    case ErrorCode::kPrompt: return "prompt error";
    case ErrorCode::kTraining: return "training error";
    case ErrorCode::kIo: return "io error";
  }
  return "error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace semfed
