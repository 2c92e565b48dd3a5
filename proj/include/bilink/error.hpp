#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bilink {

enum class ErrorKind {
  kParse,
  kReferentialIntegrity,
  kInfeasibleSplit,
  kConfiguration,
  kPrecondition,
  kNumericInput,
  kInputLayout,
  kBatchSize,
  kData,
  kEvaluation,
  kNonFiniteLoss,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kReferentialIntegrity: return "referential-integrity error";
    case ErrorKind::kInfeasibleSplit: return "infeasible-split error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kPrecondition: return "precondition error";
    case ErrorKind::kNumericInput: return "numeric-input error";
    case ErrorKind::kInputLayout: return "input-layout error";
    case ErrorKind::kBatchSize: return "batch-size error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kEvaluation: return "evaluation error";
    case ErrorKind::kNonFiniteLoss: return "non-finite loss";
  }
  return "error";
}

}  // namespace bilink
