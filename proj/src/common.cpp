#include "flowtwin/common.hpp"

namespace flowtwin {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoPath: return "NoPath";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::Validation: return "Validation";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::string ValidationError::summarize(const std::vector<FieldError>& errors) {
  std::string s;
  for (const auto& e : errors) {
    if (!s.empty()) s += "; ";
    s += e.path + ": " + e.message;
  }
  return s;
}

}  // namespace flowtwin
