#include "dualsmooth/error.hpp"

namespace dualsmooth {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::RowSumNonzero: return "RowSumNonzero";
    case ErrorKind::NegativeRate: return "NegativeRate";
    case ErrorKind::BadPrior: return "BadPrior";
    case ErrorKind::BadShape: return "BadShape";
    case ErrorKind::NonPositiveControl: return "NonPositiveControl";
    case ErrorKind::NumericalBlowup: return "NumericalBlowup";
    case ErrorKind::DegeneratePrior: return "DegeneratePrior";
    case ErrorKind::CflViolation: return "CFLViolation";
    case ErrorKind::RiccatiBlowup: return "RiccatiBlowup";
    case ErrorKind::LostPositivity: return "LostPositivity";
    case ErrorKind::CovarianceNotPD: return "CovarianceNotPD";
    case ErrorKind::MalformedInput: return "MalformedInput";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message, long index)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      index_(index) {}

}  // namespace dualsmooth
