#pragma once

#include <stdexcept>
#include <string>

namespace dualsmooth {

enum class ErrorKind {
  RowSumNonzero,
  NegativeRate,
  BadPrior,
  BadShape,
  NonPositiveControl,
  NumericalBlowup,
  DegeneratePrior,
  CflViolation,
  RiccatiBlowup,
  LostPositivity,
  CovarianceNotPD,
  MalformedInput,
  InvalidArgument,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library. `index()` names the offending row,
// state, cell or time step when there is one, and is -1 otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, long index = -1);

  ErrorKind kind() const noexcept { return kind_; }
  long index() const noexcept { return index_; }

 private:
  ErrorKind kind_;
  long index_;
};

}  // namespace dualsmooth
