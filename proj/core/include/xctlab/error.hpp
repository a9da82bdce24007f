#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xct {

/// Failure categories raised by the engine. Every public operation reports
/// failures by throwing xct::Error carrying one of these codes.
enum class ErrorCode {
  InvalidArgument,
  Io,
  // volume_io
  MissingKey,
  BadValue,
  UnknownDtype,
  LengthMismatch,
  IndexOutOfRange,
  // fiber_extraction
  BorderVoxel,
  DegenerateTrace,
  // fiber_table
  HeaderMismatch,
  RowArity,
  NumericParse,
  DuplicateId,
  InvalidRecord,
  UnknownColumn,
  // geometry
  DegenerateFiber,
  // charts
  EmptyInput,
  BadRange,
  TooFewValues,
  NonNumeric,
  // tracking
  DegenerateCorners,
  UnknownMarker,
  BadDictionary,
  // service
  BadParams,
  NoActiveDataset,
  BadTF,
  UnknownSession,
  UnknownView,
  UnknownDataset,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xct
