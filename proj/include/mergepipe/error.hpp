#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mergepipe {

enum class ErrorKind {
  BadConfig,
  IoFailure,
  MalformedHeader,
  MalformedRow,
  UnknownCategory,
  BadSentiment,
  DuplicateId,
  EmptySide,
  TooFewRows,
  NoComparableRow,
  MissingCell,
  DegenerateData,
  ShapeMismatch,
  EmptyLevel,
  EmptyRow,
  TooFewMinority,
  SingleClass,
  LengthMismatch,
  NonFiniteLoss,
  EmptyInput,
  NoPositives,
  MissingSentiment,
  EmptySpace,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::UnknownCategory: return "UnknownCategory";
    case ErrorKind::BadSentiment: return "BadSentiment";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptySide: return "EmptySide";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::NoComparableRow: return "NoComparableRow";
    case ErrorKind::MissingCell: return "MissingCell";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyLevel: return "EmptyLevel";
    case ErrorKind::EmptyRow: return "EmptyRow";
    case ErrorKind::TooFewMinority: return "TooFewMinority";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NoPositives: return "NoPositives";
    case ErrorKind::MissingSentiment: return "MissingSentiment";
    case ErrorKind::EmptySpace: return "EmptySpace";
  }
  return "Unknown";
}

/// Every failure raised by the library. `what()` is prefixed with the kind
/// name so diagnostics can be matched textually by callers such as the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& detail) {
  if (!condition) throw Error(kind, detail);
}

}  // namespace mergepipe
