#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace farmbot {

enum class ErrorCode {
  EmptyTrainingSet,
  InvalidPattern,
  MalformedLine,
  InconsistentDimension,
  EmptyFile,
  RowCountMismatch,
  ShapeMismatch,
  UnknownIntent,
  MaskingDisabled,
  EmptySequence,
  EntityAlignmentError,
  EmptyMessage,
  EmptyStories,
  UnknownDomainReference,
  UndeclaredAction,
  CorruptEvent,
  EngineNotReady,
  MissingFile,
  BadHeader,
  DuplicateKey,
  FieldTooLong,
  TooFewExamples,
  EmptyTestSet,
  IoError,
  InvalidConfig,
  InvalidData,
  VersionMismatch,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::InvalidPattern: return "InvalidPattern";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::InconsistentDimension: return "InconsistentDimension";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownIntent: return "UnknownIntent";
    case ErrorCode::MaskingDisabled: return "MaskingDisabled";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::EntityAlignmentError: return "EntityAlignmentError";
    case ErrorCode::EmptyMessage: return "EmptyMessage";
    case ErrorCode::EmptyStories: return "EmptyStories";
    case ErrorCode::UnknownDomainReference: return "UnknownDomainReference";
    case ErrorCode::UndeclaredAction: return "UndeclaredAction";
    case ErrorCode::CorruptEvent: return "CorruptEvent";
    case ErrorCode::EngineNotReady: return "EngineNotReady";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::FieldTooLong: return "FieldTooLong";
    case ErrorCode::TooFewExamples: return "TooFewExamples";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidData: return "InvalidData";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
  }
  return "Unknown";
}

/// Every fault raised by the library. `detail` carries the line number,
/// row, or index named by the error where one applies (otherwise -1).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, long detail = -1)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  long detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  long detail_;
};

}  // namespace farmbot
