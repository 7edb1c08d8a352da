#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mitoclass {

enum class ErrorCode {
  // dataset
  MissingColumn,
  BadLabelCode,
  BadField,
  DuplicateId,
  UnreadableImage,
  InvalidConfig,
  // splits
  InvalidK,
  FoldOutOfRange,
  UnknownId,
  // pixelpipe
  ZeroDimension,
  NonPositiveFactor,
  ZeroStd,
  CropTooLarge,
  // losses
  BadSimplex,
  // netcore
  ShapeMismatch,
  StaleCache,
  BadMagic,
  VersionUnsupported,
  TensorShapeMismatch,
  TruncatedFile,
  // eval
  EmptyInput,
  SingleClass,
  TooFewFolds,
  // generic runtime
  Io,
  Numeric,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::BadLabelCode: return "BadLabelCode";
    case ErrorCode::BadField: return "BadField";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::FoldOutOfRange: return "FoldOutOfRange";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::NonPositiveFactor: return "NonPositiveFactor";
    case ErrorCode::ZeroStd: return "ZeroStd";
    case ErrorCode::CropTooLarge: return "CropTooLarge";
    case ErrorCode::BadSimplex: return "BadSimplex";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TensorShapeMismatch: return "TensorShapeMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::TooFewFolds: return "TooFewFolds";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Numeric: return "Numeric";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message names the offending row, field or tensor where there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Errors caused by bad user-supplied parameters rather than data or I/O.
  bool is_validation() const noexcept {
    return code_ == ErrorCode::InvalidConfig || code_ == ErrorCode::InvalidK ||
           code_ == ErrorCode::FoldOutOfRange;
  }

 private:
  ErrorCode code_;
};

}  // namespace mitoclass
