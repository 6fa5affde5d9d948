#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace satlab {

enum class ErrorKind {
  LabelConflict,
  DimMismatch,
  InvalidK,
  InvalidArgument,
  UnknownLoss,
  LengthMismatch,
  NonFinite,
  EmptyRestriction,
  SupportTooLarge,
  AllZeroCovs,
  DegenerateVariance,
  Config,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` discriminates.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  Error(ErrorKind kind, const std::string& what, std::size_t step)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what + " (step " +
                           std::to_string(step) + ")"),
        kind_(kind),
        step_(step) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Training step at which a NonFinite failure occurred.
  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> step_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::LabelConflict: return "LabelConflict";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::InvalidK: return "InvalidK";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnknownLoss: return "UnknownLoss";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyRestriction: return "EmptyRestriction";
    case ErrorKind::SupportTooLarge: return "SupportTooLarge";
    case ErrorKind::AllZeroCovs: return "AllZeroCovs";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace satlab
