#pragma once

#include <stdexcept>
#include <string>

namespace nlab {

// Error hierarchy shared across the library. Everything derives from
// nlab::Error so callers can catch the whole family at the CLI boundary.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mis-wired shapes, bad parameter ranges, unknown strategy names.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed files (IDX magic, truncation, config syntax).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf where finite values are required.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Too few samples for a statistical fit.
struct InsufficientDataError : Error {
  explicit InsufficientDataError(const std::string& msg) : Error(msg) {}
};

// A diagnostic (e.g. separation AUC) cannot be computed for this input.
struct DiagnosticError : Error {
  explicit DiagnosticError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace nlab
