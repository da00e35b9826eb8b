#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace specknet {

// Shortest decimal form that parses back to the identical double; keeps
// key=value files byte-stable across write/read/write cycles.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller misuse: bad arguments, bad flags, incompatible options.
struct UsageError : Error {
  using Error::Error;
};

// Shape or rank mismatch in a tensor operation.
struct DimensionError : UsageError {
  using UsageError::UsageError;
};

// Invalid model or training configuration.
struct ConfigError : UsageError {
  using UsageError::UsageError;
};

// Operation not defined for the requested mode (e.g. a real-matrix solver
// handed a complex-valued medium).
struct UnsupportedModeError : UsageError {
  using UsageError::UsageError;
};

// Malformed or truncated data file.
struct FormatError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  std::size_t epoch;
  std::size_t batch;
  DivergenceError(const std::string& msg, std::size_t epoch_, std::size_t batch_)
      : Error(msg), epoch(epoch_), batch(batch_) {}
};

enum class Mode { train, eval };

}  // namespace specknet
