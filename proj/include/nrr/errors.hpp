#pragma once

#include <stdexcept>
#include <string>

namespace nrr {

/// Shapes of two operands do not agree (sizes, channel counts, divisibility).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A configuration or input value is outside its documented range.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Reading or writing a file failed.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A non-finite value showed up where only finite values are allowed.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace detail
}  // namespace nrr
