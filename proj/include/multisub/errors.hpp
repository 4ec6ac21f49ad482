#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace multisub {

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable tag used in CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Malformed inputs: bundle files, manifests, shapes, configs, label files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A normalization or optimization step hit a degenerate value.
class NumericalError : public Error {
 public:
  NumericalError(std::string kind, const std::string& what, std::ptrdiff_t index = -1)
      : Error(std::move(kind), what), index_(index) {}
  /// Offending sample or row index, -1 when not applicable.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

}  // namespace multisub
