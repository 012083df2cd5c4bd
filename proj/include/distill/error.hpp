#pragma once

#include <stdexcept>
#include <string>

namespace distill {

/// Base for every error raised by the library. The category maps onto the
/// CLI exit codes (1 input, 2 backend, 3 validation).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, malformed files, degenerate inputs.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Remote backend unreachable or timed out after retries. Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Backend answered, but the answer violates the wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A dataset failed re-validation of the filter predicates.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace distill
