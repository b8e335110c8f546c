#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bas {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// Malformed input document. `record` is the 1-based line or feature number
/// of the first offending record (0 when unknown).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t record = 0)
      : Error(what), record_(record) {}
  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t record_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Transient failure; the caller may try again.
class RetryableError : public Error {
 public:
  using Error::Error;
};

/// The peer violated the wire contract. Never retried.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class NoCoverage : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace bas
