#pragma once

#include <stdexcept>
#include <string>

namespace ddr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or invalid dataset content. `line()` is 1-based, 0 when unknown.
class DatasetError : public Error {
 public:
  DatasetError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// External adapter failure. Carries the raw payload received from the peer.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, std::string payload = {})
      : Error(what), payload_(std::move(payload)) {}
  const std::string& payload() const noexcept { return payload_; }

 private:
  std::string payload_;
};

/// The adapter does not implement the requested operation.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (NaN loss, non-finite logprob).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddr
