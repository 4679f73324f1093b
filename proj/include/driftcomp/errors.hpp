#pragma once

#include <stdexcept>
#include <string>

namespace driftcomp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside an operation's mathematical domain (e.g. t < 1 s).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. `offset` is the byte offset where parsing failed,
// or -1 when not applicable.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

// Value outside a representable range (e.g. a weight beyond w_absmax).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Shape or call-contract violation between components.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace driftcomp
