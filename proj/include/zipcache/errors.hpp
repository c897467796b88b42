#pragma once

#include <stdexcept>
#include <string>

namespace zipcache {

/// Caller broke a documented precondition (bad length, index out of range).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Stored bytes failed validation while decoding.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A device or tier ran out of space; the rejected operation left no trace.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zipcache
