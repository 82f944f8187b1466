#pragma once

#include <stdexcept>
#include <string>

namespace fdac {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad hyper-parameter, unknown key, layer out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: shape mismatch, non-normalized rows, label out of range.
class InputError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on a client with the wrong role.
class RoleError : public Error {
 public:
  using Error::Error;
};

class PrivacyViolation : public Error {
 public:
  PrivacyViolation(int sender_id, const std::string& what)
      : Error(what), sender_id_(sender_id) {}

  int sender_id() const noexcept { return sender_id_; }

 private:
  int sender_id_;
};

// File format problems: bad magic, unsupported schema version, missing columns.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace fdac
