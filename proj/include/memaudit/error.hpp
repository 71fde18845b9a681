#pragma once

#include <stdexcept>
#include <string>

namespace memaudit {

// Root of all library errors. Callers that only care about "something went
// wrong in the toolkit" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input or configuration detected before any work is done.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed data files (corpus, samples, preference data, results).
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Any failure talking to a model endpoint.
class GatewayError : public Error {
 public:
  GatewayError(const std::string& what, int status = 0)
      : Error(what), status_(status) {}

  // HTTP status of the last attempt, 0 for transport failures.
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class RetriesExhaustedError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class MalformedResponseError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

// Thrown by PretrainSample when code touches a suffix that was withheld.
class SuffixWithheldError : public Error {
 public:
  using Error::Error;
};

}  // namespace memaudit
