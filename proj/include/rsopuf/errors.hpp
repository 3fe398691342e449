#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rsopuf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (dimension mismatch, range, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class CalibrationFailure : public Error {
 public:
  using Error::Error;
};

/// The candidate challenge stream ran out before enough stable challenges were found.
class StreamExhausted : public Error {
 public:
  using Error::Error;
};

/// Every provisioned challenge bank has been consumed.
class DeviceRetired : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss. Carries the loss trace up to the failure.
class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace rsopuf
