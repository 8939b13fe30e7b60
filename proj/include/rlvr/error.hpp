#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rlvr {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

class IncompatibleCheckpoints : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& what)
      : Error("parse error at " + std::to_string(position) + ": " + what),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Remote judge/cleaner unreachable, timed out, or answered non-2xx.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Cleaner output lacked a required tag or carried an unreadable flag.
class CleaningParseError : public Error {
 public:
  using Error::Error;
};

// A loss or gradient became NaN/Inf during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// A requested stage list breaks ordering or data dependencies.
class PlanError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage raised; carries the stage name.
class StageFailure : public Error {
 public:
  StageFailure(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace rlvr
