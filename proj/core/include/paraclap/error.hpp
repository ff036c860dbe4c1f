#pragma once

#include <stdexcept>
#include <string>

namespace paraclap {

// Base for every error raised by the library. Subclasses let callers (the CLI
// in particular) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input did not satisfy a documented precondition or schema rule.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A text document (manifest line, CSV row, checkpoint) could not be parsed.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line);
  explicit ParseError(const std::string& what);

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class UnsupportedFormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnknownLabelError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Not enough data points for a statistic (jitter with one period, ...).
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class NoVoicingError : public InsufficientDataError {
 public:
  using InsufficientDataError::InsufficientDataError;
};

// A query template needed context (e.g. the pitch-sigma bin) that was absent.
class ContextError : public Error {
 public:
  using Error::Error;
};

class EmptyPoolError : public Error {
 public:
  using Error::Error;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

// Non-finite value encountered during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace paraclap
