#pragma once

#include <stdexcept>
#include <string>

namespace handfit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong dimensions, out-of-domain hyperparameters, unknown tags.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Point configurations that do not determine a transform (collinear, coincident).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite objective values or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files. The message carries path and line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, int line, const std::string& what)
      : Error(path + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        path_(path),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  int line() const noexcept { return line_; }

 private:
  std::string path_;
  int line_;
};

/// An objective or metric with nothing to sum over.
class EmptyError : public Error {
 public:
  using Error::Error;
};

}  // namespace handfit
