#pragma once

#include <stdexcept>
#include <string>

namespace stalegraph {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class GenerationError : public Error { using Error::Error; };
class SplitError : public Error { using Error::Error; };
class OrderingError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ThresholdError : public Error { using Error::Error; };
class MetricError : public Error { using Error::Error; };
class UsageError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };

}  // namespace stalegraph
