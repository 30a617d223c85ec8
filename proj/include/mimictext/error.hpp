#pragma once

#include <stdexcept>
#include <string>

namespace mimictext {

// Base of every error the library raises. The CLI maps the category to an
// exit code: usage errors exit 2, everything else exits 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Required input file or column is missing, or a header does not match.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// No ICU stay survived the cohort filters.
class EmptyCohortError : public Error {
 public:
  using Error::Error;
};

// Input data violates a precondition of an operation (single-class label set,
// non-finite feature, layout mismatch, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized dataset; carries the 1-based line number.
class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mimictext
