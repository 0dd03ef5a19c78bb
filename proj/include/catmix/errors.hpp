#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace catmix {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IndexError : public Error { using Error::Error; };
class ValueError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class EmptyVocabularyError : public Error { using Error::Error; };
class InfeasibleError : public Error { using Error::Error; };
class DegenerateFitError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class DegenerateRegressionError : public Error { using Error::Error; };
class OracleInfeasibleError : public Error { using Error::Error; };
class DivergenceInfiniteError : public Error { using Error::Error; };

/// Non-finite objective during fitting; carries the EM iteration index.
class NumericalError : public Error {
 public:
  NumericalError(std::size_t iteration, const std::string& what)
      : Error("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace catmix
