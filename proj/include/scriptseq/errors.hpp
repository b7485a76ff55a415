#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scriptseq {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes, so each subclass belongs to exactly one category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied settings or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

class EmptyPredicate : public DataError {
 public:
  EmptyPredicate() : DataError("event predicate must be non-empty") {}
};

class SchemaError : public DataError {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class AnswerOutOfRange : public DataError {
 public:
  AnswerOutOfRange(std::size_t line, long long answer, std::size_t m)
      : DataError("line " + std::to_string(line) + ": answer index " +
                  std::to_string(answer) + " outside [0, " +
                  std::to_string(m) + ")") {}
};

class EmptyCorpus : public DataError {
 public:
  EmptyCorpus() : DataError("cannot build a vocabulary from an empty corpus") {}
  explicit EmptyCorpus(const std::string& what) : DataError(what) {}
};

class IdOutOfRange : public DataError {
 public:
  IdOutOfRange(long long id, std::size_t size)
      : DataError("token id " + std::to_string(id) +
                  " outside vocabulary of size " + std::to_string(size)) {}
};

// Dataset generation failures.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class GrammarTooShort : public GenerationError {
 public:
  using GenerationError::GenerationError;
};

class PoolExhausted : public GenerationError {
 public:
  using GenerationError::GenerationError;
};

class TooFewEvents : public DataError {
 public:
  using DataError::DataError;
};

class PlacementFailure : public DataError {
 public:
  using DataError::DataError;
};

class ArityMismatch : public DataError {
 public:
  using DataError::DataError;
};

class EmptyTarget : public DataError {
 public:
  using DataError::DataError;
};

class SequenceTooLong : public DataError {
 public:
  using DataError::DataError;
};

// Numerical failures inside training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonFiniteGradient : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateScore : public NumericError {
 public:
  using NumericError::NumericError;
};

class HeadMissing : public ConfigError {
 public:
  HeadMissing() : ConfigError("model has no classifier head") {}
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpoint : public CheckpointError {
 public:
  CorruptCheckpoint(std::size_t offset, const std::string& what)
      : CheckpointError("corrupt checkpoint at byte " + std::to_string(offset) +
                        ": " + what),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace scriptseq
