#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bicr {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch in a matrix operation or layer.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A vector with norm below the degeneracy threshold reached a path that
// requires normalization (collapsed embedding).
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

// Too few samples/identities for the requested operation (batch norm in
// train mode with one row, statistics over fewer than two samples,
// single-identity training splits, PK sampling without enough identities).
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during optimization.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or malformed config document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed persisted file. Carries the byte offset of the first problem.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t offset)
      : Error(msg + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_ = 0;
};

// Stage-protocol violation: out-of-order stages, stale store versions,
// skipped versions in a gallery update.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// rank_query against a store with no records.
class EmptyGalleryError : public Error {
 public:
  using Error::Error;
};

// Undefined evaluation result: no relevant gallery entry for a query,
// epsilon requested at stage 1, non-finite objective in a gradient check.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace bicr
