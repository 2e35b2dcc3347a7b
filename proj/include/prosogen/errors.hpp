#pragma once

#include <stdexcept>
#include <string>

namespace prosogen {

/// Shape or axis disagreement between tensor operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Math domain violation (log of a non-positive value, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A forward operation produced NaN/Inf. Non-finite values are never
/// allowed to propagate silently.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API contract violation: bad arguments, mismatched stores, empty masks.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Out-of-range id in a table lookup.
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file contents.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input pipeline failure (e.g. an all-unvoiced utterance).
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Two artifacts that must cover the same data do not (e.g. generated
/// samples over a different utterance set than the oracle corpus).
struct DataMismatchError : ContractError {
  using ContractError::ContractError;
};

}  // namespace prosogen
