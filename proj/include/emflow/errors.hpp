#pragma once

#include <stdexcept>
#include <string>

namespace emflow {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct SpanError : Error {
  using Error::Error;
};

struct VocabularyError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// E-step normalizer collapsed to zero.
struct DegeneratePosteriorError : Error {
  using Error::Error;
};

// Flow constraint violated or unsatisfiable (e.g. zero w outside pretraining).
struct ConstraintError : Error {
  using Error::Error;
};

struct InversionError : Error {
  using Error::Error;
};

struct MetricError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace emflow
