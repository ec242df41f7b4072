#pragma once

#include <stdexcept>
#include <string>

namespace trunc_sim {

// Base for every estimation failure raised by the library.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data (bad CSV row, w > v, non-finite values).
class InvalidSample : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A product-limit factor hit an empty risk set.
class DegenerateRisk : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class InconsistentAlpha : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class ZeroWeightDenominator : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// Kernel denominator vanished: s lies outside the design range at this bandwidth.
class EmptyNeighborhood : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class ZeroVector : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AllTrimmed : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// Raised by inference only; the point estimate is unaffected.
class SingularLambda : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptySample : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

class CalibrationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trunc_sim
