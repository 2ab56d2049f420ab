#pragma once

#include <stdexcept>
#include <string>

namespace ppf {

/// Evaluation point outside the basis domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed input files or too many malformed rows.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A unit has no events at all, so no intensity can be fitted.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Score covariance still singular after the ridge guard.
class DegenerateCovarianceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOrderError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace ppf
