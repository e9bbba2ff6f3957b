#pragma once

#include <stdexcept>
#include <string>

namespace itevar {

/// Invalid user-supplied configuration; names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Failure while fitting or evaluating an estimator.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No tree in the forest excludes the requested training row.
class OobUndefined : public EstimationError {
 public:
  explicit OobUndefined(std::size_t row)
      : EstimationError("no out-of-bag tree for row " + std::to_string(row)), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// No tree contributes a non-empty leaf to the similarity weights of a query.
class NoContributingTree : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

/// The weighted treatment variation at a query point is (numerically) zero.
class NotIdentified : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

}  // namespace itevar
