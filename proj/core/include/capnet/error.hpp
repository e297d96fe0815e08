#pragma once

#include <stdexcept>
#include <string>

namespace capnet {

/// Invalid argument: bad kernel size, mismatched dimensions, malformed input.
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

/// Operation called on an object that is not ready for it (e.g. an untrained model).
class StateError : public std::logic_error {
 public:
  explicit StateError(const std::string& what) : std::logic_error(what) {}
};

/// Corrupt or unsupported serialized data.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

/// A metric has no defined value for the given record (zero area, no motion).
class UndefinedMetricError : public std::domain_error {
 public:
  explicit UndefinedMetricError(const std::string& what) : std::domain_error(what) {}
};

}  // namespace capnet
