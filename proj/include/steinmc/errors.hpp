#pragma once

#include <stdexcept>
#include <string>

namespace steinmc {

/// Argument outside the domain of a map or operator.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Index outside the valid range of a sequence or ensemble.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A numerical procedure failed (non-convergence, degeneracy, singular matrix).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation not defined for the given input kind.
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace steinmc
