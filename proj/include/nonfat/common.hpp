#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace nonfat {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, indices, shapes of user data).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Factorization failure, divergence, or a non-finite value in the numerics.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nonfat
