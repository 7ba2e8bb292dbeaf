#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace strainest {

using Vec3 = Eigen::Vector3d;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Index = Eigen::Index;

// Error families. The CLI maps each family onto a distinct exit code.

/// Invalid user-supplied parameters or inputs with the wrong shape.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Factorization failure, rank deficiency, ill-conditioning.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or corrupted persisted artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Upstream artifact missing or produced from different inputs.
class StaleArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration file problems (unknown keys, bad schema version).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ParameterError(what);
}

inline void require_size(Index got, Index expected, const char* what) {
  if (got != expected) {
    throw ParameterError(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
                         ", expected " + std::to_string(expected) + ")");
  }
}

}  // namespace strainest
