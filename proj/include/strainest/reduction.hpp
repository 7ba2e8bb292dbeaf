#pragma once

#include "strainest/common.hpp"
#include "strainest/pressure.hpp"

#include <filesystem>
#include <string>

namespace strainest {

/// How many POD modes to keep.
struct PodSelector {
  enum class Kind { Fixed, Energy };
  Kind kind = Kind::Energy;
  Index rank = 0;           // Fixed
  double threshold = 0.99;  // Energy: smallest r with cumulative energy >= threshold

  static PodSelector fixed(Index r) { return {Kind::Fixed, r, 0.0}; }
  static PodSelector energy(double t) { return {Kind::Energy, 0, t}; }
};

struct PodBasis {
  Vector mean;             // n_p
  Matrix modes;            // n_p x r, orthonormal columns
  Vector singular_values;  // min(n_p, N), nonincreasing
  std::string source_digest;

  Index r() const { return modes.cols(); }
  Index n_p() const { return mean.size(); }
  /// Cumulative energy fraction after each mode (empty when all sigma are 0).
  Vector cumulative_energy() const;
};

/// Centered thin SVD of the snapshot matrix (n_p x N, N >= 2). Each mode's
/// sign is fixed so that its largest-magnitude entry is positive.
PodBasis compute_pod(const Matrix& snapshots, const PodSelector& selector);
PodBasis compute_pod(const SnapshotSet& snaps, const PodSelector& selector);

/// p = mean + V c
Vector reconstruct_pressure(const PodBasis& basis, const Vector& c);
/// c = V^T (p - mean)
Vector project_coeffs(const PodBasis& basis, const Vector& p);

/// Snapshot prior with Gamma_pr = S S^T, S = (P - mean 1^T) / sqrt(N - 1).
struct PriorModel {
  Vector mean;    // n_q
  Matrix factor;  // n_q x N
  std::string source_digest;

  Index n_q() const { return mean.size(); }
  Index samples() const { return factor.cols(); }
  /// Gamma_pr v without forming Gamma_pr.
  Vector apply(const Vector& v) const { return factor * (factor.transpose() * v); }
  /// Dense n_q x n_q covariance; only meant for small problems and tests.
  Matrix dense_covariance() const { return factor * factor.transpose(); }
};

PriorModel compute_prior(const Matrix& snapshots);
PriorModel compute_prior(const SnapshotSet& snaps);

void save_pod(const PodBasis& basis, const std::filesystem::path& path);
PodBasis load_pod(const std::filesystem::path& path);
void save_prior(const PriorModel& prior, const std::filesystem::path& path);
PriorModel load_prior(const std::filesystem::path& path);

std::string digest(const PodBasis& basis);
std::string digest(const PriorModel& prior);

}  // namespace strainest
