#pragma once

#include "strainest/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace strainest {

/// Zero-mean Gaussian sensor noise with covariance Gamma_n = L L^T.
class NoiseModel {
 public:
  /// Gamma_n = sigma^2 I
  static NoiseModel diagonal(double sigma, Index n_d);
  /// General lower-triangular factor with positive diagonal.
  static NoiseModel from_cholesky(const Matrix& L);

  Index n_d() const { return n_d_; }
  bool is_diagonal() const { return L_.size() == 0; }
  /// sigma for the diagonal form; RMS standard deviation otherwise.
  double sigma() const { return sigma_; }
  Matrix cholesky() const;
  Matrix covariance() const;

  /// L z
  Vector color(const Vector& z) const;
  /// L^-1 v
  Vector whiten(const Vector& v) const;
  Matrix whiten(const Matrix& M) const;
  /// Gamma_n v
  Vector apply_covariance(const Vector& v) const;
  Matrix apply_covariance(const Matrix& M) const;

  std::string digest() const;

 private:
  Index n_d_ = 0;
  double sigma_ = 0.0;
  Matrix L_;  // empty for the diagonal form
};

/// sigma = fraction * median(|y_ij|) over every sensor and condition.
double calibrate_sigma(const Matrix& strains, double fraction);
double calibrate_sigma(const std::vector<Vector>& strains, double fraction);

/// Portable standard-normal stream: mt19937_64 (fully specified by the C++
/// standard) feeding 53-bit uniforms into the Marsaglia polar method. Unlike
/// std::normal_distribution the output is identical across standard libraries.
class GaussianStream {
 public:
  static constexpr const char* kGenerator = "mt19937_64";
  static constexpr const char* kMethod = "marsaglia-polar/53-bit-uniform";

  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double next();
  Vector draw(Index n);

 private:
  double uniform();  // in [-1, 1)

  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Seed of the stream for one (condition, replicate) pair: a splitmix64 chain
/// over (base, condition, replicate). Streams never share generator state, so
/// replicates can run on any worker in any order.
std::uint64_t stream_seed(std::uint64_t base, std::uint64_t condition, std::uint64_t replicate);

/// eta = L z with z from GaussianStream(seed).
Vector sample_noise(const NoiseModel& model, std::uint64_t seed);
Vector sample_noise(const NoiseModel& model, GaussianStream& stream);

}  // namespace strainest
