#pragma once

#include "strainest/common.hpp"
#include "strainest/noise.hpp"
#include "strainest/reduction.hpp"

#include <filesystem>
#include <string>

namespace strainest {

enum class EstimatorCase { Case1, Case2 };
std::string to_string(EstimatorCase c);

/// Precomputed affine inverse map q_hat = T d + k.
///
/// Case 1 (overdetermined, gamma = 0) keeps the dense posterior covariance
/// (Z^T Gamma_n^-1 Z)^-1. Case 2 keeps the Woodbury factors
/// H^-1 = (1/gamma) S K S^T with K = I - Y^T (gamma Gamma_n + Y Y^T)^-1 Y and
/// Y = Z S, so H^-1 is applied to vectors without forming it.
struct InverseMap {
  EstimatorCase kind = EstimatorCase::Case1;
  Matrix T;  // n_q x n_d
  Vector k;  // n_q
  double gamma = 0.0;
  double sigma = 0.0;
  std::string z_digest, noise_digest, basis_digest;

  Matrix posterior;     // Case 1: n_q x n_q
  Matrix prior_factor;  // Case 2: S, n_q x N
  Matrix woodbury_core; // Case 2: K, N x N

  Index n_q() const { return T.rows(); }
  Index n_d() const { return T.cols(); }

  /// Allocation-free query into a caller-owned vector. Safe to call
  /// concurrently on a shared map.
  void estimate_into(const Eigen::Ref<const Vector>& d, Eigen::Ref<Vector> out) const;
  Vector estimate(const Vector& d) const;
  /// One estimate per column of D; columns run in parallel.
  Matrix estimate_batch(const Matrix& D) const;
  Matrix estimate_batch_serial(const Matrix& D) const;

  /// Posterior covariance applied to v.
  Vector apply_posterior(const Vector& v) const;
  /// diag of the posterior covariance.
  Vector posterior_variance() const;
  /// Dense posterior covariance (Case 2 forms S K S^T / gamma; small n_q only).
  Matrix posterior_covariance() const;

  std::string digest() const;
};

/// Case 1 via whitened thin QR: L^-1 Z = Q R, T = R^-1 Q^T L^-1.
/// `data_offset` is the strain of the fixed part of the parameterization
/// (Z_full p_bar for POD coefficients); then k = -T data_offset, else k = 0.
InverseMap build_case1(const Matrix& Z, const NoiseModel& noise, const Vector& data_offset = Vector());

/// Case 2 with the snapshot prior, T = S Y^T (gamma Gamma_n + Y Y^T)^-1 and
/// k = q_bar - T Z q_bar.
InverseMap build_case2(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior, double gamma);

/// Relative condition number of the least-squares problem,
/// K = kappa / (nu cos(theta)) with nu = |Z||q|/|Zq| and cos(theta) = |Zq|/|d|.
struct ConditionReport {
  double sigma_max = 0.0, sigma_min = 0.0;
  double kappa = 0.0, nu = 0.0, cos_theta = 0.0;
  double K = 0.0;
};
ConditionReport relative_condition_number(const Matrix& Z, const Vector& q, const Vector& d);

/// Evaluation convention with prescribed norms |d| = d_scale sqrt(n_d) and
/// |q| = q_norm, for which K = kappa |d| / (sigma_max |q|).
struct ConditionPreset {
  double d_scale = 100.0;
  double q_norm = 1.0;
};
ConditionReport relative_condition_number(const Matrix& Z, const ConditionPreset& preset = {});

/// Nonzero eigenpairs of Gamma_pr H_misfit from the symmetric problem
/// S^T Z^T Gamma_n^-1 Z S w = lambda w, mapped back as b = S w.
struct HessianSpectrum {
  Vector eigenvalues;   // nonincreasing
  Matrix eigenvectors;  // n_q x m
  Vector prior_mean;    // used to centre fields in project_onto_modes

  Index count() const { return eigenvalues.size(); }
};
HessianSpectrum preconditioned_hessian_eigs(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior,
                                            double eps_cut = 1e-14);

/// Mean plus the least-squares fit of (p - mean) in span{b_1..b_r}.
Vector project_onto_modes(const Vector& p, const HessianSpectrum& spectrum, Index r);

struct MorozovOptions {
  double lower = 1e-8;  // bracket, as multiples of lambda_1
  double upper = 1e4;
  double rel_tol = 0.005;  // stop when |median misfit - delta| <= rel_tol delta
  int max_iter = 200;
};

struct MorozovResult {
  double gamma = 0.0;
  double median_misfit = 0.0;
  double delta = 0.0;
  int iterations = 0;
};

/// Median over the columns of D of |Z q_hat(gamma) - d|.
double median_misfit(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior, double gamma,
                     const Matrix& D);

/// Bisection on log10(gamma) until the median data misfit over the
/// calibration measurements (columns of D) matches delta = sigma sqrt(n_d).
MorozovResult select_gamma_morozov(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior,
                                   const Matrix& D, double lambda1, const MorozovOptions& opts = {});

void save_spectrum(const HessianSpectrum& spectrum, const std::filesystem::path& path);
HessianSpectrum load_spectrum(const std::filesystem::path& path);

/// Container plus a `<path>.json` manifest (case, gamma, sigma, noise
/// generator, digests, build timestamp; SOURCE_DATE_EPOCH pins the timestamp).
void save_inverse_map(const InverseMap& map, const std::filesystem::path& path);
InverseMap load_inverse_map(const std::filesystem::path& path);

}  // namespace strainest
