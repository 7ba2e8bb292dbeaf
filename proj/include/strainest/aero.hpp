#pragma once

#include "strainest/common.hpp"
#include "strainest/geometry.hpp"
#include "strainest/reduction.hpp"

#include <array>
#include <string>

namespace strainest {

using Coeff5 = Eigen::Matrix<double, 5, 1>;

/// Body-frame coefficients. Right-handed frame with x from nose to tail; the
/// flow tilts toward +z with alpha. C_A = F_x, C_N = F_z, C_Y = F_y (over q S);
/// M_P = (r x F)_y and M_Y = (r x F)_z (over q S L), with pitch positive
/// nose-up.
struct AeroCoefficients {
  double axial = 0.0, normal = 0.0, side = 0.0, pitch = 0.0, yaw = 0.0;

  Coeff5 as_vector() const { return {axial, normal, side, pitch, yaw}; }
  static AeroCoefficients from_vector(const Coeff5& v) { return {v[0], v[1], v[2], v[3], v[4]}; }
  static constexpr std::array<const char*, 5> kNames = {"C_A", "C_N", "C_Y", "M_P", "M_Y"};
};

struct ReferenceQuantities {
  double q_ref = 1.0;
  double S_ref = 1.0;
  double L_ref = 1.0;
  Vec3 moment_point = Vec3::Zero();

  void validate() const;
  /// S = pi R^2, L = total length, moment point at mid-body on the axis.
  static ReferenceQuantities for_geometry(const GeometryParams& params, double q_ref);
};

/// 5 x n_s map from nodal forces to coefficients.
Matrix coefficient_map(const Mesh& mesh, const ReferenceQuantities& refs);

AeroCoefficients compute_coefficients(const Matrix& G, const SparseMatrix& C_map, const Vector& p);

/// Coefficients as an affine function of POD coefficients: A c + offset.
struct CoefficientAffineMap {
  Matrix A;       // 5 x r
  Coeff5 offset;  // G C_map p_bar

  Coeff5 evaluate(const Vector& c) const {
    require_size(c.size(), A.cols(), "coefficient affine map");
    return A * c + offset;
  }
};
CoefficientAffineMap precompute_coeff_from_pod(const Matrix& G, const SparseMatrix& C_map, const PodBasis& basis);

/// e_i = (q_hat_i - q_i) / range_i
Vector pod_coefficient_errors(const Vector& q_hat, const Vector& q, const Vector& ranges);
/// |p_hat - p| / |p|
double reconstruction_error(const Vector& p_hat, const Vector& p);
/// e_k = (C_hat_k - C_k) / max(eps_k, |C_k|)
Coeff5 coefficient_errors(const Coeff5& C_hat, const Coeff5& C, const Coeff5& eps);

struct ErrorNormalizers {
  Vector coeff_ranges;  // range of each POD coefficient over the declared snapshot set
  Coeff5 eps;           // eps_fraction * max |C_k| over the same set
};
/// From POD coefficients (r x N) and aerodynamic coefficients (5 x N).
ErrorNormalizers make_normalizers(const Matrix& pod_coeffs, const Matrix& aero_coeffs, double eps_fraction = 0.1);

}  // namespace strainest
