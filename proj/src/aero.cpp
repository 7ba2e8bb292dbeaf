#include "strainest/aero.hpp"

#include <cmath>
#include <numbers>

namespace strainest {

void ReferenceQuantities::validate() const {
  require(q_ref > 0.0 && S_ref > 0.0 && L_ref > 0.0, "reference quantities must be positive");
  require(moment_point.allFinite(), "moment reference point must be finite");
}

ReferenceQuantities ReferenceQuantities::for_geometry(const GeometryParams& params, double q_ref) {
  ReferenceQuantities r;
  r.q_ref = q_ref;
  r.S_ref = std::numbers::pi * params.outer_radius * params.outer_radius;
  r.L_ref = params.total_length();
  r.moment_point = Vec3(0.5 * params.total_length(), 0.0, 0.0);
  r.validate();
  return r;
}

Matrix coefficient_map(const Mesh& mesh, const ReferenceQuantities& refs) {
  refs.validate();
  const double fs = 1.0 / (refs.q_ref * refs.S_ref);
  const double ms = fs / refs.L_ref;
  const Index n = static_cast<Index>(mesh.nodes.size());
  Matrix G = Matrix::Zero(5, 3 * n);
  for (Index i = 0; i < n; ++i) {
    const Vec3 r = mesh.nodes[static_cast<std::size_t>(i)] - refs.moment_point;
    G(0, 3 * i + 0) = fs;
    G(1, 3 * i + 2) = fs;
    G(2, 3 * i + 1) = fs;
    // (r x f)_y = r_z f_x - r_x f_z
    G(3, 3 * i + 0) = r.z() * ms;
    G(3, 3 * i + 2) = -r.x() * ms;
    // (r x f)_z = r_x f_y - r_y f_x
    G(4, 3 * i + 1) = r.x() * ms;
    G(4, 3 * i + 0) = -r.y() * ms;
  }
  return G;
}

AeroCoefficients compute_coefficients(const Matrix& G, const SparseMatrix& C_map, const Vector& p) {
  require_size(G.rows(), 5, "compute_coefficients (G rows)");
  require_size(G.cols(), C_map.rows(), "compute_coefficients (G/C_map)");
  require_size(p.size(), C_map.cols(), "compute_coefficients (p)");
  const Vector f = C_map * p;
  return AeroCoefficients::from_vector(G * f);
}

CoefficientAffineMap precompute_coeff_from_pod(const Matrix& G, const SparseMatrix& C_map, const PodBasis& basis) {
  require_size(G.cols(), C_map.rows(), "precompute_coeff_from_pod (G/C_map)");
  require_size(basis.n_p(), C_map.cols(), "precompute_coeff_from_pod (basis)");
  CoefficientAffineMap out;
  out.A = G * (C_map * basis.modes);
  out.offset = G * (C_map * basis.mean);
  return out;
}

Vector pod_coefficient_errors(const Vector& q_hat, const Vector& q, const Vector& ranges) {
  require_size(q_hat.size(), q.size(), "pod_coefficient_errors");
  require_size(ranges.size(), q.size(), "pod_coefficient_errors (ranges)");
  for (Index i = 0; i < ranges.size(); ++i)
    require(ranges[i] > 0.0, "pod_coefficient_errors: range of coefficient " + std::to_string(i) + " is zero");
  return (q_hat - q).cwiseQuotient(ranges);
}

double reconstruction_error(const Vector& p_hat, const Vector& p) {
  require_size(p_hat.size(), p.size(), "reconstruction_error");
  const double pn = p.norm();
  require(pn > 0.0, "reconstruction_error: reference field is zero");
  return (p_hat - p).norm() / pn;
}

Coeff5 coefficient_errors(const Coeff5& C_hat, const Coeff5& C, const Coeff5& eps) {
  Coeff5 e;
  for (int k = 0; k < 5; ++k) {
    const double denom = std::max(eps[k], std::abs(C[k]));
    require(denom > 0.0, std::string("coefficient_errors: zero normalizer for ") + AeroCoefficients::kNames[k]);
    e[k] = (C_hat[k] - C[k]) / denom;
  }
  return e;
}

ErrorNormalizers make_normalizers(const Matrix& pod_coeffs, const Matrix& aero_coeffs, double eps_fraction) {
  require(pod_coeffs.cols() > 0, "make_normalizers: empty snapshot set");
  require_size(aero_coeffs.rows(), 5, "make_normalizers (aero rows)");
  require(eps_fraction > 0.0, "make_normalizers: eps fraction must be positive");
  ErrorNormalizers n;
  n.coeff_ranges = pod_coeffs.rowwise().maxCoeff() - pod_coeffs.rowwise().minCoeff();
  n.eps = eps_fraction * aero_coeffs.cwiseAbs().rowwise().maxCoeff();
  return n;
}

}  // namespace strainest
