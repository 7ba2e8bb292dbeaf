#include "strainest/elasticity.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace strainest {

Material Material::from_poisson(double young, double poisson) {
  return Material{young, young / (2.0 * (1.0 + poisson))};
}

double Material::lame_lambda() const {
  const double E = young_modulus, S = shear_modulus;
  return S * (E - 2.0 * S) / (3.0 * S - E);
}

void Material::validate() const {
  require(young_modulus > 0 && shear_modulus > 0, "material moduli must be positive");
  require(3.0 * shear_modulus - young_modulus != 0.0, "material: 3S - E must be nonzero");
  const double nu = poisson_ratio();
  require(nu > 0.0 && nu < 0.5, "material: derived Poisson ratio must lie in (0, 0.5)");
}

Eigen::Matrix<double, 4, 3> shape_gradients(const std::array<Vec3, 4>& x) {
  Eigen::Matrix4d M;
  for (int i = 0; i < 4; ++i) M.row(i) << 1.0, x[i].x(), x[i].y(), x[i].z();
  const Eigen::Matrix4d inv = M.inverse();
  // N_i = inv(0,i) + inv(1..3,i) . x
  return inv.bottomRows<3>().transpose();
}

StrainMatrix strain_displacement(const Eigen::Matrix<double, 4, 3>& g) {
  StrainMatrix Bm = StrainMatrix::Zero();
  for (int i = 0; i < 4; ++i) {
    const int c = 3 * i;
    Bm(0, c) = g(i, 0);
    Bm(1, c + 1) = g(i, 1);
    Bm(2, c + 2) = g(i, 2);
    Bm(3, c + 1) = g(i, 2);
    Bm(3, c + 2) = g(i, 1);
    Bm(4, c) = g(i, 2);
    Bm(4, c + 2) = g(i, 0);
    Bm(5, c) = g(i, 1);
    Bm(5, c + 1) = g(i, 0);
  }
  return Bm;
}

ElementMatrix element_stiffness(const std::array<Vec3, 4>& x, const Material& mat) {
  const double vol = (x[1] - x[0]).cross(x[2] - x[0]).dot(x[3] - x[0]) / 6.0;
  if (!(std::abs(vol) > 0)) throw NumericalError("element_stiffness: zero-volume element");
  const double lam = mat.lame_lambda(), mu = mat.shear_modulus;
  Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
  D.topLeftCorner<3, 3>().setConstant(lam);
  D.topLeftCorner<3, 3>().diagonal().array() += 2.0 * mu;
  D.bottomRightCorner<3, 3>().diagonal().setConstant(mu);
  const StrainMatrix Bm = strain_displacement(shape_gradients(x));
  return std::abs(vol) * Bm.transpose() * D * Bm;
}

namespace {

std::array<Vec3, 4> element_coords(const Mesh& mesh, std::size_t e) {
  const auto& t = mesh.tets[e];
  return {mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]], mesh.nodes[t[3]]};
}

void scatter(const Mesh& mesh, std::size_t e, const ElementMatrix& Ke, Eigen::Triplet<double>* out) {
  const auto& t = mesh.tets[e];
  for (int a = 0; a < 12; ++a)
    for (int b = 0; b < 12; ++b)
      *out++ = Eigen::Triplet<double>(3 * t[a / 3] + a % 3, 3 * t[b / 3] + b % 3, Ke(a, b));
}

}  // namespace

SparseMatrix assemble_stiffness_unconstrained(const Mesh& mesh, const Material& mat) {
  mat.validate();
  const auto ne = static_cast<std::ptrdiff_t>(mesh.tets.size());
  std::vector<Eigen::Triplet<double>> trips(static_cast<std::size_t>(ne) * 144);
  bool degenerate = false;
#pragma omp parallel for schedule(static) reduction(|| : degenerate)
  for (std::ptrdiff_t e = 0; e < ne; ++e) {
    try {
      scatter(mesh, e, element_stiffness(element_coords(mesh, e), mat), trips.data() + e * 144);
    } catch (const NumericalError&) {
      degenerate = true;
    }
  }
  if (degenerate) throw NumericalError("stiffness assembly: singular (zero-volume) element");
  const auto n = static_cast<Index>(3 * mesh.nodes.size());
  SparseMatrix K(n, n);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

SparseMatrix assemble_stiffness_unconstrained_serial(const Mesh& mesh, const Material& mat) {
  mat.validate();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.tets.size() * 144);
  Eigen::Triplet<double> buf[144];
  for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
    scatter(mesh, e, element_stiffness(element_coords(mesh, e), mat), buf);
    trips.insert(trips.end(), buf, buf + 144);
  }
  const auto n = static_cast<Index>(3 * mesh.nodes.size());
  SparseMatrix K(n, n);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

std::vector<int> aft_dirichlet_dofs(const Mesh& mesh) {
  std::vector<int> dofs;
  for (int n : mesh.nodes_with_tag(SurfaceTag::Aft))
    for (int c = 0; c < 3; ++c) dofs.push_back(3 * n + c);
  return dofs;
}

SparseMatrix apply_dirichlet(const SparseMatrix& K, const std::vector<int>& dofs) {
  std::vector<char> fixed(static_cast<std::size_t>(K.rows()), 0);
  for (int d : dofs) {
    require(d >= 0 && d < K.rows(), "apply_dirichlet: DOF out of range");
    fixed[d] = 1;
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(K.nonZeros()));
  for (Index k = 0; k < K.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(K, k); it; ++it)
      if (!fixed[it.row()] && !fixed[it.col()]) trips.emplace_back(it.row(), it.col(), it.value());
  for (int d : dofs) trips.emplace_back(d, d, 1.0);
  SparseMatrix out(K.rows(), K.cols());
  // Duplicated constrained DOFs in `dofs` would sum; keep the diagonal at 1.
  out.setFromTriplets(trips.begin(), trips.end(), [](double, double b) { return b; });
  return out;
}

SparseMatrix assemble_stiffness(const Mesh& mesh, const Material& mat) {
  const auto dofs = aft_dirichlet_dofs(mesh);
  if (dofs.empty()) throw ParameterError("assemble_stiffness: mesh has no aft (Dirichlet) nodes");
  return apply_dirichlet(assemble_stiffness_unconstrained(mesh, mat), dofs);
}

SparseMatrix assemble_surface_load(const Mesh& mesh, SurfaceTag tag, const std::vector<int>& column_nodes) {
  std::vector<int> column(mesh.nodes.size(), -1);
  for (std::size_t j = 0; j < column_nodes.size(); ++j) column[column_nodes[j]] = static_cast<int>(j);
  std::vector<Eigen::Triplet<double>> trips;
  for (const auto& tri : mesh.surface) {
    if (tri.tag != tag) continue;
    const Vec3 an = mesh.area_normal(tri);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const int col = column[tri.nodes[b]];
        if (col < 0) throw ParameterError("assemble_surface_load: triangle node has no pressure column");
        const double w = (a == b ? 2.0 : 1.0) / 12.0;  // exact P1 mass weights
        for (int c = 0; c < 3; ++c) trips.emplace_back(3 * tri.nodes[a] + c, col, -an[c] * w);
      }
  }
  SparseMatrix C(static_cast<Index>(3 * mesh.nodes.size()), static_cast<Index>(column_nodes.size()));
  C.setFromTriplets(trips.begin(), trips.end());
  return C;
}

SparseMatrix assemble_pressure_to_force(const Mesh& mesh) {
  require(mesh.tagged(), "assemble_pressure_to_force: mesh must be tagged");
  return assemble_surface_load(mesh, SurfaceTag::Exterior, mesh.exterior_nodes);
}

SparseMatrix assemble_strain_observer(const Mesh& mesh, const std::vector<SensorSpec>& sensors) {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    const auto& s = sensors[i];
    if (s.element < 0 || static_cast<std::size_t>(s.element) >= mesh.tets.size())
      throw ParameterError("assemble_strain_observer: sensor " + std::to_string(i) + " element out of range");
    const Vec3 t = s.direction;
    const auto g = shape_gradients(element_coords(mesh, s.element));
    const auto& tet = mesh.tets[s.element];
    for (int a = 0; a < 4; ++a) {
      const double dn = g.row(a).dot(t);
      for (int c = 0; c < 3; ++c) trips.emplace_back(static_cast<Index>(i), 3 * tet[a] + c, dn * t[c]);
    }
  }
  SparseMatrix B(static_cast<Index>(sensors.size()), static_cast<Index>(3 * mesh.nodes.size()));
  B.setFromTriplets(trips.begin(), trips.end());
  return B;
}

// ---------------------------------------------------------------------------

ForwardSolver::ForwardSolver(const SparseMatrix& A)
    : n_(A.rows()),
      llt_(std::make_shared<Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>>()) {
  require(A.rows() == A.cols(), "ForwardSolver: matrix must be square");
  llt_->compute(A);
  if (llt_->info() != Eigen::Success)
    throw NumericalError("stiffness matrix is indefinite or singular: Cholesky factorization failed");
}

Vector ForwardSolver::solve(const Vector& f) const {
  require_size(f.size(), n_, "ForwardSolver::solve");
  return llt_->solve(f);
}

Matrix ForwardSolver::solve(const Matrix& F) const {
  require_size(F.rows(), n_, "ForwardSolver::solve");
  Matrix U(F.rows(), F.cols());
  const auto nc = static_cast<std::ptrdiff_t>(F.cols());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < nc; ++j) U.col(j) = llt_->solve(Vector(F.col(j)));
  return U;
}

Vector StructuralOperators::constrain(Vector f) const {
  for (int d : fixed_dofs) f[d] = 0.0;
  return f;
}

SparseMatrix StructuralOperators::constrained_loads() const {
  std::vector<char> fixed(static_cast<std::size_t>(n_s), 0);
  for (int d : fixed_dofs) fixed[d] = 1;
  SparseMatrix C = C_map;
  C.prune([&](Index row, Index, double) { return !fixed[row]; });
  return C;
}

StructuralOperators assemble_operators(const Mesh& mesh, const Material& mat, const std::vector<SensorSpec>& sensors) {
  StructuralOperators ops;
  ops.fixed_dofs = aft_dirichlet_dofs(mesh);
  if (ops.fixed_dofs.empty()) throw ParameterError("assemble_operators: mesh has no aft nodes");
  ops.A = apply_dirichlet(assemble_stiffness_unconstrained(mesh, mat), ops.fixed_dofs);
  ops.B = assemble_strain_observer(mesh, sensors);
  ops.C_map = assemble_pressure_to_force(mesh);
  ops.n_s = ops.A.rows();
  ops.n_d = ops.B.rows();
  ops.n_p = ops.C_map.cols();
  return ops;
}

Vector solve_forward(const StructuralOperators& ops, const ForwardSolver& solver, const Vector& f) {
  require_size(f.size(), ops.n_s, "solve_forward");
  for (int d : ops.fixed_dofs)
    if (f[d] != 0.0) throw ParameterError("solve_forward: load is nonzero on a constrained DOF");
  return solver.solve(f);
}

Vector compute_strain_response(const StructuralOperators& ops, const Vector& u) {
  require_size(u.size(), ops.n_s, "compute_strain_response");
  return ops.B * u;
}

namespace {

template <typename CMat>
P2OMap p2o_impl(const SparseMatrix& B, const ForwardSolver& solver, const CMat& C, P2ORoute route) {
  require_size(B.cols(), solver.size(), "assemble_p2o (B columns)");
  require_size(C.rows(), solver.size(), "assemble_p2o (C rows)");
  const Index nd = B.rows(), nq = C.cols();
  if (route == P2ORoute::Auto) route = nd < nq ? P2ORoute::Adjoint : P2ORoute::Forward;
  P2OMap out{Matrix(nd, nq), route};
  if (route == P2ORoute::Forward) {
    const auto n = static_cast<std::ptrdiff_t>(nq);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      const Vector rhs = C.col(j);
      out.Z.col(j) = B * solver.solve(rhs);
    }
  } else {
    const SparseMatrix Bt = B.transpose();
    const auto n = static_cast<std::ptrdiff_t>(nd);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const Vector v = solver.solve(Vector(Bt.col(i)));
      out.Z.row(i) = (C.transpose() * v).transpose();
    }
  }
  return out;
}

}  // namespace

P2OMap assemble_p2o(const SparseMatrix& B, const ForwardSolver& solver, const SparseMatrix& C, P2ORoute route) {
  return p2o_impl(B, solver, C, route);
}

P2OMap assemble_p2o(const SparseMatrix& B, const ForwardSolver& solver, const Matrix& C, P2ORoute route) {
  return p2o_impl(B, solver, C, route);
}

P2OMap assemble_p2o(const StructuralOperators& ops, const ForwardSolver& solver, const Matrix& pressure_basis,
                    P2ORoute route) {
  require_size(pressure_basis.rows(), ops.n_p, "assemble_p2o (pressure basis rows)");
  const Matrix C = ops.constrained_loads() * pressure_basis;
  return p2o_impl(ops.B, solver, C, route);
}

P2OMap assemble_p2o_full(const StructuralOperators& ops, const ForwardSolver& solver, P2ORoute route) {
  return p2o_impl(ops.B, solver, ops.constrained_loads(), route);
}

Matrix assemble_p2o_serial(const SparseMatrix& B, const ForwardSolver& solver, const Matrix& C) {
  Matrix Z(B.rows(), C.cols());
  for (Index j = 0; j < C.cols(); ++j) Z.col(j) = B * solver.solve(Vector(C.col(j)));
  return Z;
}

}  // namespace strainest
