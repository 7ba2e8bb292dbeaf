#pragma once

#include "strainest/common.hpp"
#include "strainest/geometry.hpp"

#include <Eigen/SparseCholesky>

#include <array>
#include <memory>
#include <vector>

namespace strainest {

/// Isotropic linear-elastic material given by Young's and shear modulus.
/// Stress: sigma = 2 S eps + S (E - 2 S) / (3 S - E) tr(eps) I.
struct Material {
  double young_modulus = 71.7e9;
  double shear_modulus = 71.7e9 / (2.0 * 1.33);

  static Material from_poisson(double young, double poisson);
  double poisson_ratio() const { return young_modulus / (2.0 * shear_modulus) - 1.0; }
  /// First Lame parameter S (E - 2S) / (3S - E).
  double lame_lambda() const;
  void validate() const;
};

using ElementMatrix = Eigen::Matrix<double, 12, 12>;
using StrainMatrix = Eigen::Matrix<double, 6, 12>;

/// Shape-function gradients of a P1 tet; row i is grad N_i.
Eigen::Matrix<double, 4, 3> shape_gradients(const std::array<Vec3, 4>& x);

/// Voigt strain-displacement matrix (engineering shear: yz, xz, xy).
StrainMatrix strain_displacement(const Eigen::Matrix<double, 4, 3>& grads);

ElementMatrix element_stiffness(const std::array<Vec3, 4>& x, const Material& mat);

/// Global stiffness without boundary conditions (3 DOFs per node, interleaved).
/// Element matrices are computed in parallel; assembly order is fixed so the
/// result does not depend on the thread count.
SparseMatrix assemble_stiffness_unconstrained(const Mesh& mesh, const Material& mat);
/// Single-threaded reference for the kernel above.
SparseMatrix assemble_stiffness_unconstrained_serial(const Mesh& mesh, const Material& mat);

/// All three DOFs of every aft-tagged node.
std::vector<int> aft_dirichlet_dofs(const Mesh& mesh);

/// Symmetric elimination: zero the rows and columns of the constrained DOFs
/// and put 1 on their diagonal.
SparseMatrix apply_dirichlet(const SparseMatrix& K, const std::vector<int>& dofs);

/// Stiffness with u = 0 imposed on the aft face.
SparseMatrix assemble_stiffness(const Mesh& mesh, const Material& mat);

/// Consistent load map for piecewise-linear pressure on the triangles carrying
/// `tag`. Column j belongs to `column_nodes[j]`. Positive pressure pushes along
/// the inward normal: f = -integral(p n dA).
SparseMatrix assemble_surface_load(const Mesh& mesh, SurfaceTag tag, const std::vector<int>& column_nodes);

/// n_s x n_p map from exterior nodal pressures to nodal forces.
SparseMatrix assemble_pressure_to_force(const Mesh& mesh);

/// Row i reads t^T eps t in sensor i's element.
SparseMatrix assemble_strain_observer(const Mesh& mesh, const std::vector<SensorSpec>& sensors);

/// Sparse SPD factorization of the constrained stiffness. Immutable after
/// construction; solves are reentrant and may run concurrently.
class ForwardSolver {
 public:
  explicit ForwardSolver(const SparseMatrix& A);

  Vector solve(const Vector& f) const;
  /// Column-parallel multi-RHS solve.
  Matrix solve(const Matrix& F) const;
  Index size() const { return n_; }

 private:
  Index n_;
  std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>> llt_;
};

struct StructuralOperators {
  SparseMatrix A;      // constrained stiffness
  SparseMatrix B;      // strain observer
  SparseMatrix C_map;  // pressure -> force, unconstrained (aerodynamic loads)
  std::vector<int> fixed_dofs;
  Index n_s = 0, n_d = 0, n_p = 0;

  /// Zeroes the constrained DOFs of a force vector or matrix.
  Vector constrain(Vector f) const;
  SparseMatrix constrained_loads() const;  // C_map with constrained rows removed
};

StructuralOperators assemble_operators(const Mesh& mesh, const Material& mat, const std::vector<SensorSpec>& sensors);

/// Solves A u = f; f must vanish on constrained DOFs.
Vector solve_forward(const StructuralOperators& ops, const ForwardSolver& solver, const Vector& f);

Vector compute_strain_response(const StructuralOperators& ops, const Vector& u);

enum class P2ORoute { Auto, Forward, Adjoint };

struct P2OMap {
  Matrix Z;  // n_d x n_q
  P2ORoute route = P2ORoute::Auto;
};

/// Z = B A^-1 C. Forward route: one solve per column of C. Adjoint route: one
/// solve per sensor. Auto picks adjoint when n_d < n_q. Solves run in parallel.
P2OMap assemble_p2o(const SparseMatrix& B, const ForwardSolver& solver, const SparseMatrix& C,
                    P2ORoute route = P2ORoute::Auto);
P2OMap assemble_p2o(const SparseMatrix& B, const ForwardSolver& solver, const Matrix& C,
                    P2ORoute route = P2ORoute::Auto);
/// Z for a pressure parameterization p = V q (V is n_p x n_q): C = C_map V
/// with the constrained rows removed.
P2OMap assemble_p2o(const StructuralOperators& ops, const ForwardSolver& solver, const Matrix& pressure_basis,
                    P2ORoute route = P2ORoute::Auto);
/// Z for the full nodal pressure field (q = p).
P2OMap assemble_p2o_full(const StructuralOperators& ops, const ForwardSolver& solver,
                         P2ORoute route = P2ORoute::Auto);
/// Serial reference of the forward route.
Matrix assemble_p2o_serial(const SparseMatrix& B, const ForwardSolver& solver, const Matrix& C);

}  // namespace strainest
