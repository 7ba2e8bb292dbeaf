#include "strainest/elasticity.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

using namespace strainest;
using namespace testing_support;

namespace {

std::array<Vec3, 4> regular_tet() {
  return {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
}

int find_element(const Mesh& m, const Vec3& p) {
  for (std::size_t t = 0; t < m.num_tets(); ++t) {
    const auto bc = barycentric(m, t, p);
    if (*std::min_element(bc.begin(), bc.end()) >= -1e-12) return static_cast<int>(t);
  }
  return -1;
}

SensorSpec sensor_at(const Mesh& m, const Vec3& p, const Vec3& dir, SensorKind kind) {
  SensorSpec s;
  s.position = p;
  s.direction = dir.normalized();
  s.kind = kind;
  s.element = find_element(m, p);
  REQUIRE(s.element >= 0);
  return s;
}

Vector nodal_field(const Mesh& m, const std::function<Vec3(const Vec3&)>& f) {
  Vector u(3 * static_cast<Index>(m.num_nodes()));
  for (std::size_t i = 0; i < m.num_nodes(); ++i) u.segment<3>(3 * static_cast<Index>(i)) = f(m.nodes[i]);
  return u;
}

GeometryParams coarse() {
  GeometryParams p;
  p.target_edge_length = 0.05;
  p.min_dihedral_deg = 5.0;
  return p;
}

struct ShellFixture {
  GeometryParams params = coarse();
  Mesh mesh = make_shell(params);
  std::vector<SensorSpec> sensors = place_sensors(mesh, params, SensorConfig::Config2);
  StructuralOperators ops = assemble_operators(mesh, Material{}, sensors);
  ForwardSolver solver{ops.A};
};

ShellFixture& shell() {
  static ShellFixture f;
  return f;
}

}  // namespace

TEST_CASE("material validation and derived quantities") {
  Material m = Material::from_poisson(200e9, 0.3);
  CHECK(std::abs(m.poisson_ratio() - 0.3) < 1e-14);
  // lambda = E nu / ((1 + nu)(1 - 2 nu))
  CHECK(std::abs(m.lame_lambda() - 200e9 * 0.3 / (1.3 * 0.4)) < 1e-4 * 200e9 * 1e-9);
  Material bad;
  bad.shear_modulus = bad.young_modulus / 3.0;  // 3S - E = 0
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad.shear_modulus = bad.young_modulus;  // nu = -0.5
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("element stiffness annihilates rigid-body modes") {
  const auto x = regular_tet();
  const ElementMatrix K = element_stiffness(x, Material::from_poisson(200e9, 0.3));
  CHECK((K - K.transpose()).norm() <= 1e-14 * K.norm());
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::Matrix<double, 12, 1> t = Eigen::Matrix<double, 12, 1>::Zero();
    for (int a = 0; a < 4; ++a) t[3 * a + axis] = 1.0;
    CHECK((K * t).norm() <= 1e-9 * K.norm() * t.norm());
    Eigen::Matrix<double, 12, 1> r;
    for (int a = 0; a < 4; ++a) r.segment<3>(3 * a) = Vec3::Unit(axis).cross(x[static_cast<std::size_t>(a)]);
    CHECK((K * r).norm() <= 1e-9 * K.norm() * r.norm());
  }
  // Six zero eigenvalues, six positive.
  Eigen::SelfAdjointEigenSolver<ElementMatrix> es(K);
  int zeros = 0;
  for (int i = 0; i < 12; ++i) zeros += es.eigenvalues()[i] < 1e-10 * es.eigenvalues()[11];
  CHECK(zeros == 6);
}

TEST_CASE("degenerate element is an assembly error") {
  std::array<Vec3, 4> flat = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  CHECK_THROWS(element_stiffness(flat, Material{}));
}

TEST_CASE("assembled stiffness is exactly symmetric and positive definite after Dirichlet") {
  const Mesh m = build_box_mesh(2.0, 0.5, 0.5, 8, 2, 2);
  const SparseMatrix K = assemble_stiffness(m, Material{});
  CHECK(Matrix(K - SparseMatrix(K.transpose())).cwiseAbs().maxCoeff() == 0.0);
  CHECK_NOTHROW(ForwardSolver{K});
  // Unconstrained stiffness is singular.
  CHECK_THROWS_AS(ForwardSolver{assemble_stiffness_unconstrained(m, Material{})}, NumericalError);
}

TEST_CASE("cantilever under zero load stays at rest") {
  const Mesh m = build_box_mesh(2.0, 0.5, 0.5, 8, 2, 2);
  const ForwardSolver solver(assemble_stiffness(m, Material{}));
  CHECK(solver.solve(Vector(Vector::Zero(solver.size()))).norm() == 0.0);
}

TEST_CASE("uniaxial bar reproduces t/E") {
  const double E = 200e9, t = 2e6, L = 4.0;
  const Material mat = Material::from_poisson(E, 0.3);
  const Mesh m = build_box_mesh(L, 0.5, 0.5, 16, 2, 2);
  const auto ext = m.exterior_nodes;  // x = L face
  // Tensile traction t pulls along the outward normal, i.e. pressure -t.
  const SparseMatrix Cend = assemble_surface_load(m, SurfaceTag::Exterior, ext);
  const Vector f_full = Cend * Vector::Constant(static_cast<Index>(ext.size()), -t);

  std::vector<SensorSpec> sensors;
  for (double x : {0.3, 1.1, 2.05, 2.9, 3.7})
    sensors.push_back(sensor_at(m, Vec3(x, 0.21, 0.33), Vec3::UnitX(), SensorKind::Axial));
  const SparseMatrix B = assemble_strain_observer(m, sensors);

  SUBCASE("roller support: uniform uniaxial stress everywhere") {
    // x fixed on the aft face, y and z fixed only on the symmetry planes.
    std::vector<int> dofs;
    for (std::size_t i = 0; i < m.num_nodes(); ++i) {
      const Vec3& p = m.nodes[i];
      const int b = 3 * static_cast<int>(i);
      if (p.x() == 0.0) dofs.push_back(b);
      if (p.x() == 0.0 && p.y() == 0.0) dofs.push_back(b + 1);
      if (p.x() == 0.0 && p.z() == 0.0) dofs.push_back(b + 2);
    }
    std::sort(dofs.begin(), dofs.end());
    const SparseMatrix A = apply_dirichlet(assemble_stiffness_unconstrained(m, mat), dofs);
    Vector f = f_full;
    for (int d : dofs) f[d] = 0.0;
    const Vector u = ForwardSolver(A).solve(f);
    const Vector y = B * u;
    for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - t / E) <= 0.01 * t / E);
  }

  SUBCASE("clamped end: far-field strain") {
    StructuralOperators ops = assemble_operators(m, mat, sensors);
    const ForwardSolver solver(ops.A);
    const Vector u = solve_forward(ops, solver, ops.constrain(f_full));
    const Vector y = compute_strain_response(ops, u);
    // Beyond one bar width from the clamp the Poisson restraint has decayed.
    for (Index i = 1; i < y.size(); ++i) CHECK(std::abs(y[i] - t / E) <= 0.01 * t / E);
    // Linearity.
    const Vector y3 = compute_strain_response(ops, solve_forward(ops, solver, ops.constrain(3.0 * f_full)));
    CHECK((y3 - 3.0 * y).norm() <= 1e-12 * y3.norm());
  }
}

namespace {

Mesh make_mesh(std::vector<Vec3> nodes, std::vector<std::array<int, 4>> tets) {
  Mesh m;
  m.nodes = std::move(nodes);
  for (auto t : tets) {
    const auto& x = m.nodes;
    const double v = (x[t[1]] - x[t[0]]).cross(x[t[2]] - x[t[0]]).dot(x[t[3]] - x[t[0]]);
    if (v < 0) std::swap(t[2], t[3]);
    m.tets.push_back(t);
  }
  return m;
}

// Solves K u = 0 with u prescribed on every node except `free_nodes`.
Vector solve_with_prescribed(const Mesh& m, const Material& mat, const Vector& u_bc, const std::vector<int>& free_nodes) {
  const SparseMatrix K = assemble_stiffness_unconstrained(m, mat);
  std::vector<int> dofs;
  std::vector<char> is_free(m.num_nodes(), 0);
  for (int n : free_nodes) is_free[static_cast<std::size_t>(n)] = 1;
  Vector u_fixed = Vector::Zero(K.rows());
  for (std::size_t i = 0; i < m.num_nodes(); ++i)
    if (!is_free[i])
      for (int c = 0; c < 3; ++c) {
        const int d = 3 * static_cast<int>(i) + c;
        dofs.push_back(d);
        u_fixed[d] = u_bc[d];
      }
  // Lift the prescribed values into the right-hand side.
  Vector f = -(K * u_fixed);
  for (int d : dofs) f[d] = u_fixed[d];
  return ForwardSolver(apply_dirichlet(K, dofs)).solve(f);
}

}  // namespace

TEST_CASE("two-element patch reproduces a uniform strain exactly") {
  const Mesh m = make_mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(0.9, 0.8, 0.7)},
                           {{0, 1, 2, 3}, {1, 2, 3, 4}});
  const Eigen::Matrix3d G = random_matrix(3, 3, 7) * 1e-3;
  const Vec3 c(1e-3, -2e-3, 5e-4);
  const Vector u_lin = nodal_field(m, [&](const Vec3& x) { return Vec3(c + G * x); });
  const Eigen::Matrix3d eps = 0.5 * (G + G.transpose());

  const Vector u = solve_with_prescribed(m, Material{}, u_lin, {});
  CHECK((u - u_lin).norm() <= 1e-9 * u_lin.norm());
  for (std::size_t t = 0; t < 2; ++t) {
    Vec3 centre = Vec3::Zero();
    for (int v : m.tets[t]) centre += m.nodes[static_cast<std::size_t>(v)] / 4.0;
    for (int axis = 0; axis < 3; ++axis) {
      std::vector<SensorSpec> s{sensor_at(m, centre, Vec3::Unit(axis), SensorKind::Axial)};
      s[0].element = static_cast<int>(t);
      const double read = (assemble_strain_observer(m, s) * u)[0];
      CHECK(std::abs(read - eps(axis, axis)) <= 1e-9 * eps.norm());
    }
    // Off-axis direction t^T eps t.
    const Vec3 dir = Vec3(1, 2, -1).normalized();
    std::vector<SensorSpec> s{sensor_at(m, centre, dir, SensorKind::Axial)};
    s[0].element = static_cast<int>(t);
    CHECK(std::abs((assemble_strain_observer(m, s) * u)[0] - dir.dot(eps * dir)) <= 1e-9 * eps.norm());
  }
}

TEST_CASE("patch with an interior node reproduces a linear field to 1e-9") {
  std::vector<Vec3> nodes;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) nodes.emplace_back(i, j, k);
  nodes.emplace_back(0.45, 0.55, 0.5);  // interior node, deliberately off-centre
  const int c = 8;
  auto id = [](int i, int j, int k) { return 4 * k + 2 * j + i; };
  std::vector<std::array<int, 4>> tets;
  // Two triangles per cube face, each coned to the interior node.
  const int faces[6][4] = {{id(0, 0, 0), id(1, 0, 0), id(1, 1, 0), id(0, 1, 0)}, {id(0, 0, 1), id(1, 0, 1), id(1, 1, 1), id(0, 1, 1)},
                           {id(0, 0, 0), id(1, 0, 0), id(1, 0, 1), id(0, 0, 1)}, {id(0, 1, 0), id(1, 1, 0), id(1, 1, 1), id(0, 1, 1)},
                           {id(0, 0, 0), id(0, 1, 0), id(0, 1, 1), id(0, 0, 1)}, {id(1, 0, 0), id(1, 1, 0), id(1, 1, 1), id(1, 0, 1)}};
  for (const auto& f : faces) {
    tets.push_back({f[0], f[1], f[2], c});
    tets.push_back({f[0], f[2], f[3], c});
  }
  const Mesh m = make_mesh(nodes, tets);
  double vol = 0.0;
  for (std::size_t t = 0; t < m.num_tets(); ++t) {
    REQUIRE(m.tet_volume(t) > 0.0);
    vol += m.tet_volume(t);
  }
  REQUIRE(std::abs(vol - 1.0) < 1e-14);

  const Eigen::Matrix3d G = random_matrix(3, 3, 11) * 1e-3;
  const Vector u_lin = nodal_field(m, [&](const Vec3& x) { return Vec3(G * x + Vec3(1e-4, 0, 2e-4)); });
  const Vector u = solve_with_prescribed(m, Material::from_poisson(200e9, 0.3), u_lin, {c});
  CHECK((u.segment<3>(3 * c) - u_lin.segment<3>(3 * c)).norm() <= 1e-9 * u_lin.segment<3>(3 * c).norm());
}

TEST_CASE("consistent pressure load on a single triangle") {
  Mesh m = make_mesh({Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 3, 0), Vec3(0.3, 0.4, -1.0)}, {{0, 1, 2, 3}});
  extract_boundary(m);
  Vec3 n_face = Vec3::Zero();
  for (auto& tri : m.surface) {
    const Vec3 cen = m.centroid(tri);
    if (std::abs(cen.z()) < 1e-14) {
      tri.tag = SurfaceTag::Exterior;
      n_face = m.area_normal(tri);
    } else {
      tri.tag = SurfaceTag::Interior;
    }
  }
  refresh_exterior_nodes(m);
  REQUIRE(m.exterior_nodes == std::vector<int>{0, 1, 2});
  // Outward normal of the z = 0 face is +z since the apex sits below it.
  CHECK((n_face - Vec3(0, 0, 3.0)).norm() < 1e-14);
  const double p = 5.0, area = 3.0;
  const SparseMatrix C = assemble_pressure_to_force(m);
  const Vector f = C * Vector::Constant(3, p);
  for (int v = 0; v < 3; ++v) CHECK((f.segment<3>(3 * v) - (-p * area / 3.0) * Vec3::UnitZ()).norm() < 1e-13);
  CHECK(f.segment<3>(9).norm() == 0.0);
  CHECK((C * Vector::Zero(3)).norm() == 0.0);
  // Linear pressure: vertex i receives -A n (2 p_i + p_j + p_k) / 12.
  const Vector pl = (Vector(3) << 1.0, 2.0, 4.0).finished();
  const Vector fl = C * pl;
  const double sum = pl.sum();
  for (int v = 0; v < 3; ++v)
    CHECK((fl.segment<3>(3 * v) + area * Vec3::UnitZ() * (pl[v] + sum) / 12.0).norm() < 1e-13);
}

TEST_CASE("pressure load on the shell: closure and quadrature oracle") {
  auto& f = shell();
  const Mesh& m = f.mesh;
  const SparseMatrix& C = f.ops.C_map;
  CHECK(C.rows() == 3 * static_cast<Index>(m.num_nodes()));
  CHECK(C.cols() == static_cast<Index>(m.exterior_nodes.size()));

  // Columns only touch DOFs of nodes on exterior triangles.
  std::vector<char> on_exterior(m.num_nodes(), 0);
  for (const auto& tri : m.surface)
    if (tri.tag == SurfaceTag::Exterior)
      for (int v : tri.nodes) on_exterior[static_cast<std::size_t>(v)] = 1;
  for (Index k = 0; k < C.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(C, k); it; ++it) REQUIRE(on_exterior[static_cast<std::size_t>(it.row() / 3)]);

  // Uniform pressure on exterior + aft gives zero net force.
  const auto aft = m.nodes_with_tag(SurfaceTag::Aft);
  const SparseMatrix Caft = assemble_surface_load(m, SurfaceTag::Aft, aft);
  const double p = 1.0e5;
  const Vector fe = C * Vector::Constant(C.cols(), p) + Caft * Vector::Constant(Caft.cols(), p);
  Vec3 net = Vec3::Zero();
  double area = 0.0;
  for (std::size_t i = 0; i < m.num_nodes(); ++i) net += fe.segment<3>(3 * static_cast<Index>(i));
  for (const auto& tri : m.surface)
    if (tri.tag == SurfaceTag::Exterior || tri.tag == SurfaceTag::Aft) area += m.area_normal(tri).norm();
  CHECK(net.norm() <= 1e-8 * p * area);

  // Total force vs edge-midpoint quadrature of -int p n dA for random nodal p.
  const Vector pr = random_vector(C.cols(), 5).array().abs() * 1e4;
  std::vector<double> nodal(m.num_nodes(), 0.0);
  for (std::size_t j = 0; j < m.exterior_nodes.size(); ++j) nodal[static_cast<std::size_t>(m.exterior_nodes[j])] = pr[static_cast<Index>(j)];
  Vec3 oracle = Vec3::Zero();
  for (const auto& tri : m.surface) {
    if (tri.tag != SurfaceTag::Exterior) continue;
    const double a = nodal[static_cast<std::size_t>(tri.nodes[0])], b = nodal[static_cast<std::size_t>(tri.nodes[1])],
                 c = nodal[static_cast<std::size_t>(tri.nodes[2])];
    const double mean = ((a + b) / 2 + (b + c) / 2 + (c + a) / 2) / 3.0;
    oracle -= mean * m.area_normal(tri);
  }
  const Vector fr = C * pr;
  Vec3 total = Vec3::Zero();
  for (std::size_t i = 0; i < m.num_nodes(); ++i) total += fr.segment<3>(3 * static_cast<Index>(i));
  CHECK((total - oracle).norm() <= 1e-10 * oracle.norm());
}

TEST_CASE("strain observer reads analytic strains") {
  auto& f = shell();
  const Mesh& m = f.mesh;
  const SparseMatrix& B = f.ops.B;
  CHECK(B.rows() == 54);
  // Each row touches the 12 DOFs of one element.
  const SparseMatrix& Br = B;
  std::vector<std::set<Index>> cols(static_cast<std::size_t>(B.rows()));
  for (Index k = 0; k < Br.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(Br, k); it; ++it) cols[static_cast<std::size_t>(it.row())].insert(it.col() / 3);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const auto& tet = m.tets[static_cast<std::size_t>(f.sensors[i].element)];
    for (Index node : cols[i]) CHECK(std::find(tet.begin(), tet.end(), static_cast<int>(node)) != tet.end());
  }

  const double a = 3e-4;
  const Vector y = B * nodal_field(m, [&](const Vec3& x) { return Vec3(a * x.x(), 0, 0); });
  for (std::size_t i = 0; i < f.sensors.size(); ++i) {
    if (f.sensors[i].kind == SensorKind::Axial)
      CHECK(std::abs(y[static_cast<Index>(i)] - a) <= 1e-10);
    else
      CHECK(std::abs(y[static_cast<Index>(i)]) <= 1e-10);
  }
  const Vec3 w(1e-3, -2e-3, 4e-3), t0(1e-3, 0, 0);
  const Vector yr = B * nodal_field(m, [&](const Vec3& x) { return Vec3(t0 + w.cross(x)); });
  CHECK(yr.cwiseAbs().maxCoeff() <= 1e-9 * 4e-3);
  CHECK((B * Vector::Zero(B.cols())).norm() == 0.0);

  std::vector<SensorSpec> bad = f.sensors;
  bad[0].element = static_cast<int>(m.num_tets());
  CHECK_THROWS_AS(assemble_strain_observer(m, bad), ParameterError);
}

TEST_CASE("forward solver on small systems") {
  SparseMatrix A(2, 2);
  A.insert(0, 0) = 2.0;
  A.insert(1, 1) = 2.0;
  const ForwardSolver s(A);
  const Vector u = s.solve(Vector((Vector(2) << 2.0, 4.0).finished()));
  CHECK(std::abs(u[0] - 1.0) < 1e-15);
  CHECK(std::abs(u[1] - 2.0) < 1e-15);
  CHECK(s.solve(Vector(Vector::Zero(2))).norm() == 0.0);

  const Matrix M = random_matrix(50, 50, 9);
  const Matrix D = M.transpose() * M + Matrix::Identity(50, 50);
  const SparseMatrix Ds = D.sparseView();
  const ForwardSolver s50(Ds);
  const Vector f = random_vector(50, 10);
  CHECK((D * s50.solve(f) - f).norm() <= 1e-10 * f.norm());
  const Matrix F = random_matrix(50, 7, 12);
  CHECK((D * s50.solve(F) - F).norm() <= 1e-10 * F.norm());

  SparseMatrix Ind(2, 2);
  Ind.insert(0, 0) = 1.0;
  Ind.insert(1, 1) = -1.0;
  CHECK_THROWS_AS(ForwardSolver{Ind}, NumericalError);
}

TEST_CASE("shell solve residual") {
  auto& f = shell();
  const Vector p = random_vector(f.ops.n_p, 13).array().abs() * 1e4;
  const Vector force = f.ops.constrain(f.ops.C_map * p);
  const Vector u = solve_forward(f.ops, f.solver, force);
  CHECK((f.ops.A * u - force).norm() <= 1e-10 * force.norm());
}

TEST_CASE("parameter-to-observable map") {
  SUBCASE("identity operators") {
    SparseMatrix I(4, 4);
    I.setIdentity();
    const ForwardSolver s(I);
    for (auto route : {P2ORoute::Forward, P2ORoute::Adjoint}) {
      const Matrix Z = assemble_p2o(I, s, Matrix(Matrix::Identity(4, 4)), route).Z;
      CHECK((Z - Matrix::Identity(4, 4)).norm() < 1e-15);
    }
  }
  SUBCASE("routes and composition agree on the shell") {
    auto& f = shell();
    const Matrix V = random_matrix(f.ops.n_p, 12, 14);
    const auto fw = assemble_p2o(f.ops, f.solver, V, P2ORoute::Forward);
    const auto ad = assemble_p2o(f.ops, f.solver, V, P2ORoute::Adjoint);
    const auto au = assemble_p2o(f.ops, f.solver, V, P2ORoute::Auto);
    CHECK(fw.route == P2ORoute::Forward);
    CHECK(ad.route == P2ORoute::Adjoint);
    CHECK(au.route == P2ORoute::Forward);  // n_q = 12 < n_d = 54
    CHECK((fw.Z - ad.Z).cwiseAbs().maxCoeff() <= 1e-9 * fw.Z.cwiseAbs().maxCoeff());
    const Vector q = random_vector(12, 15);
    const Vector direct =
        compute_strain_response(f.ops, solve_forward(f.ops, f.solver, f.ops.constrain(f.ops.C_map * (V * q))));
    CHECK((fw.Z * q - direct).norm() <= 1e-10 * direct.norm());
    // Serial reference.
    const Matrix C = f.ops.constrained_loads() * V;
    CHECK((assemble_p2o_serial(f.ops.B, f.solver, C) - fw.Z).norm() <= 1e-12 * fw.Z.norm());
  }
}
