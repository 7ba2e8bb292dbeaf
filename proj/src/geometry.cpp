#include "strainest/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

namespace strainest {

namespace {

constexpr double kPi = std::numbers::pi;

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

double distance_to_segment(double x, double r, const ShellGeometry::Segment& s) {
  const double dx = s.x1 - s.x0, dr = s.r1 - s.r0;
  const double len2 = dx * dx + dr * dr;
  double t = len2 > 0 ? ((x - s.x0) * dx + (r - s.r0) * dr) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(x - (s.x0 + t * dx), r - (s.r0 + t * dr));
}

// Appends the tetrahedra of the prism bottom (p0,p1,p2) / top (p3,p4,p5),
// choosing each quad-face diagonal through that face's smallest global index.
void split_prism(std::array<int, 6> v, std::vector<std::array<int, 4>>& out) {
  const int imin = static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
  if (imin >= 3) {
    std::swap(v[0], v[3]);
    std::swap(v[1], v[4]);
    std::swap(v[2], v[5]);
  }
  const int base = imin % 3;
  const std::array<int, 6> p = {v[base], v[(base + 1) % 3], v[(base + 2) % 3],
                                v[3 + base], v[3 + (base + 1) % 3], v[3 + (base + 2) % 3]};
  out.push_back({p[0], p[3], p[4], p[5]});
  const int face_min = std::min({p[1], p[2], p[4], p[5]});
  if (face_min == p[1] || face_min == p[5]) {
    out.push_back({p[0], p[1], p[2], p[5]});
    out.push_back({p[0], p[1], p[5], p[4]});
  } else {
    out.push_back({p[0], p[1], p[2], p[4]});
    out.push_back({p[0], p[2], p[5], p[4]});
  }
}

void orient_positive(Mesh& mesh) {
  for (auto& t : mesh.tets) {
    if (signed_volume(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]], mesh.nodes[t[3]]) < 0)
      std::swap(t[2], t[3]);
  }
}

}  // namespace

void GeometryParams::validate() const {
  require(body_length > 0 && nose_length > 0 && outer_radius > 0 && wall_thickness > 0 &&
              target_edge_length > 0 && nose_tip_radius > 0,
          "geometry parameters must all be positive");
  require(wall_thickness < outer_radius, "wall_thickness must be smaller than outer_radius");
  require(nose_tip_radius < outer_radius, "nose_tip_radius must be smaller than outer_radius");
  require(2 * wall_thickness < body_length, "body too short for the wall thickness");
  const double tan_c = (outer_radius - nose_tip_radius) / nose_length;
  const double inner_tip = nose_tip_radius + tan_c * wall_thickness - wall_thickness * std::sqrt(1 + tan_c * tan_c);
  require(inner_tip > 0.1 * wall_thickness, "nose_tip_radius too small: the nose cavity would close");
  require(min_dihedral_deg >= 0 && min_dihedral_deg < 60, "min_dihedral_deg out of range");
}

const char* to_string(SurfaceTag tag) {
  switch (tag) {
    case SurfaceTag::Exterior:
      return "exterior";
    case SurfaceTag::Interior:
      return "interior";
    case SurfaceTag::Aft:
      return "aft";
    default:
      return "untagged";
  }
}

SurfaceTag surface_tag_from_string(const std::string& s) {
  if (s == "exterior") return SurfaceTag::Exterior;
  if (s == "interior") return SurfaceTag::Interior;
  if (s == "aft") return SurfaceTag::Aft;
  if (s == "untagged") return SurfaceTag::Untagged;
  throw FormatError("unknown surface tag '" + s + "'");
}

bool Mesh::tagged() const {
  return !surface.empty() &&
         std::all_of(surface.begin(), surface.end(), [](const auto& t) { return t.tag != SurfaceTag::Untagged; });
}

double Mesh::tet_volume(std::size_t t) const {
  const auto& e = tets[t];
  return signed_volume(nodes[e[0]], nodes[e[1]], nodes[e[2]], nodes[e[3]]);
}

double Mesh::total_volume() const {
  double v = 0;
  for (std::size_t t = 0; t < tets.size(); ++t) v += tet_volume(t);
  return v;
}

std::vector<int> Mesh::nodes_with_tag(SurfaceTag tag) const {
  std::vector<int> out;
  for (const auto& tri : surface)
    if (tri.tag == tag) out.insert(out.end(), tri.nodes.begin(), tri.nodes.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> Mesh::triangles_with_tag(SurfaceTag tag) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < surface.size(); ++i)
    if (surface[i].tag == tag) out.push_back(static_cast<int>(i));
  return out;
}

Vec3 Mesh::area_normal(const SurfaceTriangle& tri) const {
  const Vec3& a = nodes[tri.nodes[0]];
  return 0.5 * (nodes[tri.nodes[1]] - a).cross(nodes[tri.nodes[2]] - a);
}

Vec3 Mesh::centroid(const SurfaceTriangle& tri) const {
  return (nodes[tri.nodes[0]] + nodes[tri.nodes[1]] + nodes[tri.nodes[2]]) / 3.0;
}

// ---------------------------------------------------------------------------

ShellGeometry::ShellGeometry(const GeometryParams& params) : p_(params) {
  p_.validate();
  const double R = p_.outer_radius, t = p_.wall_thickness, L = p_.total_length();
  const double tan_c = (R - p_.nose_tip_radius) / p_.nose_length;
  cone_half_angle_ = std::atan(tan_c);
  const double offset = t / std::cos(cone_half_angle_);  // radial shift giving normal distance t
  inner_tip_radius_ = p_.nose_tip_radius + tan_c * t - offset;
  inner_kink_x_ = (R - t - p_.nose_tip_radius + offset) / tan_c;

  using S = SurfaceTag;
  segments_ = {
      {0.0, 0.0, 0.0, p_.nose_tip_radius, S::Exterior},
      {0.0, p_.nose_tip_radius, p_.nose_length, R, S::Exterior},
      {p_.nose_length, R, L, R, S::Exterior},
      {L, R, L, 0.0, S::Aft},
      {t, 0.0, t, inner_tip_radius_, S::Interior},
      {t, inner_tip_radius_, inner_kink_x_, R - t, S::Interior},
      {inner_kink_x_, R - t, L - t, R - t, S::Interior},
      {L - t, R - t, L - t, 0.0, S::Interior},
  };
}

double ShellGeometry::outer_radius_at(double x) const {
  if (x >= p_.nose_length) return p_.outer_radius;
  return p_.nose_tip_radius + (p_.outer_radius - p_.nose_tip_radius) * std::max(x, 0.0) / p_.nose_length;
}

double ShellGeometry::distance_to(const Vec3& point, SurfaceTag tag) const {
  const double r = std::hypot(point.y(), point.z());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : segments_)
    if (s.tag == tag) best = std::min(best, distance_to_segment(point.x(), r, s));
  return best;
}

double ShellGeometry::solid_volume() const {
  auto frustum = [](double h, double r1, double r2) { return kPi * h * (r1 * r1 + r1 * r2 + r2 * r2) / 3.0; };
  const double R = p_.outer_radius, t = p_.wall_thickness, L = p_.total_length();
  const double outer = frustum(p_.nose_length, p_.nose_tip_radius, R) + kPi * R * R * p_.body_length;
  const double ri = R - t;
  const double cavity = frustum(inner_kink_x_ - t, inner_tip_radius_, ri) + kPi * ri * ri * (L - t - inner_kink_x_);
  return outer - cavity;
}

// ---------------------------------------------------------------------------

namespace {

struct SurfaceBuilder {
  std::vector<Vec3> outer, inner;
  std::vector<std::array<int, 4>> quads;

  int add(const Vec3& o, const Vec3& i) {
    outer.push_back(o);
    inner.push_back(i);
    return static_cast<int>(outer.size()) - 1;
  }
};

struct CapGeometry {
  double x_outer, rho_outer, x_inner, rho_inner;
};

// Square-block nodes of an O-grid cap, (n+1)^2 in row-major (i along y).
std::vector<int> add_cap_square(SurfaceBuilder& sb, const CapGeometry& cap, int n) {
  std::vector<int> ids((n + 1) * (n + 1));
  const double ao = 0.5 * cap.rho_outer, ai = 0.5 * cap.rho_inner;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) {
      const double u = -1.0 + 2.0 * i / n, v = -1.0 + 2.0 * j / n;
      ids[j * (n + 1) + i] = sb.add(Vec3(cap.x_outer, ao * u, ao * v), Vec3(cap.x_inner, ai * u, ai * v));
    }
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int a = ids[j * (n + 1) + i];
      sb.quads.push_back({a, ids[j * (n + 1) + i + 1], ids[(j + 1) * (n + 1) + i + 1], ids[(j + 1) * (n + 1) + i]});
    }
  return ids;
}

// Perimeter of the square block, counter-clockwise in (y, z) from (-a, -a).
std::vector<int> square_perimeter(const std::vector<int>& sq, int n) {
  std::vector<int> ring;
  ring.reserve(4 * n);
  auto at = [&](int i, int j) { return sq[j * (n + 1) + i]; };
  for (int l = 0; l < n; ++l) ring.push_back(at(l, 0));
  for (int l = 0; l < n; ++l) ring.push_back(at(n, l));
  for (int l = 0; l < n; ++l) ring.push_back(at(n - l, n));
  for (int l = 0; l < n; ++l) ring.push_back(at(0, n - l));
  return ring;
}

double ring_angle(int l, int n_theta) { return -0.75 * kPi + 2.0 * kPi * l / n_theta; }

std::vector<int> add_circle_ring(SurfaceBuilder& sb, int n_theta, double xo, double ro, double xi, double ri) {
  std::vector<int> ring(n_theta);
  for (int l = 0; l < n_theta; ++l) {
    const double th = ring_angle(l, n_theta);
    ring[l] = sb.add(Vec3(xo, ro * std::cos(th), ro * std::sin(th)), Vec3(xi, ri * std::cos(th), ri * std::sin(th)));
  }
  return ring;
}

// Blend from the square perimeter (w = 0) to the rim circle (w = 1).
std::vector<int> add_blend_ring(SurfaceBuilder& sb, const std::vector<int>& perimeter, const CapGeometry& cap,
                                double w) {
  const int n_theta = static_cast<int>(perimeter.size());
  std::vector<int> ring(n_theta);
  for (int l = 0; l < n_theta; ++l) {
    const double th = ring_angle(l, n_theta);
    const Vec3 so = sb.outer[perimeter[l]], si = sb.inner[perimeter[l]];
    const Vec3 co(cap.x_outer, cap.rho_outer * std::cos(th), cap.rho_outer * std::sin(th));
    const Vec3 ci(cap.x_inner, cap.rho_inner * std::cos(th), cap.rho_inner * std::sin(th));
    ring[l] = sb.add((1 - w) * so + w * co, (1 - w) * si + w * ci);
  }
  return ring;
}

void connect_rings(SurfaceBuilder& sb, const std::vector<int>& a, const std::vector<int>& b) {
  const int n = static_cast<int>(a.size());
  for (int l = 0; l < n; ++l) {
    const int m = (l + 1) % n;
    sb.quads.push_back({a[l], a[m], b[m], b[l]});
  }
}

}  // namespace

Mesh build_shell_mesh(const GeometryParams& params) {
  const ShellGeometry geo(params);
  const double R = params.outer_radius, t = params.wall_thickness, L = params.total_length();
  const double h = params.target_edge_length;

  // Azimuthal count is a multiple of 8 so that nodes fall on the y and z axes.
  const int n_theta = 8 * std::max(2, static_cast<int>(std::lround(2 * kPi * R / (8 * h))));
  const int n_side = n_theta / 4;
  const double slant = std::hypot(params.nose_length, R - params.nose_tip_radius);
  const int n_cone = std::max(2, static_cast<int>(std::lround(slant / h)));
  const int n_cyl = std::max(2, static_cast<int>(std::lround(params.body_length / h)));
  const int n_layers = std::max(1, static_cast<int>(std::lround(t / h)));
  auto cap_rings = [&](double rho) {
    const double arc = 2 * kPi * rho / n_theta;
    return std::max(1, static_cast<int>(std::lround(0.5 * rho / arc)));
  };

  SurfaceBuilder sb;
  std::vector<std::vector<int>> rings;

  const CapGeometry front{0.0, params.nose_tip_radius, geo.inner_front_x(), geo.inner_front_radius()};
  const auto front_sq = add_cap_square(sb, front, n_side);
  const auto front_perim = square_perimeter(front_sq, n_side);
  rings.push_back(front_perim);
  const int m_front = cap_rings(params.nose_tip_radius);
  for (int k = 1; k < m_front; ++k) rings.push_back(add_blend_ring(sb, front_perim, front, double(k) / m_front));

  // Lateral stations: cone then cylinder; the outer and cavity profiles share
  // station counts so every surface node has a through-wall partner.
  for (int j = 0; j <= n_cone; ++j) {
    const double s = double(j) / n_cone;
    const double xo = params.nose_length * s;
    const double ro = params.nose_tip_radius + (R - params.nose_tip_radius) * s;
    const double xi = geo.inner_front_x() + (geo.inner_kink_x() - geo.inner_front_x()) * s;
    const double ri = geo.inner_front_radius() + (R - t - geo.inner_front_radius()) * s;
    rings.push_back(add_circle_ring(sb, n_theta, xo, ro, xi, ri));
  }
  for (int j = 1; j <= n_cyl; ++j) {
    const double s = double(j) / n_cyl;
    const double xo = params.nose_length + params.body_length * s;
    const double xi = geo.inner_kink_x() + (L - t - geo.inner_kink_x()) * s;
    rings.push_back(add_circle_ring(sb, n_theta, xo, R, xi, R - t));
  }

  const CapGeometry aft{L, R, L - t, R - t};
  const auto aft_sq = add_cap_square(sb, aft, n_side);
  const auto aft_perim = square_perimeter(aft_sq, n_side);
  const int m_aft = cap_rings(R);
  for (int k = m_aft - 1; k >= 1; --k) rings.push_back(add_blend_ring(sb, aft_perim, aft, double(k) / m_aft));
  rings.push_back(aft_perim);

  for (std::size_t k = 0; k + 1 < rings.size(); ++k) connect_rings(sb, rings[k], rings[k + 1]);

  // Extrude through the wall: layer 0 is the outer surface.
  const int ns = static_cast<int>(sb.outer.size());
  Mesh mesh;
  mesh.kink_x = params.nose_length;
  mesh.nodes.reserve(static_cast<std::size_t>(ns) * (n_layers + 1));
  for (int k = 0; k <= n_layers; ++k) {
    const double w = double(k) / n_layers;
    for (int s = 0; s < ns; ++s) mesh.nodes.push_back((1 - w) * sb.outer[s] + w * sb.inner[s]);
  }
  for (const auto& q : sb.quads) {
    // Split the quad through its smallest-index corner.
    std::array<std::array<int, 3>, 2> tris;
    if (std::min(q[0], q[2]) < std::min(q[1], q[3]))
      tris = {{{q[0], q[1], q[2]}, {q[0], q[2], q[3]}}};
    else
      tris = {{{q[0], q[1], q[3]}, {q[1], q[2], q[3]}}};
    for (const auto& tri : tris)
      for (int k = 0; k < n_layers; ++k) {
        const int lo = k * ns, hi = (k + 1) * ns;
        split_prism({tri[0] + lo, tri[1] + lo, tri[2] + lo, tri[0] + hi, tri[1] + hi, tri[2] + hi}, mesh.tets);
      }
  }
  orient_positive(mesh);
  for (std::size_t e = 0; e < mesh.tets.size(); ++e)
    if (!(mesh.tet_volume(e) > 0)) throw NumericalError("mesher produced a degenerate tetrahedron");

  extract_boundary(mesh);
  const double q = min_dihedral_angle_deg(mesh);
  if (q < params.min_dihedral_deg)
    throw NumericalError("mesh quality below floor: min dihedral " + std::to_string(q) + " deg < " +
                         std::to_string(params.min_dihedral_deg));
  return mesh;
}

void extract_boundary(Mesh& mesh) {
  struct Face {
    std::array<int, 3> key;
    int tet;
    int local;
  };
  static constexpr int kFaces[4][4] = {{1, 2, 3, 0}, {0, 3, 2, 1}, {0, 1, 3, 2}, {0, 2, 1, 3}};
  std::vector<Face> faces;
  faces.reserve(mesh.tets.size() * 4);
  for (std::size_t t = 0; t < mesh.tets.size(); ++t)
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> key = {mesh.tets[t][kFaces[f][0]], mesh.tets[t][kFaces[f][1]], mesh.tets[t][kFaces[f][2]]};
      std::sort(key.begin(), key.end());
      faces.push_back({key, static_cast<int>(t), f});
    }
  std::sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) {
    return std::tie(a.key, a.tet) < std::tie(b.key, b.tet);
  });
  mesh.surface.clear();
  for (std::size_t i = 0; i < faces.size();) {
    std::size_t j = i;
    while (j < faces.size() && faces[j].key == faces[i].key) ++j;
    if (j - i > 2) throw NumericalError("non-manifold mesh: face shared by more than two tets");
    if (j - i == 1) {
      const auto& tet = mesh.tets[faces[i].tet];
      const auto* lf = kFaces[faces[i].local];
      SurfaceTriangle tri{{tet[lf[0]], tet[lf[1]], tet[lf[2]]}, SurfaceTag::Untagged, faces[i].tet};
      const Vec3& a = mesh.nodes[tri.nodes[0]];
      const Vec3 n = (mesh.nodes[tri.nodes[1]] - a).cross(mesh.nodes[tri.nodes[2]] - a);
      if (n.dot(mesh.nodes[tet[lf[3]]] - a) > 0) std::swap(tri.nodes[1], tri.nodes[2]);
      mesh.surface.push_back(tri);
    }
    i = j;
  }
  mesh.exterior_nodes.clear();
}

void refresh_exterior_nodes(Mesh& mesh) { mesh.exterior_nodes = mesh.nodes_with_tag(SurfaceTag::Exterior); }

void tag_boundaries(Mesh& mesh, const GeometryParams& params) {
  const ShellGeometry geo(params);
  const double tol = 0.45 * params.wall_thickness;
  for (auto& tri : mesh.surface) {
    const Vec3 c = mesh.centroid(tri);
    SurfaceTag best = SurfaceTag::Untagged;
    double best_d = std::numeric_limits<double>::infinity();
    for (SurfaceTag tag : {SurfaceTag::Exterior, SurfaceTag::Aft, SurfaceTag::Interior}) {
      const double d = geo.distance_to(c, tag);
      if (d < best_d) {
        best_d = d;
        best = tag;
      }
    }
    if (best_d > tol)
      throw NumericalError("untaggable boundary triangle at (" + std::to_string(c.x()) + ", " +
                           std::to_string(c.y()) + ", " + std::to_string(c.z()) + "): distance " +
                           std::to_string(best_d) + " exceeds " + std::to_string(tol));
    tri.tag = best;
  }
  refresh_exterior_nodes(mesh);
}

Mesh make_shell(const GeometryParams& params) {
  Mesh mesh = build_shell_mesh(params);
  tag_boundaries(mesh, params);
  return mesh;
}

Mesh build_box_mesh(double lx, double ly, double lz, int nx, int ny, int nz) {
  require(lx > 0 && ly > 0 && lz > 0 && nx > 0 && ny > 0 && nz > 0, "box mesh: invalid dimensions");
  Mesh mesh;
  auto id = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) mesh.nodes.emplace_back(lx * i / nx, ly * j / ny, lz * k / nz);
  // Kuhn subdivision about the (0,0,0)-(1,1,1) diagonal; conforming for a
  // uniformly oriented structured grid.
  static constexpr int kKuhn[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                                      {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        std::array<int, 8> v;
        for (int c = 0; c < 8; ++c) v[c] = id(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
        for (const auto& t : kKuhn) mesh.tets.push_back({v[t[0]], v[t[1]], v[t[2]], v[t[3]]});
      }
  orient_positive(mesh);
  extract_boundary(mesh);
  const double eps = 1e-12 * lx;
  for (auto& tri : mesh.surface) {
    const Vec3 c = mesh.centroid(tri);
    if (c.x() < eps)
      tri.tag = SurfaceTag::Aft;
    else if (c.x() > lx - eps)
      tri.tag = SurfaceTag::Exterior;
    else
      tri.tag = SurfaceTag::Interior;
  }
  refresh_exterior_nodes(mesh);
  return mesh;
}

double min_dihedral_angle_deg(const Mesh& mesh) {
  static constexpr int kEdges[6][4] = {{0, 1, 2, 3}, {0, 2, 1, 3}, {0, 3, 1, 2},
                                       {1, 2, 0, 3}, {1, 3, 0, 2}, {2, 3, 0, 1}};
  double best = 180.0;
  for (const auto& t : mesh.tets) {
    for (const auto& e : kEdges) {
      const Vec3& a = mesh.nodes[t[e[0]]];
      const Vec3 axis = (mesh.nodes[t[e[1]]] - a).normalized();
      Vec3 u = mesh.nodes[t[e[2]]] - a, v = mesh.nodes[t[e[3]]] - a;
      u -= u.dot(axis) * axis;
      v -= v.dot(axis) * axis;
      const double c = std::clamp(u.normalized().dot(v.normalized()), -1.0, 1.0);
      best = std::min(best, std::acos(c) * 180.0 / kPi);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

const char* to_string(SensorKind kind) { return kind == SensorKind::Axial ? "axial" : "circumferential"; }

SensorConfig sensor_config_from_string(const std::string& s) {
  if (s == "config1" || s == "Config1" || s == "1") return SensorConfig::Config1;
  if (s == "config2" || s == "Config2" || s == "2") return SensorConfig::Config2;
  throw ParameterError("unknown sensor configuration '" + s + "'");
}

std::array<double, 4> barycentric(const Mesh& mesh, std::size_t t, const Vec3& p) {
  const auto& e = mesh.tets[t];
  const Vec3 &a = mesh.nodes[e[0]], &b = mesh.nodes[e[1]], &c = mesh.nodes[e[2]], &d = mesh.nodes[e[3]];
  const double v = signed_volume(a, b, c, d);
  return {signed_volume(p, b, c, d) / v, signed_volume(a, p, c, d) / v, signed_volume(a, b, p, d) / v,
          signed_volume(a, b, c, p) / v};
}

namespace {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + d1 / (d1 - d3) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + d2 / (d2 - d6) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace

std::vector<SensorSpec> place_sensors(const Mesh& mesh, const GeometryParams& params, SensorConfig config) {
  require(mesh.tagged(), "place_sensors: mesh must be tagged");
  const ShellGeometry geo(params);
  const auto interior = mesh.triangles_with_tag(SurfaceTag::Interior);
  const double snap_tol = 0.5 * params.target_edge_length;
  const double r_in = geo.inner_radius();

  struct Row {
    double azimuth;
    SensorKind kind;
  };
  std::vector<Row> rows = {{0.5 * kPi, SensorKind::Axial}, {0.0, SensorKind::Axial},
                           {-0.5 * kPi, SensorKind::Circumferential}};
  if (config == SensorConfig::Config2) {
    rows.push_back({-0.5 * kPi, SensorKind::Axial});         // +z row reflected across the xy-plane
    rows.push_back({kPi, SensorKind::Axial});                // +y row reflected across the xz-plane
    rows.push_back({0.5 * kPi, SensorKind::Circumferential}); // -z row reflected across the xy-plane
  }

  std::vector<SensorSpec> sensors;
  for (const auto& row : rows)
    for (int i = 0; i < 9; ++i) {
      const double x = params.nose_length + params.body_length * (i + 0.5) / 9.0;
      const Vec3 ideal(x, r_in * std::cos(row.azimuth), r_in * std::sin(row.azimuth));
      double best_d = std::numeric_limits<double>::infinity();
      Vec3 best_p;
      int best_tri = -1;
      for (int k : interior) {
        const auto& tri = mesh.surface[k];
        const Vec3 q = closest_point_on_triangle(ideal, mesh.nodes[tri.nodes[0]], mesh.nodes[tri.nodes[1]],
                                                 mesh.nodes[tri.nodes[2]]);
        const double d = (q - ideal).norm();
        if (d < best_d) {
          best_d = d;
          best_p = q;
          best_tri = k;
        }
      }
      if (best_tri < 0 || best_d > snap_tol)
        throw NumericalError("sensor at x = " + std::to_string(x) + " has no element within snap tolerance");
      SensorSpec s;
      s.position = best_p;
      s.kind = row.kind;
      s.element = mesh.surface[best_tri].tet;
      if (row.kind == SensorKind::Axial) {
        s.direction = Vec3::UnitX();
      } else {
        const double phi = std::atan2(best_p.z(), best_p.y());
        s.direction = Vec3(0.0, -std::sin(phi), std::cos(phi));
      }
      sensors.push_back(s);
    }
  return sensors;
}

}  // namespace strainest
