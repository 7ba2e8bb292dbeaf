#pragma once

#include "strainest/common.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace strainest {

/// Hollow shell: blunted conical nose on a cylindrical body, closed at both
/// ends by flat plates. x is the body axis; the nose tip face sits at x = 0
/// and the aft (clamped) face at x = nose_length + body_length.
struct GeometryParams {
  double body_length = 3.0;
  double nose_length = 1.0;
  double outer_radius = 0.25;
  double wall_thickness = 0.02;
  double target_edge_length = 0.03;
  double nose_tip_radius = 0.1;    // flat front face radius of the truncated cone
  double min_dihedral_deg = 10.0;  // mesh quality floor asserted at build time

  void validate() const;
  double total_length() const { return nose_length + body_length; }
};

enum class SurfaceTag : std::uint8_t { Untagged = 0, Exterior = 1, Interior = 2, Aft = 3 };

const char* to_string(SurfaceTag tag);
SurfaceTag surface_tag_from_string(const std::string& s);

struct SurfaceTriangle {
  std::array<int, 3> nodes;  // counter-clockwise seen from outside the solid
  SurfaceTag tag = SurfaceTag::Untagged;
  int tet = -1;              // owning tetrahedron
};

struct Mesh {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 4>> tets;  // positively oriented
  std::vector<SurfaceTriangle> surface;
  std::vector<int> exterior_nodes;       // sorted; the pressure DOFs

  /// x coordinate of the nose/body kink when built as a shell.
  std::optional<double> kink_x;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_tets() const { return tets.size(); }
  bool tagged() const;

  double tet_volume(std::size_t t) const;
  double total_volume() const;
  std::vector<int> nodes_with_tag(SurfaceTag tag) const;
  std::vector<int> triangles_with_tag(SurfaceTag tag) const;
  /// Area-weighted outward normal (|n| = triangle area).
  Vec3 area_normal(const SurfaceTriangle& tri) const;
  Vec3 centroid(const SurfaceTriangle& tri) const;
};

/// Meridian-plane description of the analytic shell surfaces, shared by the
/// mesher, the boundary tagger and the pressure generator.
class ShellGeometry {
 public:
  explicit ShellGeometry(const GeometryParams& params);

  const GeometryParams& params() const { return p_; }

  struct Segment {
    double x0, r0, x1, r1;
    SurfaceTag tag;
  };
  const std::vector<Segment>& segments() const { return segments_; }

  double cone_half_angle() const { return cone_half_angle_; }
  double inner_front_x() const { return p_.wall_thickness; }
  double inner_front_radius() const { return inner_tip_radius_; }
  double inner_kink_x() const { return inner_kink_x_; }
  double inner_radius() const { return p_.outer_radius - p_.wall_thickness; }
  double outer_radius_at(double x) const;

  /// Distance from a point to the closest analytic patch with each tag.
  double distance_to(const Vec3& point, SurfaceTag tag) const;

  /// Exact volume of the solid between the outer and cavity surfaces.
  double solid_volume() const;

 private:
  GeometryParams p_;
  double cone_half_angle_;
  double inner_tip_radius_;
  double inner_kink_x_;
  std::vector<Segment> segments_;
};

/// Structured tetrahedral mesh of the shell: a closed quad surface (O-grid
/// caps plus revolved meridian stations) extruded through the wall and split
/// into tetrahedra with the smallest-global-index diagonal rule, which makes
/// the split conforming. Boundary triangles are extracted but untagged.
Mesh build_shell_mesh(const GeometryParams& params);

/// Tags every boundary triangle by distance to the analytic surfaces and
/// fills mesh.exterior_nodes. Throws if a triangle is farther than the
/// tolerance from every surface.
void tag_boundaries(Mesh& mesh, const GeometryParams& params);

/// build_shell_mesh followed by tag_boundaries.
Mesh make_shell(const GeometryParams& params);

/// Axis-aligned box [0,lx]x[0,ly]x[0,lz] split into 6 tets per cell.
/// Faces: x = 0 -> Aft, x = lx -> Exterior, all others -> Interior.
Mesh build_box_mesh(double lx, double ly, double lz, int nx, int ny, int nz);

/// Recomputes boundary triangles from the tet connectivity (all untagged).
void extract_boundary(Mesh& mesh);
void refresh_exterior_nodes(Mesh& mesh);

double min_dihedral_angle_deg(const Mesh& mesh);

// ---------------------------------------------------------------------------
// Strain sensors

enum class SensorKind { Axial, Circumferential };
enum class SensorConfig { Config1, Config2 };

const char* to_string(SensorKind kind);
SensorConfig sensor_config_from_string(const std::string& s);

struct SensorSpec {
  Vec3 position;
  Vec3 direction;  // unit gauge direction
  SensorKind kind = SensorKind::Axial;
  int element = -1;
};

/// Rows of nine gauges on the cavity wall, evenly spaced along the body.
/// Config1: axial rows at +z and +y, a circumferential row at -z (27).
/// Config2: Config1 plus the +z/-z rows mirrored across the xy-plane and the
/// +y row mirrored across the xz-plane (54).
std::vector<SensorSpec> place_sensors(const Mesh& mesh, const GeometryParams& params, SensorConfig config);

/// Barycentric coordinates of a point with respect to tet t.
std::array<double, 4> barycentric(const Mesh& mesh, std::size_t t, const Vec3& p);

// ---------------------------------------------------------------------------
// Persistence

void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh(const std::filesystem::path& path);
std::string mesh_to_text(const Mesh& mesh);
Mesh mesh_from_text(const std::string& text);

void save_sensors_csv(const std::vector<SensorSpec>& sensors, const std::filesystem::path& path);
std::vector<SensorSpec> load_sensors_csv(const std::filesystem::path& path);

}  // namespace strainest
