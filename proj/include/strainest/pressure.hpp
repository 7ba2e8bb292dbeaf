#pragma once

#include "strainest/common.hpp"
#include "strainest/geometry.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace strainest {

/// Flight condition mu = [M, alpha, beta, H]; angles in degrees.
struct FlightCondition {
  double mach = 5.0;
  double alpha_deg = 0.0;
  double beta_deg = 0.0;
  double altitude = 20000.0;

  void validate() const;
  bool operator==(const FlightCondition&) const = default;
};

/// Exponential-density atmosphere with a piecewise-constant speed of sound.
namespace atmosphere {
inline constexpr double kGamma = 1.4;
inline constexpr double kSeaLevelDensity = 1.225;  // kg/m^3
inline constexpr double kScaleHeight = 7600.0;     // m

double density(double altitude);
double speed_of_sound(double altitude);
/// p = rho a^2 / gamma
double static_pressure(double altitude);
/// q = rho (M a)^2 / 2
double dynamic_pressure(double mach, double altitude);
}  // namespace atmosphere

/// Body-frame freestream direction: the flow tilts toward +z with alpha and
/// toward +y with beta, v = (cos a cos b, sin b, sin a cos b).
Vec3 freestream_direction(const FlightCondition& cond);
/// Angle between the freestream and the body axis (radians).
double total_angle_of_attack(const FlightCondition& cond);

struct PressureModel {
  double cp_max = 2.0;               // Newtonian stagnation coefficient
  double band_amplitude = 0.3;       // leeward band: amplitude * q * sin(total AoA)
  double band_half_width_deg = 30.0;
};

struct PressureField {
  Vector values;  // Pa, one per exterior node
  std::optional<FlightCondition> condition;
};

/// Analytic surrogate for the surface pressure on the exterior nodes:
/// p = p_inf + q_inf Cp, with modified-Newtonian Cp = cp_max max(0, -v.n)^2
/// plus a hard-edged band of extra pressure centred on the leeward meridian.
/// Node normals follow the analytic patch the node lies on (front plate,
/// cone, cylinder), so the nose/body kink produces a pressure jump.
PressureField synth_pressure(const Mesh& mesh, const GeometryParams& params, const FlightCondition& cond,
                             const PressureModel& model = {});

struct ConditionGrid {
  std::vector<double> mach;
  std::vector<double> alpha_deg;
  std::vector<double> beta_deg;
  double altitude = 20000.0;

  /// Cartesian product ordered lexicographically over (M, alpha, beta).
  std::vector<FlightCondition> expand() const;
};

struct SnapshotSet {
  Matrix fields;  // n_p x N, one snapshot per column
  std::vector<FlightCondition> conditions;

  Index n_p() const { return fields.rows(); }
  Index size() const { return fields.cols(); }
  PressureField field(Index j) const { return {fields.col(j), conditions.at(static_cast<std::size_t>(j))}; }
  std::string digest() const;
};

/// One synthetic field per grid condition; conditions run in parallel.
SnapshotSet database_snapshots(const Mesh& mesh, const GeometryParams& params, const ConditionGrid& grid,
                               const PressureModel& model = {});
SnapshotSet database_snapshots_serial(const Mesh& mesh, const GeometryParams& params, const ConditionGrid& grid,
                                      const PressureModel& model = {});

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (column-major doubles).
void save_snapshots(const SnapshotSet& set, const PressureModel& model, const std::filesystem::path& stem);
SnapshotSet load_snapshots(const std::filesystem::path& stem);

}  // namespace strainest
