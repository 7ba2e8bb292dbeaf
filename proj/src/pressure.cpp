#include "strainest/pressure.hpp"

#include "strainest/container.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <numbers>

namespace strainest {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

}  // namespace

void FlightCondition::validate() const {
  require(mach > 1.0, "flight condition: Mach must exceed 1");
  require(std::abs(alpha_deg) <= 15.0, "flight condition: |alpha| must not exceed 15 deg");
  require(std::abs(beta_deg) <= 15.0, "flight condition: |beta| must not exceed 15 deg");
  require(altitude >= 0.0, "flight condition: altitude must be nonnegative");
}

namespace atmosphere {

double density(double altitude) { return kSeaLevelDensity * std::exp(-altitude / kScaleHeight); }

double speed_of_sound(double altitude) {
  struct Band {
    double floor, a;
  };
  static constexpr Band kBands[] = {{47000.0, 329.8}, {25000.0, 310.0}, {11000.0, 295.1}, {0.0, 320.5}};
  for (const auto& b : kBands)
    if (altitude >= b.floor) return b.a;
  return kBands[3].a;
}

double static_pressure(double altitude) {
  const double a = speed_of_sound(altitude);
  return density(altitude) * a * a / kGamma;
}

double dynamic_pressure(double mach, double altitude) {
  const double v = mach * speed_of_sound(altitude);
  return 0.5 * density(altitude) * v * v;
}

}  // namespace atmosphere

Vec3 freestream_direction(const FlightCondition& c) {
  const double a = c.alpha_deg * kDeg, b = c.beta_deg * kDeg;
  return {std::cos(a) * std::cos(b), std::sin(b), std::sin(a) * std::cos(b)};
}

double total_angle_of_attack(const FlightCondition& c) {
  return std::acos(std::clamp(freestream_direction(c).x(), -1.0, 1.0));
}

PressureField synth_pressure(const Mesh& mesh, const GeometryParams& params, const FlightCondition& cond,
                             const PressureModel& model) {
  require(mesh.tagged(), "synth_pressure: mesh must be tagged");
  cond.validate();
  const ShellGeometry geo(params);
  const double tol = 1e-9 * params.total_length();
  const double theta_c = geo.cone_half_angle();
  const Vec3 v = freestream_direction(cond);
  const double p_inf = atmosphere::static_pressure(cond.altitude);
  const double q_inf = atmosphere::dynamic_pressure(cond.mach, cond.altitude);

  const double aoa = total_angle_of_attack(cond);
  const bool has_band = std::hypot(v.y(), v.z()) > 0.0;
  const double lee_azimuth = std::atan2(v.z(), v.y());
  const double band = model.band_amplitude * q_inf * std::sin(aoa);
  // Nodes sitting exactly on a band edge must be classified the same way on
  // both sides of the leeward meridian, whatever the rounding of atan2.
  const double half_width = model.band_half_width_deg * kDeg + 1e-9;

  PressureField out{Vector(static_cast<Index>(mesh.exterior_nodes.size())), cond};
  for (std::size_t j = 0; j < mesh.exterior_nodes.size(); ++j) {
    const Vec3& x = mesh.nodes[mesh.exterior_nodes[j]];
    const double phi = std::atan2(x.z(), x.y());
    Vec3 n;
    bool lateral = true;
    if (x.x() <= tol) {
      n = -Vec3::UnitX();
      lateral = false;
    } else if (x.x() < params.nose_length - tol) {
      n = Vec3(-std::sin(theta_c), std::cos(theta_c) * std::cos(phi), std::cos(theta_c) * std::sin(phi));
    } else {
      n = Vec3(0.0, std::cos(phi), std::sin(phi));
    }
    const double s = std::max(0.0, -v.dot(n));
    double p = p_inf + q_inf * model.cp_max * s * s;
    if (lateral && has_band && std::abs(wrap_angle(phi - lee_azimuth)) <= half_width) p += band;
    out.values[static_cast<Index>(j)] = p;
  }
  return out;
}

std::vector<FlightCondition> ConditionGrid::expand() const {
  std::vector<FlightCondition> out;
  for (double m : mach)
    for (double a : alpha_deg)
      for (double b : beta_deg) out.push_back({m, a, b, altitude});
  return out;
}

std::string SnapshotSet::digest() const {
  Digest d;
  d.update(fields);
  for (const auto& c : conditions) d.update(c.mach).update(c.alpha_deg).update(c.beta_deg).update(c.altitude);
  return d.hex();
}

SnapshotSet database_snapshots(const Mesh& mesh, const GeometryParams& params, const ConditionGrid& grid,
                               const PressureModel& model) {
  SnapshotSet set;
  set.conditions = grid.expand();
  const auto n = static_cast<std::ptrdiff_t>(set.conditions.size());
  set.fields.resize(static_cast<Index>(mesh.exterior_nodes.size()), n);
  for (const auto& c : set.conditions) c.validate();
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < n; ++j) set.fields.col(j) = synth_pressure(mesh, params, set.conditions[j], model).values;
  return set;
}

SnapshotSet database_snapshots_serial(const Mesh& mesh, const GeometryParams& params, const ConditionGrid& grid,
                                      const PressureModel& model) {
  SnapshotSet set;
  set.conditions = grid.expand();
  set.fields.resize(static_cast<Index>(mesh.exterior_nodes.size()), static_cast<Index>(set.conditions.size()));
  for (std::size_t j = 0; j < set.conditions.size(); ++j)
    set.fields.col(static_cast<Index>(j)) = synth_pressure(mesh, params, set.conditions[j], model).values;
  return set;
}

void save_snapshots(const SnapshotSet& set, const PressureModel& model, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto manifest_path = stem;
  manifest_path += ".json";

  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(set.fields.size()) * sizeof(double));
  std::memcpy(bytes.data(), set.fields.data(), bytes.size());  // Eigen default storage is column-major
  write_file_atomic(bin, bytes);

  nlohmann::ordered_json j;
  j["format"] = "strainest-snapshots";
  j["version"] = 1;
  j["n_p"] = set.n_p();
  j["count"] = set.size();
  j["ordering"] = "lexicographic(mach, alpha_deg, beta_deg)";
  j["layout"] = "column-major float64, n_p rows x count columns";
  j["data_file"] = bin.filename().string();
  j["data_digest"] = digest_hex(bytes);
  j["generator"] = {{"model", "modified-newtonian + leeward band"},
                    {"cp_max", model.cp_max},
                    {"band_amplitude", model.band_amplitude},
                    {"band_half_width_deg", model.band_half_width_deg},
                    {"atmosphere_scale_height", atmosphere::kScaleHeight}};
  auto& conds = j["conditions"] = nlohmann::ordered_json::array();
  for (const auto& c : set.conditions)
    conds.push_back({{"mach", c.mach}, {"alpha_deg", c.alpha_deg}, {"beta_deg", c.beta_deg}, {"altitude", c.altitude}});
  write_file_atomic(manifest_path, j.dump(2) + "\n");
}

SnapshotSet load_snapshots(const std::filesystem::path& stem) {
  auto manifest_path = stem;
  manifest_path += ".json";
  const auto text = read_file(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("snapshot manifest: ") + e.what());
  }
  if (j.value("format", "") != "strainest-snapshots" || j.value("version", 0) != 1)
    throw FormatError("snapshot manifest: unsupported format/version");
  const Index n_p = j.at("n_p").get<Index>(), count = j.at("count").get<Index>();
  const auto bytes = read_file(stem.parent_path() / j.at("data_file").get<std::string>());
  if (digest_hex(bytes) != j.at("data_digest").get<std::string>())
    throw FormatError("snapshot data digest mismatch");
  if (bytes.size() != static_cast<std::size_t>(n_p * count) * sizeof(double))
    throw FormatError("snapshot data size mismatch");
  SnapshotSet set;
  set.fields.resize(n_p, count);
  std::memcpy(set.fields.data(), bytes.data(), bytes.size());
  for (const auto& c : j.at("conditions"))
    set.conditions.push_back({c.at("mach").get<double>(), c.at("alpha_deg").get<double>(),
                              c.at("beta_deg").get<double>(), c.at("altitude").get<double>()});
  if (static_cast<Index>(set.conditions.size()) != count) throw FormatError("snapshot condition count mismatch");
  return set;
}

}  // namespace strainest
