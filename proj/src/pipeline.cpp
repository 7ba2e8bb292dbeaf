#include "strainest/pipeline.hpp"

#include "strainest/aero.hpp"
#include "strainest/container.hpp"
#include "strainest/estimator.hpp"
#include "strainest/noise.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace strainest {

using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_grid(const nlohmann::json& j, ConditionGrid& g, const std::string& where) {
  check_keys(j, {"mach", "alpha_deg", "beta_deg"}, where);
  read(j, "mach", g.mach, where);
  read(j, "alpha_deg", g.alpha_deg, where);
  read(j, "beta_deg", g.beta_deg, where);
}

json grid_json(const ConditionGrid& g) {
  return {{"mach", g.mach}, {"alpha_deg", g.alpha_deg}, {"beta_deg", g.beta_deg}};
}

json condition_json(const FlightCondition& c) {
  return {{"mach", c.mach}, {"alpha_deg", c.alpha_deg}, {"beta_deg", c.beta_deg}};
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(j, {"schema_version", "output_dir", "geometry", "material", "sensor_config", "altitude", "grids", "noise",
                 "pod", "gamma", "seeds", "experiments"},
             "config");
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  int version = 0;
  read(j, "schema_version", version, "config");
  if (version != kSchemaVersion)
    throw ConfigError("config: schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");

  PipelineConfig c;
  std::string out = c.output_dir.string();
  read(j, "output_dir", out, "config");
  c.output_dir = out;

  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    check_keys(g, {"body_length", "nose_length", "outer_radius", "wall_thickness", "target_edge_length",
                   "nose_tip_radius", "min_dihedral_deg"},
               "geometry");
    read(g, "body_length", c.geometry.body_length, "geometry");
    read(g, "nose_length", c.geometry.nose_length, "geometry");
    read(g, "outer_radius", c.geometry.outer_radius, "geometry");
    read(g, "wall_thickness", c.geometry.wall_thickness, "geometry");
    read(g, "target_edge_length", c.geometry.target_edge_length, "geometry");
    read(g, "nose_tip_radius", c.geometry.nose_tip_radius, "geometry");
    read(g, "min_dihedral_deg", c.geometry.min_dihedral_deg, "geometry");
  }
  if (j.contains("material")) {
    const auto& m = j["material"];
    check_keys(m, {"young_modulus", "shear_modulus"}, "material");
    read(m, "young_modulus", c.material.young_modulus, "material");
    read(m, "shear_modulus", c.material.shear_modulus, "material");
  }
  if (j.contains("sensor_config")) {
    std::string s;
    read(j, "sensor_config", s, "config");
    try {
      c.sensors = sensor_config_from_string(s);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.sensor_config: ") + e.what());
    }
  }
  read(j, "altitude", c.altitude, "config");
  if (j.contains("grids")) {
    const auto& g = j["grids"];
    check_keys(g, {"pod", "prior", "evaluation"}, "grids");
    if (g.contains("pod")) read_grid(g["pod"], c.pod_grid, "grids.pod");
    if (g.contains("prior")) read_grid(g["prior"], c.prior_grid, "grids.prior");
    if (g.contains("evaluation")) read_grid(g["evaluation"], c.evaluation_grid, "grids.evaluation");
  }
  c.pod_grid.altitude = c.prior_grid.altitude = c.evaluation_grid.altitude = c.altitude;
  if (j.contains("noise")) {
    check_keys(j["noise"], {"fraction"}, "noise");
    read(j["noise"], "fraction", c.noise_fraction, "noise");
  }
  if (j.contains("pod")) {
    const auto& p = j["pod"];
    check_keys(p, {"selector", "rank", "threshold"}, "pod");
    std::string sel = "fixed";
    read(p, "selector", sel, "pod");
    if (sel == "fixed") {
      c.pod = PodSelector::fixed(5);
      read(p, "rank", c.pod.rank, "pod");
    } else if (sel == "energy") {
      c.pod = PodSelector::energy(0.99);
      read(p, "threshold", c.pod.threshold, "pod");
    } else {
      throw ConfigError("pod.selector: expected 'fixed' or 'energy', got '" + sel + "'");
    }
  }
  if (j.contains("gamma")) {
    const auto& g = j["gamma"];
    check_keys(g, {"policy", "value", "calibration_size", "bracket", "rel_tol"}, "gamma");
    std::string policy = "morozov";
    read(g, "policy", policy, "gamma");
    if (policy == "fixed")
      c.gamma.kind = GammaPolicy::Kind::Fixed;
    else if (policy == "morozov")
      c.gamma.kind = GammaPolicy::Kind::Morozov;
    else
      throw ConfigError("gamma.policy: expected 'fixed' or 'morozov', got '" + policy + "'");
    read(g, "value", c.gamma.value, "gamma");
    read(g, "calibration_size", c.gamma.calibration_size, "gamma");
    read(g, "rel_tol", c.gamma.rel_tol, "gamma");
    if (g.contains("bracket")) {
      std::vector<double> b;
      read(g, "bracket", b, "gamma");
      if (b.size() != 2) throw ConfigError("gamma.bracket: expected [lower, upper]");
      c.gamma.bracket_lower = b[0];
      c.gamma.bracket_upper = b[1];
    }
  }
  if (j.contains("seeds")) {
    check_keys(j["seeds"], {"experiment", "calibration"}, "seeds");
    read(j["seeds"], "experiment", c.experiment_seed, "seeds");
    read(j["seeds"], "calibration", c.calibration_seed, "seeds");
  }
  if (j.contains("experiments")) {
    const auto& e = j["experiments"];
    check_keys(e, {"case1_replicates", "case2_replicates", "case2_conditions", "latency_queries", "eps_fraction"},
               "experiments");
    read(e, "case1_replicates", c.experiments.case1_replicates, "experiments");
    read(e, "case2_replicates", c.experiments.case2_replicates, "experiments");
    read(e, "latency_queries", c.experiments.latency_queries, "experiments");
    read(e, "eps_fraction", c.experiments.eps_fraction, "experiments");
    if (e.contains("case2_conditions")) {
      c.experiments.case2_conditions.clear();
      for (const auto& cj : e["case2_conditions"]) {
        check_keys(cj, {"mach", "alpha_deg", "beta_deg"}, "experiments.case2_conditions");
        FlightCondition fc;
        read(cj, "mach", fc.mach, "experiments.case2_conditions");
        read(cj, "alpha_deg", fc.alpha_deg, "experiments.case2_conditions");
        read(cj, "beta_deg", fc.beta_deg, "experiments.case2_conditions");
        c.experiments.case2_conditions.push_back(fc);
      }
    }
  }
  for (auto& fc : c.experiments.case2_conditions) fc.altitude = c.altitude;
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  const auto bytes = read_file(path);
  return from_json_text(std::string(bytes.begin(), bytes.end()));
}

std::string PipelineConfig::to_json_text() const {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["output_dir"] = output_dir.string();
  j["geometry"] = {{"body_length", geometry.body_length},
                   {"nose_length", geometry.nose_length},
                   {"outer_radius", geometry.outer_radius},
                   {"wall_thickness", geometry.wall_thickness},
                   {"target_edge_length", geometry.target_edge_length},
                   {"nose_tip_radius", geometry.nose_tip_radius},
                   {"min_dihedral_deg", geometry.min_dihedral_deg}};
  j["material"] = {{"young_modulus", material.young_modulus}, {"shear_modulus", material.shear_modulus}};
  j["sensor_config"] = sensors == SensorConfig::Config1 ? "config1" : "config2";
  j["altitude"] = altitude;
  j["grids"] = {{"pod", grid_json(pod_grid)}, {"prior", grid_json(prior_grid)}, {"evaluation", grid_json(evaluation_grid)}};
  j["noise"] = {{"fraction", noise_fraction}};
  if (pod.kind == PodSelector::Kind::Fixed)
    j["pod"] = {{"selector", "fixed"}, {"rank", pod.rank}};
  else
    j["pod"] = {{"selector", "energy"}, {"threshold", pod.threshold}};
  j["gamma"] = {{"policy", gamma.kind == GammaPolicy::Kind::Fixed ? "fixed" : "morozov"},
                {"value", gamma.value},
                {"calibration_size", gamma.calibration_size},
                {"bracket", {gamma.bracket_lower, gamma.bracket_upper}},
                {"rel_tol", gamma.rel_tol}};
  j["seeds"] = {{"experiment", experiment_seed}, {"calibration", calibration_seed}};
  auto conds = json::array();
  for (const auto& c : experiments.case2_conditions) conds.push_back(condition_json(c));
  j["experiments"] = {{"case1_replicates", experiments.case1_replicates},
                      {"case2_replicates", experiments.case2_replicates},
                      {"case2_conditions", conds},
                      {"latency_queries", experiments.latency_queries},
                      {"eps_fraction", experiments.eps_fraction}};
  return j.dump(2) + "\n";
}

void PipelineConfig::validate() const {
  auto cfg_require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  try {
    geometry.validate();
    material.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg_require(altitude >= 0.0, "altitude must be nonnegative");
  for (const auto* g : {&pod_grid, &prior_grid, &evaluation_grid}) {
    cfg_require(!g->mach.empty() && !g->alpha_deg.empty() && !g->beta_deg.empty(), "condition grids must be nonempty");
    for (const auto& c : g->expand()) {
      try {
        c.validate();
      } catch (const ParameterError& e) {
        throw ConfigError(std::string("config grid: ") + e.what());
      }
    }
  }
  cfg_require(pod_grid.expand().size() >= 2 && prior_grid.expand().size() >= 2,
              "POD and prior grids need at least two conditions");
  cfg_require(noise_fraction > 0.0, "noise.fraction must be positive");
  if (pod.kind == PodSelector::Kind::Fixed)
    cfg_require(pod.rank >= 1, "pod.rank must be at least 1");
  else
    cfg_require(pod.threshold > 0.0 && pod.threshold <= 1.0, "pod.threshold must be in (0, 1]");
  if (gamma.kind == GammaPolicy::Kind::Fixed) cfg_require(gamma.value > 0.0, "gamma.value must be positive");
  cfg_require(gamma.calibration_size >= 20, "gamma.calibration_size must be at least 20");
  cfg_require(gamma.bracket_lower > 0.0 && gamma.bracket_upper > gamma.bracket_lower, "gamma.bracket is invalid");
  cfg_require(gamma.rel_tol > 0.0 && gamma.rel_tol < 0.05, "gamma.rel_tol must be in (0, 0.05)");
  cfg_require(experiments.case1_replicates >= 1 && experiments.case2_replicates >= 1, "replicates must be positive");
  cfg_require(experiments.latency_queries >= 100, "experiments.latency_queries must be at least 100");
  cfg_require(experiments.eps_fraction > 0.0, "experiments.eps_fraction must be positive");
  cfg_require(!experiments.case2_conditions.empty(), "experiments.case2_conditions must be nonempty");
  for (const auto& c : experiments.case2_conditions) {
    try {
      c.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("config case2 condition: ") + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Stage bookkeeping

namespace {

const std::map<std::string, std::vector<std::string>>& stage_sections() {
  static const std::map<std::string, std::vector<std::string>> deps = [] {
    std::map<std::string, std::vector<std::string>> d;
    d["mesh"] = {"/geometry", "/sensor_config"};
    d["assemble"] = d["mesh"];
    d["assemble"].push_back("/material");
    d["snapshot"] = d["assemble"];
    for (const char* s : {"/altitude", "/grids", "/noise"}) d["snapshot"].push_back(s);
    d["pod"] = d["snapshot"];
    d["pod"].push_back("/pod");
    d["prior"] = d["snapshot"];
    d["eigs"] = d["snapshot"];
    d["morozov"] = d["snapshot"];
    for (const char* s : {"/gamma", "/seeds/calibration"}) d["morozov"].push_back(s);
    d["build"] = d["morozov"];
    d["build"].push_back("/pod");
    return d;
  }();
  return deps;
}

const std::map<std::string, std::vector<std::string>>& stage_upstream() {
  static const std::map<std::string, std::vector<std::string>> up = {
      {"mesh", {}},
      {"assemble", {"mesh"}},
      {"snapshot", {"mesh", "assemble"}},
      {"pod", {"snapshot"}},
      {"prior", {"snapshot"}},
      {"eigs", {"assemble", "snapshot", "prior"}},
      {"morozov", {"assemble", "snapshot", "prior", "eigs"}},
      {"build", {"assemble", "snapshot", "pod", "prior", "morozov"}},
      {"experiment", {"mesh", "assemble", "snapshot", "pod", "prior", "eigs", "build"}},
  };
  return up;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

class StageIO {
 public:
  StageIO(const PipelineConfig& cfg) : cfg_(cfg), full_(json::parse(cfg.to_json_text())) {}

  std::string config_digest(const std::string& stage) const {
    Digest d;
    for (const auto& ptr : stage_sections().at(stage)) {
      d.update(ptr);
      d.update(full_.at(json::json_pointer(ptr)).dump());
    }
    return d.hex();
  }

  std::filesystem::path manifest_path(const std::string& stage) const {
    return cfg_.output_dir / (stage + ".manifest.json");
  }

  /// Checks one stage's manifest against the current config and the files on
  /// disk; returns its info block.
  json verify(const std::string& stage) const {
    const auto mpath = manifest_path(stage);
    if (!std::filesystem::exists(mpath))
      throw StaleArtifactError("missing upstream artifact: stage '" + stage + "' has not been run (" + mpath.string() +
                               ")");
    json m;
    try {
      const auto bytes = read_file(mpath);
      m = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw FormatError(mpath.string() + ": " + e.what());
    }
    if (m.value("schema_version", 0) != PipelineConfig::kSchemaVersion)
      throw StaleArtifactError(mpath.string() + ": schema version mismatch");
    if (m.at("config_digest").get<std::string>() != config_digest(stage))
      throw StaleArtifactError("stale artifact: stage '" + stage +
                               "' was produced from a different configuration; rerun it");
    for (const auto& [name, dig] : m.at("outputs").items()) {
      const auto p = cfg_.output_dir / name;
      if (!std::filesystem::exists(p)) throw StaleArtifactError("missing artifact file " + p.string());
      if (digest_file(p) != dig.get<std::string>())
        throw StaleArtifactError("stale artifact: " + p.string() + " does not match the digest in its manifest");
    }
    for (const auto& [up, dig] : m.at("inputs").items()) {
      const auto up_path = manifest_path(up);
      if (!std::filesystem::exists(up_path) || digest_file(up_path) != dig.get<std::string>())
        throw StaleArtifactError("mixed provenance: stage '" + stage + "' was built from a different '" + up +
                                 "' artifact; rerun it");
    }
    return m.at("info");
  }

  /// Verifies every upstream stage and returns their manifest digests.
  json require_upstream(const std::string& stage) const {
    json inputs = json::object();
    for (const auto& up : stage_upstream().at(stage)) {
      verify(up);
      inputs[up] = digest_file(manifest_path(up));
    }
    return inputs;
  }

  void write(const std::string& stage, const json& inputs, const std::vector<std::string>& outputs,
             const json& info) const {
    json m;
    m["stage"] = stage;
    m["schema_version"] = PipelineConfig::kSchemaVersion;
    m["config_digest"] = config_digest(stage);
    m["inputs"] = inputs;
    json outs = json::object();
    for (const auto& o : outputs) outs[o] = digest_file(cfg_.output_dir / o);
    m["outputs"] = outs;
    m["info"] = info;
    write_file_atomic(manifest_path(stage), m.dump(2) + "\n");
  }

  json info(const std::string& stage) const { return verify(stage); }

 private:
  const PipelineConfig& cfg_;
  json full_;
};

struct Operators {
  SparseMatrix B, C_map;
  Matrix Z_full;
};

Operators load_operators(const std::filesystem::path& p) {
  const auto c = Container::load(p);
  if (c.text("kind") != "operators") throw FormatError(p.string() + ": not an operator container");
  return {c.sparse("B"), c.sparse("C_map"), c.dense("Z_full")};
}

ConditionGrid with_altitude(ConditionGrid g, double h) {
  g.altitude = h;
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::filesystem::create_directories(cfg_.output_dir);
}

const std::vector<std::string>& Pipeline::stages() {
  static const std::vector<std::string> s = {"mesh", "assemble", "snapshot", "pod", "prior", "eigs", "morozov", "build"};
  return s;
}

const std::vector<std::string>& Pipeline::studies() {
  static const std::vector<std::string> s = {"case1_errors", "case2_recovery", "coeff_errors", "latency"};
  return s;
}

void Pipeline::run_stage(const std::string& stage) {
  if (stage == "mesh") return cmd_mesh();
  if (stage == "assemble") return cmd_assemble();
  if (stage == "snapshot") return cmd_snapshot();
  if (stage == "pod") return cmd_pod();
  if (stage == "prior") return cmd_prior();
  if (stage == "eigs") return cmd_eigs();
  if (stage == "morozov") return cmd_morozov();
  if (stage == "build") return cmd_build();
  throw ParameterError("unknown stage '" + stage + "'");
}

void Pipeline::run_all() {
  for (const auto& s : stages()) run_stage(s);
}

void Pipeline::cmd_mesh() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("mesh");
  const Mesh mesh = make_shell(cfg_.geometry);
  const auto sensors = place_sensors(mesh, cfg_.geometry, cfg_.sensors);
  save_mesh(mesh, path("mesh.txt"));
  save_sensors_csv(sensors, path("sensors.csv"));
  const json info = {{"nodes", mesh.num_nodes()},
                     {"tets", mesh.num_tets()},
                     {"dofs", 3 * mesh.num_nodes()},
                     {"exterior_nodes", mesh.exterior_nodes.size()},
                     {"sensors", sensors.size()},
                     {"min_dihedral_deg", min_dihedral_angle_deg(mesh)}};
  io.write("mesh", inputs, {"mesh.txt", "sensors.csv"}, info);
}

void Pipeline::cmd_assemble() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("assemble");
  const Mesh mesh = load_mesh(path("mesh.txt"));
  const auto sensors = load_sensors_csv(path("sensors.csv"));
  const auto ops = assemble_operators(mesh, cfg_.material, sensors);
  const ForwardSolver solver(ops.A);
  const auto p2o = assemble_p2o_full(ops, solver);

  Container c;
  c.put_text("kind", "operators");
  c.put("B", ops.B);
  c.put("C_map", ops.C_map);
  c.put("Z_full", p2o.Z);
  c.put("fixed_dofs", std::vector<std::int64_t>(ops.fixed_dofs.begin(), ops.fixed_dofs.end()));
  c.save(path("operators.bin"));
  const json info = {{"n_s", ops.n_s},
                     {"n_d", ops.n_d},
                     {"n_p", ops.n_p},
                     {"p2o_route", p2o.route == P2ORoute::Adjoint ? "adjoint" : "forward"}};
  io.write("assemble", inputs, {"operators.bin"}, info);
}

void Pipeline::cmd_snapshot() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("snapshot");
  const Mesh mesh = load_mesh(path("mesh.txt"));
  const auto ops = load_operators(path("operators.bin"));
  const PressureModel model;
  const auto pod_set = database_snapshots(mesh, cfg_.geometry, with_altitude(cfg_.pod_grid, cfg_.altitude), model);
  const auto prior_set = database_snapshots(mesh, cfg_.geometry, with_altitude(cfg_.prior_grid, cfg_.altitude), model);
  save_snapshots(pod_set, model, path("snapshots_pod"));
  save_snapshots(prior_set, model, path("snapshots_prior"));

  // Noise level from the strain database over the POD grid.
  const Matrix strains = ops.Z_full * pod_set.fields;
  const double sigma = calibrate_sigma(strains, cfg_.noise_fraction);
  const json info = {{"n_p", pod_set.n_p()},
                     {"pod_snapshots", pod_set.size()},
                     {"prior_snapshots", prior_set.size()},
                     {"pod_digest", pod_set.digest()},
                     {"prior_digest", prior_set.digest()},
                     {"sigma", sigma},
                     {"noise_fraction", cfg_.noise_fraction}};
  io.write("snapshot", inputs,
           {"snapshots_pod.json", "snapshots_pod.bin", "snapshots_prior.json", "snapshots_prior.bin"}, info);
}

void Pipeline::cmd_pod() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("pod");
  const auto snaps = load_snapshots(path("snapshots_pod"));
  const auto basis = compute_pod(snaps, cfg_.pod);
  save_pod(basis, path("pod.bin"));

  std::ostringstream csv;
  csv << "mode,singular_value,cumulative_energy\n";
  const Vector cum = basis.cumulative_energy();
  for (Index i = 0; i < basis.singular_values.size(); ++i)
    csv << i + 1 << ',' << fmt(basis.singular_values[i]) << ',' << (cum.size() ? fmt(cum[i]) : "nan") << '\n';
  write_file_atomic(path("pod_energy.csv"), csv.str());
  const json info = {{"r", basis.r()},
                     {"energy_at_r", basis.r() > 0 && cum.size() ? cum[basis.r() - 1] : 0.0},
                     {"basis_digest", digest(basis)}};
  io.write("pod", inputs, {"pod.bin", "pod_energy.csv"}, info);
}

void Pipeline::cmd_prior() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("prior");
  const auto snaps = load_snapshots(path("snapshots_prior"));
  const auto prior = compute_prior(snaps);
  save_prior(prior, path("prior.bin"));
  const json info = {{"n_q", prior.n_q()}, {"samples", prior.samples()}, {"prior_digest", digest(prior)}};
  io.write("prior", inputs, {"prior.bin"}, info);
}

void Pipeline::cmd_eigs() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("eigs");
  const auto ops = load_operators(path("operators.bin"));
  const double sigma = io.info("snapshot").at("sigma").get<double>();
  const auto prior = load_prior(path("prior.bin"));
  const auto noise = NoiseModel::diagonal(sigma, ops.Z_full.rows());
  const auto spec = preconditioned_hessian_eigs(ops.Z_full, noise, prior);
  if (spec.count() == 0) throw NumericalError("eigs: prior-preconditioned Hessian has no nonzero eigenvalues");
  save_spectrum(spec, path("eigs.bin"));

  std::ostringstream csv;
  csv << "k,lambda\n";
  for (Index i = 0; i < spec.count(); ++i) csv << i + 1 << ',' << fmt(spec.eigenvalues[i]) << '\n';
  write_file_atomic(path("eigs.csv"), csv.str());
  const double l1 = spec.eigenvalues[0], lm = spec.eigenvalues[spec.count() - 1];
  const json info = {{"count", spec.count()}, {"lambda_1", l1}, {"lambda_m", lm}, {"decades", std::log10(l1 / lm)}};
  io.write("eigs", inputs, {"eigs.bin", "eigs.csv"}, info);
}

namespace {

// Noisy measurements over the evaluation grid, one (condition, draw) pair per
// column; condition j mod |grid|, stream (seed, condition, j).
Matrix make_measurements(const Mesh& mesh, const PipelineConfig& cfg, const Matrix& Z_full, const NoiseModel& noise,
                         std::uint64_t seed, int count) {
  const auto conds = with_altitude(cfg.evaluation_grid, cfg.altitude).expand();
  Matrix D(Z_full.rows(), count);
  std::vector<Vector> clean(conds.size());
  for (std::size_t c = 0; c < conds.size(); ++c) clean[c] = Z_full * synth_pressure(mesh, cfg.geometry, conds[c]).values;
  for (int j = 0; j < count; ++j) {
    const std::size_t c = static_cast<std::size_t>(j) % conds.size();
    D.col(j) = clean[c] + sample_noise(noise, stream_seed(seed, c, static_cast<std::uint64_t>(j)));
  }
  return D;
}

}  // namespace

void Pipeline::cmd_morozov() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("morozov");
  json info;
  if (cfg_.gamma.kind == GammaPolicy::Kind::Fixed) {
    info = {{"policy", "fixed"}, {"gamma", cfg_.gamma.value}};
  } else {
    const Mesh mesh = load_mesh(path("mesh.txt"));
    const auto ops = load_operators(path("operators.bin"));
    const double sigma = io.info("snapshot").at("sigma").get<double>();
    const double lambda1 = io.info("eigs").at("lambda_1").get<double>();
    const auto prior = load_prior(path("prior.bin"));
    const auto noise = NoiseModel::diagonal(sigma, ops.Z_full.rows());
    const Matrix D = make_measurements(mesh, cfg_, ops.Z_full, noise, cfg_.calibration_seed, cfg_.gamma.calibration_size);
    MorozovOptions opts;
    opts.lower = cfg_.gamma.bracket_lower;
    opts.upper = cfg_.gamma.bracket_upper;
    opts.rel_tol = cfg_.gamma.rel_tol;
    const auto res = select_gamma_morozov(ops.Z_full, noise, prior, D, lambda1, opts);
    info = {{"policy", "morozov"},
            {"gamma", res.gamma},
            {"median_misfit", res.median_misfit},
            {"delta", res.delta},
            {"iterations", res.iterations},
            {"calibration_size", cfg_.gamma.calibration_size}};
  }
  io.write("morozov", inputs, {}, info);
}

void Pipeline::cmd_build() {
  StageIO io(cfg_);
  const auto inputs = io.require_upstream("build");
  const auto ops = load_operators(path("operators.bin"));
  const double sigma = io.info("snapshot").at("sigma").get<double>();
  const double gamma = io.info("morozov").at("gamma").get<double>();
  const auto basis = load_pod(path("pod.bin"));
  const auto prior = load_prior(path("prior.bin"));
  const auto noise = NoiseModel::diagonal(sigma, ops.Z_full.rows());

  auto map1 = build_case1(ops.Z_full * basis.modes, noise, ops.Z_full * basis.mean);
  map1.basis_digest = digest(basis);
  save_inverse_map(map1, path("case1.map"));
  const auto map2 = build_case2(ops.Z_full, noise, prior, gamma);
  save_inverse_map(map2, path("case2.map"));

  const auto K = relative_condition_number(ops.Z_full * basis.modes);
  const json info = {{"case1", {{"n_q", map1.n_q()}, {"n_d", map1.n_d()}, {"map_digest", map1.digest()}}},
                     {"case2", {{"n_q", map2.n_q()}, {"n_d", map2.n_d()}, {"gamma", gamma}, {"map_digest", map2.digest()}}},
                     {"relative_condition_number", K.K},
                     {"kappa", K.kappa},
                     {"sigma", sigma}};
  io.write("build", inputs, {"case1.map", "case2.map"}, info);
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

struct ExperimentContext {
  Mesh mesh;
  Operators ops;
  PodBasis basis;
  PriorModel prior;
  HessianSpectrum spectrum;
  InverseMap map1, map2;
  NoiseModel noise;
  Matrix GC;  // 5 x n_p coefficient map at q_ref = 1
};

ExperimentContext load_context(const Pipeline& p, const StageIO& io) {
  io.require_upstream("experiment");
  ExperimentContext ctx{load_mesh(p.path("mesh.txt")),
                        load_operators(p.path("operators.bin")),
                        load_pod(p.path("pod.bin")),
                        load_prior(p.path("prior.bin")),
                        load_spectrum(p.path("eigs.bin")),
                        load_inverse_map(p.path("case1.map")),
                        load_inverse_map(p.path("case2.map")),
                        NoiseModel::diagonal(io.info("snapshot").at("sigma").get<double>(), 1),
                        {}};
  ctx.noise = NoiseModel::diagonal(ctx.noise.sigma(), ctx.ops.Z_full.rows());
  const auto refs = ReferenceQuantities::for_geometry(p.config().geometry, 1.0);
  ctx.GC = coefficient_map(ctx.mesh, refs) * ctx.ops.C_map;
  return ctx;
}

Coeff5 coefficients_at(const Matrix& GC, const Vector& p, double q) { return GC * p / q; }

}  // namespace

std::vector<std::filesystem::path> Pipeline::cmd_experiment(const std::string& study) {
  const auto& known = studies();
  if (std::find(known.begin(), known.end(), study) == known.end())
    throw ParameterError("unknown study '" + study + "' (expected case1_errors, case2_recovery, coeff_errors, latency)");
  StageIO io(cfg_);
  const auto ctx = load_context(*this, io);
  std::filesystem::create_directories(cfg_.output_dir / "reports");
  const auto eval = with_altitude(cfg_.evaluation_grid, cfg_.altitude).expand();
  const auto n_cond = static_cast<std::ptrdiff_t>(eval.size());

  // Reference fields and clean strains per evaluation condition.
  std::vector<Vector> p_true(eval.size()), d_clean(eval.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < n_cond; ++c) {
    p_true[c] = synth_pressure(ctx.mesh, cfg_.geometry, eval[c]).values;
    d_clean[c] = ctx.ops.Z_full * p_true[c];
  }

  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(report_path(name), text);
    written.push_back(report_path(name));
  };

  if (study == "case1_errors") {
    const int reps = cfg_.experiments.case1_replicates;
    const Index r = ctx.basis.r();
    const auto pod_snaps = load_snapshots(path("snapshots_pod"));
    Matrix pod_coeffs(r, pod_snaps.size());
    for (Index j = 0; j < pod_snaps.size(); ++j) pod_coeffs.col(j) = project_coeffs(ctx.basis, pod_snaps.fields.col(j));
    const Vector ranges = pod_coeffs.rowwise().maxCoeff() - pod_coeffs.rowwise().minCoeff();

    const auto rows = static_cast<std::ptrdiff_t>(n_cond * reps);
    Matrix e_pod(r, rows);
    Vector e_recon(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
      const auto c = static_cast<std::size_t>(row / reps);
      const auto rep = static_cast<std::uint64_t>(row % reps);
      const Vector q = project_coeffs(ctx.basis, p_true[c]);
      const Vector d = d_clean[c] + sample_noise(ctx.noise, stream_seed(cfg_.experiment_seed, c, rep));
      const Vector q_hat = ctx.map1.estimate(d);
      e_pod.col(row) = pod_coefficient_errors(q_hat, q, ranges);
      e_recon[row] = reconstruction_error(reconstruct_pressure(ctx.basis, q_hat), p_true[c]);
    }

    std::ostringstream csv;
    csv << "condition,mach,alpha_deg,beta_deg,replicate";
    for (Index i = 0; i < r; ++i) csv << ",e_pod_" << i + 1;
    csv << ",e_recon\n";
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
      const auto c = static_cast<std::size_t>(row / reps);
      csv << c << ',' << fmt(eval[c].mach) << ',' << fmt(eval[c].alpha_deg) << ',' << fmt(eval[c].beta_deg) << ','
          << row % reps;
      for (Index i = 0; i < r; ++i) csv << ',' << fmt(e_pod(i, row));
      csv << ',' << fmt(e_recon[row]) << '\n';
    }
    emit("case1_errors.csv", csv.str());

    const Vector post_std = ctx.map1.posterior_variance().cwiseSqrt();
    std::ostringstream sum;
    sum << "metric,median,p05,p95,empirical_std,three_sigma_bound\n";
    for (Index i = 0; i < r; ++i) {
      std::vector<double> v;
      for (std::ptrdiff_t row = 0; row < rows; ++row) v.push_back(e_pod(i, row));
      const double mean = e_pod.row(i).mean();
      const double sd = std::sqrt((e_pod.row(i).array() - mean).square().sum() / std::max<double>(1.0, rows - 1.0));
      sum << "e_pod_" << i + 1 << ',' << fmt(percentile(v, 0.5)) << ',' << fmt(percentile(v, 0.05)) << ','
          << fmt(percentile(v, 0.95)) << ',' << fmt(sd) << ',' << fmt(3.0 * post_std[i] / ranges[i]) << '\n';
    }
    std::vector<double> er(e_recon.data(), e_recon.data() + e_recon.size());
    sum << "e_recon," << fmt(percentile(er, 0.5)) << ',' << fmt(percentile(er, 0.05)) << ','
        << fmt(percentile(er, 0.95)) << ",,\n";
    emit("case1_errors_summary.csv", sum.str());
  } else if (study == "case2_recovery") {
    const int reps = cfg_.experiments.case2_replicates;
    const auto& conds = cfg_.experiments.case2_conditions;
    const auto rows = static_cast<std::ptrdiff_t>(conds.size() * static_cast<std::size_t>(reps));
    std::vector<Vector> p_ref(conds.size()), d_ref(conds.size());
    for (std::size_t c = 0; c < conds.size(); ++c) {
      p_ref[c] = synth_pressure(ctx.mesh, cfg_.geometry, conds[c]).values;
      d_ref[c] = ctx.ops.Z_full * p_ref[c];
    }
    Vector e_recon(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
      const auto c = static_cast<std::size_t>(row / reps);
      const auto rep = static_cast<std::uint64_t>(row % reps);
      const Vector d = d_ref[c] + sample_noise(ctx.noise, stream_seed(cfg_.experiment_seed ^ 0x2ULL, c, rep));
      e_recon[row] = reconstruction_error(ctx.map2.estimate(d), p_ref[c]);
    }
    std::ostringstream csv;
    csv << "condition,mach,alpha_deg,beta_deg,replicate,gamma,e_recon\n";
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
      const auto c = static_cast<std::size_t>(row / reps);
      csv << c << ',' << fmt(conds[c].mach) << ',' << fmt(conds[c].alpha_deg) << ',' << fmt(conds[c].beta_deg) << ','
          << row % reps << ',' << fmt(ctx.map2.gamma) << ',' << fmt(e_recon[row]) << '\n';
    }
    emit("case2_recovery.csv", csv.str());

    // Noise-free comparison against the projection onto all retained modes.
    const Index m = ctx.spectrum.count();
    const double gamma0 = 1e-6 * ctx.spectrum.eigenvalues[0];
    const auto map0 = build_case2(ctx.ops.Z_full, ctx.noise, ctx.prior, gamma0);
    std::ostringstream sum;
    sum << "condition,mach,alpha_deg,beta_deg,e_recon_min,e_recon_median,e_recon_max,noise_free_gamma,"
           "noise_free_e_recon,noise_free_vs_projection\n";
    for (std::size_t c = 0; c < conds.size(); ++c) {
      std::vector<double> v(e_recon.data() + static_cast<std::ptrdiff_t>(c) * reps,
                            e_recon.data() + static_cast<std::ptrdiff_t>(c + 1) * reps);
      const Vector est0 = map0.estimate(d_ref[c]);
      const Vector proj = project_onto_modes(p_ref[c], ctx.spectrum, m);
      sum << c << ',' << fmt(conds[c].mach) << ',' << fmt(conds[c].alpha_deg) << ',' << fmt(conds[c].beta_deg) << ','
          << fmt(*std::min_element(v.begin(), v.end())) << ',' << fmt(percentile(v, 0.5)) << ','
          << fmt(*std::max_element(v.begin(), v.end())) << ',' << fmt(gamma0) << ','
          << fmt(reconstruction_error(est0, p_ref[c])) << ',' << fmt(reconstruction_error(est0, proj)) << '\n';
      if (c == 0) {
        std::ostringstream pc;
        pc << "node,x,y,z,reference,projection,estimate_noise_free\n";
        for (std::size_t i = 0; i < ctx.mesh.exterior_nodes.size(); ++i) {
          const auto& x = ctx.mesh.nodes[ctx.mesh.exterior_nodes[i]];
          const auto k = static_cast<Index>(i);
          pc << ctx.mesh.exterior_nodes[i] << ',' << fmt(x.x()) << ',' << fmt(x.y()) << ',' << fmt(x.z()) << ','
             << fmt(p_ref[c][k]) << ',' << fmt(proj[k]) << ',' << fmt(est0[k]) << '\n';
        }
        emit("case2_projection.csv", pc.str());
      }
    }
    emit("case2_recovery_summary.csv", sum.str());
  } else if (study == "coeff_errors") {
    const int reps = cfg_.experiments.case1_replicates;
    const auto pod_snaps = load_snapshots(path("snapshots_pod"));
    Matrix snap_coeffs(5, pod_snaps.size());
    for (Index j = 0; j < pod_snaps.size(); ++j) {
      const double q = atmosphere::dynamic_pressure(pod_snaps.conditions[static_cast<std::size_t>(j)].mach,
                                                    pod_snaps.conditions[static_cast<std::size_t>(j)].altitude);
      snap_coeffs.col(j) = coefficients_at(ctx.GC, pod_snaps.fields.col(j), q);
    }
    const Coeff5 eps = cfg_.experiments.eps_fraction * snap_coeffs.cwiseAbs().rowwise().maxCoeff();
    const Matrix A1 = ctx.GC * ctx.basis.modes;
    const Coeff5 off1 = ctx.GC * ctx.basis.mean;

    const auto rows = static_cast<std::ptrdiff_t>(n_cond * reps);
    std::vector<Coeff5> est1(rows), est2(rows), err1(rows), err2(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
      const auto c = static_cast<std::size_t>(row / reps);
      const auto rep = static_cast<std::uint64_t>(row % reps);
      const double q = atmosphere::dynamic_pressure(eval[c].mach, eval[c].altitude);
      const Coeff5 truth = coefficients_at(ctx.GC, p_true[c], q);
      const Vector d = d_clean[c] + sample_noise(ctx.noise, stream_seed(cfg_.experiment_seed ^ 0x3ULL, c, rep));
      est1[row] = (A1 * ctx.map1.estimate(d) + off1) / q;
      est2[row] = coefficients_at(ctx.GC, ctx.map2.estimate(d), q);
      err1[row] = coefficient_errors(est1[row], truth, eps);
      err2[row] = coefficient_errors(est2[row], truth, eps);
    }
    std::ostringstream csv;
    csv << "case,condition,mach,alpha_deg,beta_deg,replicate";
    for (const char* n : AeroCoefficients::kNames) csv << ',' << n;
    for (const char* n : AeroCoefficients::kNames) csv << ",e_" << n;
    csv << '\n';
    for (int which = 1; which <= 2; ++which) {
      const auto& est = which == 1 ? est1 : est2;
      const auto& err = which == 1 ? err1 : err2;
      for (std::ptrdiff_t row = 0; row < rows; ++row) {
        const auto c = static_cast<std::size_t>(row / reps);
        csv << "case" << which << ',' << c << ',' << fmt(eval[c].mach) << ',' << fmt(eval[c].alpha_deg) << ','
            << fmt(eval[c].beta_deg) << ',' << row % reps;
        for (int k = 0; k < 5; ++k) csv << ',' << fmt(est[row][k]);
        for (int k = 0; k < 5; ++k) csv << ',' << fmt(err[row][k]);
        csv << '\n';
      }
    }
    emit("coeff_errors.csv", csv.str());

    std::ostringstream sum;
    sum << "case,coefficient,eps,median,p05,p95\n";
    for (int which = 1; which <= 2; ++which) {
      const auto& err = which == 1 ? err1 : err2;
      for (int k = 0; k < 5; ++k) {
        std::vector<double> v;
        for (const auto& e : err) v.push_back(e[k]);
        sum << "case" << which << ',' << AeroCoefficients::kNames[k] << ',' << fmt(eps[k]) << ','
            << fmt(percentile(v, 0.5)) << ',' << fmt(percentile(v, 0.05)) << ',' << fmt(percentile(v, 0.95)) << '\n';
      }
    }
    emit("coeff_errors_summary.csv", sum.str());
  } else {
    // Latency: timings are machine-dependent, so this report is not part of
    // the byte-for-byte determinism contract.
    const int queries = cfg_.experiments.latency_queries;
    std::ostringstream csv;
    csv << "case,n_q,n_d,queries,p50_ns,p99_ns,mean_ns\n";
    for (const auto* map : {&ctx.map1, &ctx.map2}) {
      GaussianStream rng(cfg_.experiment_seed ^ 0x4ULL);
      const Matrix D = ctx.noise.sigma() * Matrix::NullaryExpr(map->n_d(), 64, [&](Index, Index) { return rng.next(); });
      Vector out(map->n_q());
      std::vector<double> ns(static_cast<std::size_t>(queries));
      for (int i = 0; i < queries; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        map->estimate_into(D.col(i % 64), out);
        const auto t1 = std::chrono::steady_clock::now();
        ns[static_cast<std::size_t>(i)] = std::chrono::duration<double, std::nano>(t1 - t0).count();
      }
      double mean = 0.0;
      for (double x : ns) mean += x / queries;
      csv << to_string(map->kind) << ',' << map->n_q() << ',' << map->n_d() << ',' << queries << ','
          << fmt(percentile(ns, 0.5)) << ',' << fmt(percentile(ns, 0.99)) << ',' << fmt(mean) << '\n';
    }
    emit("latency.csv", csv.str());
  }
  return written;
}

// ---------------------------------------------------------------------------

void Pipeline::cmd_estimate(const std::string& which, std::istream& in, std::ostream& out, double mach) {
  if (which != "case1" && which != "case2") throw ParameterError("estimate: map must be 'case1' or 'case2'");
  StageIO io(cfg_);
  io.require_upstream("experiment");
  const auto map = load_inverse_map(path(which + ".map"));
  const Mesh mesh = load_mesh(path("mesh.txt"));
  const auto ops = load_operators(path("operators.bin"));
  const double q_ref = atmosphere::dynamic_pressure(mach, cfg_.altitude);
  const Matrix GC = coefficient_map(mesh, ReferenceQuantities::for_geometry(cfg_.geometry, q_ref)) * ops.C_map;

  PodBasis basis;
  Matrix A;
  Coeff5 offset = Coeff5::Zero();
  if (map.kind == EstimatorCase::Case1) {
    basis = load_pod(path("pod.bin"));
    A = GC * basis.modes;
    offset = GC * basis.mean;
  }
  const Vector post_std = map.posterior_variance().cwiseSqrt();

  std::string line;
  Index index = 0;
  Vector d(map.n_d()), q_hat(map.n_q());
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParameterError("estimate: measurement " + std::to_string(index) + " has a non-numeric entry '" + cell + "'");
      }
    }
    require_size(static_cast<Index>(vals.size()), map.n_d(), "estimate: measurement length vs map manifest");
    for (Index i = 0; i < map.n_d(); ++i) d[i] = vals[static_cast<std::size_t>(i)];
    map.estimate_into(d, q_hat);

    const Coeff5 C = map.kind == EstimatorCase::Case1 ? Coeff5(A * q_hat + offset) : Coeff5(GC * q_hat);
    json j;
    j["index"] = index++;
    j["case"] = which;
    j["n_q"] = map.n_q();
    Digest qd;
    qd.update(q_hat);
    j["q_hat_digest"] = qd.hex();
    if (map.n_q() <= 64) j["q_hat"] = std::vector<double>(q_hat.data(), q_hat.data() + q_hat.size());
    json coeffs;
    for (int k = 0; k < 5; ++k) coeffs[AeroCoefficients::kNames[k]] = C[k];
    j["coefficients"] = coeffs;
    if (map.kind == EstimatorCase::Case1) {
      j["posterior_std"] = std::vector<double>(post_std.data(), post_std.data() + post_std.size());
    } else {
      std::vector<double> s(post_std.data(), post_std.data() + post_std.size());
      j["posterior_std_summary"] = {{"min", *std::min_element(s.begin(), s.end())},
                                    {"median", percentile(s, 0.5)},
                                    {"max", *std::max_element(s.begin(), s.end())}};
    }
    out << j.dump() << '\n';
    out.flush();
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) return 2;
  if (dynamic_cast<const StaleArtifactError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

}  // namespace strainest
