#pragma once

#include "strainest/common.hpp"
#include "strainest/elasticity.hpp"
#include "strainest/geometry.hpp"
#include "strainest/pressure.hpp"
#include "strainest/reduction.hpp"

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace strainest {

struct GammaPolicy {
  enum class Kind { Fixed, Morozov };
  Kind kind = Kind::Morozov;
  double value = 1.0;          // Fixed
  int calibration_size = 100;  // Morozov
  double bracket_lower = 1e-8;
  double bracket_upper = 1e4;
  double rel_tol = 0.005;
};

struct ExperimentSettings {
  int case1_replicates = 50;
  int case2_replicates = 100;
  std::vector<FlightCondition> case2_conditions{{5.0, 6.0, 6.0, 20000.0}};
  int latency_queries = 20000;
  double eps_fraction = 0.1;
};

/// Everything a pipeline run depends on. Serialized as JSON; every object
/// rejects unknown keys and the file carries a schema version.
struct PipelineConfig {
  static constexpr int kSchemaVersion = 1;

  std::filesystem::path output_dir = "strainest_out";
  GeometryParams geometry;
  Material material;
  SensorConfig sensors = SensorConfig::Config2;
  double altitude = 20000.0;
  ConditionGrid pod_grid{{5.0, 5.5, 6.0, 6.5, 7.0}, {0, 2, 4, 6, 8, 10}, {0, 5, 10}, 20000.0};
  ConditionGrid prior_grid{{5.0, 6.0, 7.0}, {-8, -6, -4, -2, 0, 2, 4, 6, 8}, {-8, -6, -4, -2, 0, 2, 4, 6, 8}, 20000.0};
  ConditionGrid evaluation_grid{{5.0, 5.5, 6.0, 6.5, 7.0}, {0, 2, 4, 6, 8, 10}, {0, 5, 10}, 20000.0};
  double noise_fraction = 0.01;
  PodSelector pod = PodSelector::fixed(5);
  GammaPolicy gamma;
  std::uint64_t experiment_seed = 20240917;
  std::uint64_t calibration_seed = 7;
  ExperimentSettings experiments;

  static PipelineConfig from_json_text(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
  void validate() const;
};

/// Stage order: mesh, assemble, snapshot, pod, prior, eigs, morozov, build.
/// Each stage writes `<stage>.manifest.json` into the output directory with
/// the digest of the config sections it depends on, the digests of upstream
/// manifests and the digests of the files it produced. A stage refuses to run
/// when an upstream manifest is missing, was produced from a different config,
/// or its files no longer match their recorded digests.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);

  static const std::vector<std::string>& stages();
  static const std::vector<std::string>& studies();

  void cmd_mesh();
  void cmd_assemble();
  void cmd_snapshot();
  void cmd_pod();
  void cmd_prior();
  void cmd_eigs();
  void cmd_morozov();
  void cmd_build();
  void run_stage(const std::string& stage);
  void run_all();

  /// Writes reports/<study>.csv and reports/<study>_summary.csv.
  std::vector<std::filesystem::path> cmd_experiment(const std::string& study);

  /// Reads measurements (one comma-separated line of n_d strains each) and
  /// writes one JSON object per line. `which` is "case1" or "case2".
  /// Coefficients are normalized with q_ref at the given Mach number.
  void cmd_estimate(const std::string& which, std::istream& in, std::ostream& out, double mach = 5.0);

  const PipelineConfig& config() const { return cfg_; }
  std::filesystem::path path(const std::string& name) const { return cfg_.output_dir / name; }
  std::filesystem::path report_path(const std::string& name) const { return cfg_.output_dir / "reports" / name; }

 private:
  PipelineConfig cfg_;
};

/// CLI exit code for an exception: 2 config/parameter, 3 stale or corrupt
/// artifact, 4 numerical failure, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace strainest
