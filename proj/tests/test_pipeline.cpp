#include "strainest/container.hpp"
#include "strainest/estimator.hpp"
#include "strainest/pipeline.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace strainest;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config(const fs::path& out) {
  PipelineConfig c;
  c.output_dir = out;
  c.geometry.target_edge_length = 0.08;
  c.geometry.min_dihedral_deg = 5.0;
  c.pod_grid = {{5.0, 7.0}, {0, 8}, {0, 10}, 20000.0};
  c.prior_grid = {{5.0, 7.0}, {-8, 0, 8}, {-8, 0, 8}, 20000.0};
  c.evaluation_grid = {{6.0}, {4}, {5}, 20000.0};
  c.pod = PodSelector::fixed(3);
  c.gamma.calibration_size = 20;
  c.experiments.case1_replicates = 3;
  c.experiments.case2_replicates = 2;
  c.experiments.latency_queries = 100;
  return c;
}

fs::path write_config(const fs::path& dir, const PipelineConfig& c, const std::string& name = "cfg.json") {
  const auto p = dir / name;
  std::ofstream(p) << c.to_json_text();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const char* cli = std::getenv("STRAINEST_CLI");
  REQUIRE_MESSAGE(cli != nullptr, "STRAINEST_CLI not set");
  const std::string cmd = std::string("\"") + cli + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

void pin_timestamp() { ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1); }

/// One complete tiny run, shared by the tests that only read its outputs.
const fs::path& full_run() {
  static const fs::path dir = [] {
    pin_timestamp();
    const auto d = testing_support::scratch_dir("pipeline_full");
    Pipeline p(tiny_config(d / "out"));
    p.run_all();
    for (const auto& s : Pipeline::studies()) p.cmd_experiment(s);
    return d / "out";
  }();
  return dir;
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_CASE("config: strict parsing") {
  const auto good = tiny_config("x").to_json_text();
  CHECK_NOTHROW(PipelineConfig::from_json_text(good));
  const auto back = PipelineConfig::from_json_text(good);
  CHECK(back.to_json_text() == good);

  auto j = nlohmann::json::parse(good);
  j["geometry"]["wall_thicknes"] = 0.02;
  CHECK_THROWS_AS(PipelineConfig::from_json_text(j.dump()), ConfigError);

  j = nlohmann::json::parse(good);
  j["bogus"] = 1;
  CHECK_THROWS_AS(PipelineConfig::from_json_text(j.dump()), ConfigError);

  j = nlohmann::json::parse(good);
  j["schema_version"] = 2;
  CHECK_THROWS_AS(PipelineConfig::from_json_text(j.dump()), ConfigError);

  j = nlohmann::json::parse(good);
  j.erase("schema_version");
  CHECK_THROWS_AS(PipelineConfig::from_json_text(j.dump()), ConfigError);

  CHECK_THROWS_AS(PipelineConfig::from_json_text("{not json"), ConfigError);
}

TEST_CASE("cli: config errors exit 2") {
  const auto d = testing_support::scratch_dir("pipeline_cfg");
  CHECK(run_cli("mesh --config " + (d / "missing.json").string()) == 2);

  auto j = nlohmann::json::parse(tiny_config(d / "out").to_json_text());
  j["unexpected"] = true;
  std::ofstream(d / "bad.json") << j.dump();
  CHECK(run_cli("mesh --config " + (d / "bad.json").string()) == 2);
  CHECK(run_cli("nonsense") == 2);
}

TEST_CASE("stages refuse stale or missing upstream artifacts") {
  const auto d = testing_support::scratch_dir("pipeline_stale");
  auto cfg = tiny_config(d / "out");
  const auto cfg_path = write_config(d, cfg);

  // Nothing has run yet.
  CHECK_THROWS_AS(Pipeline(cfg).cmd_assemble(), StaleArtifactError);
  CHECK(run_cli("assemble --config " + cfg_path.string()) == 3);

  CHECK(run_cli("mesh --config " + cfg_path.string()) == 0);
  CHECK(run_cli("assemble --config " + cfg_path.string()) == 0);

  // A geometry change invalidates the mesh for downstream stages.
  auto changed = cfg;
  changed.geometry.wall_thickness = 0.025;
  const auto changed_path = write_config(d, changed, "changed.json");
  CHECK_THROWS_AS(Pipeline(changed).cmd_assemble(), StaleArtifactError);
  CHECK(run_cli("assemble --config " + changed_path.string()) == 3);

  // A noise change does not touch mesh or assemble.
  auto noise_only = cfg;
  noise_only.noise_fraction = 0.02;
  CHECK_NOTHROW(Pipeline(noise_only).cmd_snapshot());

  // Corrupting a produced artifact is detected.
  const auto ops = cfg.output_dir / "operators.bin";
  auto bytes = slurp(ops);
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(ops, std::ios::binary) << bytes;
  CHECK_THROWS_AS(Pipeline(cfg).cmd_snapshot(), StaleArtifactError);
  CHECK(run_cli("snapshot --config " + cfg_path.string()) == 3);
}

TEST_CASE("corrupted artifact loads raise FormatError") {
  const auto d = testing_support::scratch_dir("pipeline_format");
  std::ofstream(d / "junk.map", std::ios::binary) << "not a container";
  CHECK_THROWS_AS(load_inverse_map(d / "junk.map"), FormatError);
}

TEST_CASE("full run: reports and row counts") {
  const auto& out = full_run();
  const auto cfg = tiny_config(out);
  const auto n_eval = cfg.evaluation_grid.expand().size();

  for (const auto& stage : Pipeline::stages()) CHECK(fs::exists(out / (stage + ".manifest.json")));

  const auto c1 = csv_lines(out / "reports" / "case1_errors.csv");
  REQUIRE(!c1.empty());
  CHECK(c1.front().rfind("condition,mach,alpha_deg,beta_deg,replicate", 0) == 0);
  CHECK(c1.size() - 1 == n_eval * static_cast<std::size_t>(cfg.experiments.case1_replicates));

  const auto c2 = csv_lines(out / "reports" / "case2_recovery.csv");
  CHECK(c2.size() - 1 == cfg.experiments.case2_conditions.size() * static_cast<std::size_t>(cfg.experiments.case2_replicates));

  const auto proj = csv_lines(out / "reports" / "case2_projection.csv");
  REQUIRE(proj.size() > 1);
  CHECK(proj.front() == "node,x,y,z,reference,projection,estimate_noise_free");

  const auto coeff = csv_lines(out / "reports" / "coeff_errors.csv");
  CHECK(coeff.size() > 1);
  CHECK(fs::exists(out / "reports" / "latency.csv"));

  const auto moro = nlohmann::json::parse(slurp(out / "morozov.manifest.json"));
  CHECK(moro["info"]["gamma"].get<double>() > 0.0);
}

TEST_CASE("full run: estimate on zero strain returns the map offset") {
  const auto& out = full_run();
  const auto cfg = tiny_config(out);
  Pipeline p(cfg);

  for (const std::string which : {"case1", "case2"}) {
    const auto map = load_inverse_map(out / (which + ".map"));
    std::ostringstream line;
    for (Index i = 0; i < map.n_d(); ++i) line << (i ? "," : "") << 0.0;
    std::istringstream in("# comment\n" + line.str() + "\n\n" + line.str() + "\n");
    std::ostringstream res;
    p.cmd_estimate(which, in, res);

    std::istringstream rl(res.str());
    int count = 0;
    for (std::string l; std::getline(rl, l); ++count) {
      const auto j = nlohmann::json::parse(l);
      CHECK(j["index"].get<int>() == count);
      CHECK(j["case"] == which);
      CHECK(j["n_q"].get<Index>() == map.n_q());
      Digest dk;
      dk.update(map.k);
      CHECK(j["q_hat_digest"] == dk.hex());
      CHECK(j["coefficients"].size() == 5);
      if (which == "case1") {
        CHECK(j["posterior_std"].size() == static_cast<std::size_t>(map.n_q()));
        const auto qh = j["q_hat"].get<std::vector<double>>();
        for (Index i = 0; i < map.n_q(); ++i) CHECK(qh[static_cast<std::size_t>(i)] == map.k[i]);
      } else {
        CHECK(j.contains("posterior_std_summary"));
      }
    }
    CHECK(count == 2);
  }

  std::istringstream short_line("1.0,2.0\n");
  std::ostringstream sink;
  CHECK_THROWS_AS(p.cmd_estimate("case2", short_line, sink), ParameterError);
  std::istringstream bad("abc\n");
  CHECK_THROWS_AS(p.cmd_estimate("case1", bad, sink), ParameterError);
  std::istringstream any;
  CHECK_THROWS_AS(p.cmd_estimate("case3", any, sink), ParameterError);
}

TEST_CASE("persisted maps round trip") {
  const auto& out = full_run();
  for (const std::string which : {"case1", "case2"}) {
    const auto map = load_inverse_map(out / (which + ".map"));
    const auto copy = testing_support::scratch_dir("pipeline_map") / "copy.map";
    save_inverse_map(map, copy);
    const auto again = load_inverse_map(copy);
    CHECK(again.digest() == map.digest());
    CHECK(slurp(copy) == slurp(out / (which + ".map")));
  }
}

TEST_CASE("cli: rerun is byte-identical") {
  pin_timestamp();
  const auto d = testing_support::scratch_dir("pipeline_rerun");
  std::vector<fs::path> outs;
  for (const char* name : {"a", "b"}) {
    const auto cfg = tiny_config(d / name);
    const auto path = write_config(d, cfg, std::string(name) + ".json");
    REQUIRE(run_cli("run --config " + path.string()) == 0);
    REQUIRE(run_cli("experiment --study all --config " + path.string()) == 0);
    outs.push_back(d / name);
  }

  // Latency reports hold wall-clock timings.
  const std::set<std::string> skip = {"latency.csv", "latency_summary.csv"};
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(outs[0])) {
    if (!e.is_regular_file() || skip.count(e.path().filename().string())) continue;
    const auto rel = fs::relative(e.path(), outs[0]);
    REQUIRE_MESSAGE(fs::exists(outs[1] / rel), rel.string());
    CHECK_MESSAGE(slurp(e.path()) == slurp(outs[1] / rel), rel.string());
    ++compared;
  }
  CHECK(compared > 10);
}
