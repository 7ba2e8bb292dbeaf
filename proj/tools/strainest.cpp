// Command-line driver for the strain-to-pressure pipeline.
//
//   strainest <stage> --config cfg.json      stages: mesh assemble snapshot pod
//                                            prior eigs morozov build
//   strainest run --config cfg.json          all stages in order
//   strainest experiment --config cfg.json --study case1_errors
//   strainest estimate --config cfg.json --map case1 --measurements d.csv
//
// Exit codes: 0 success, 2 config error, 3 stale artifact, 4 numerical failure.

#include "strainest/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace strainest;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
};

PipelineConfig load_config(const Options& o) {
  auto cfg = PipelineConfig::load(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.experiment_seed = *o.seed;
  if (o.replicates) {
    cfg.experiments.case1_replicates = *o.replicates;
    cfg.experiments.case2_replicates = *o.replicates;
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory (overrides config)");
  cmd->add_option("--seed", o.seed, "experiment seed (overrides config)");
  cmd->add_option("--replicates", o.replicates, "replicates per condition for experiments")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"strainest: real-time surface pressure estimation from structural strain"};
  app.require_subcommand(1);
  Options opts;

  std::string stage_run;
  for (const auto& stage : Pipeline::stages()) {
    auto* cmd = app.add_subcommand(stage, "run the '" + stage + "' stage");
    add_common(cmd, opts);
    cmd->callback([&, stage] { stage_run = stage; });
  }
  auto* run = app.add_subcommand("run", "run every stage in order");
  add_common(run, opts);

  std::string study;
  auto* exp = app.add_subcommand("experiment", "run a study and write CSV reports");
  add_common(exp, opts);
  exp->add_option("--study", study, "case1_errors | case2_recovery | coeff_errors | latency | all")->required();

  std::string which = "case1", measurements = "-", output = "-";
  double mach = 5.0;
  auto* est = app.add_subcommand("estimate", "estimate pressure from measured strains");
  add_common(est, opts);
  est->add_option("--map", which, "case1 | case2")->check(CLI::IsMember({"case1", "case2"}));
  est->add_option("--measurements", measurements, "CSV file with one measurement per line ('-' = stdin)");
  est->add_option("--output", output, "JSON-lines output ('-' = stdout)");
  est->add_option("--mach", mach, "Mach number for the coefficient normalization");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Pipeline pipe(load_config(opts));
    if (!stage_run.empty()) {
      pipe.run_stage(stage_run);
      std::cerr << "stage '" << stage_run << "' done\n";
    } else if (run->parsed()) {
      for (const auto& s : Pipeline::stages()) {
        pipe.run_stage(s);
        std::cerr << "stage '" << s << "' done\n";
      }
    } else if (exp->parsed()) {
      const auto list = study == "all" ? Pipeline::studies() : std::vector<std::string>{study};
      for (const auto& s : list)
        for (const auto& p : pipe.cmd_experiment(s)) std::cerr << "wrote " << p.string() << '\n';
    } else if (est->parsed()) {
      std::ifstream fin;
      std::ofstream fout;
      if (measurements != "-") {
        fin.open(measurements);
        if (!fin) throw ParameterError("cannot open measurement file " + measurements);
      }
      if (output != "-") {
        fout.open(output);
        if (!fout) throw ParameterError("cannot open output file " + output);
      }
      pipe.cmd_estimate(which, measurements == "-" ? std::cin : fin, output == "-" ? std::cout : fout, mach);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
