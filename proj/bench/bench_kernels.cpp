#include "strainest/aero.hpp"
#include "strainest/elasticity.hpp"
#include "strainest/estimator.hpp"
#include "strainest/geometry.hpp"
#include "strainest/pressure.hpp"

#include <benchmark/benchmark.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

using namespace strainest;

namespace {

GeometryParams bench_geometry() {
  GeometryParams g;
  g.target_edge_length = 0.05;
  g.min_dihedral_deg = 5.0;
  return g;
}

struct Fixture {
  GeometryParams params = bench_geometry();
  Mesh mesh = make_shell(params);
  Material mat;
  std::vector<SensorSpec> sensors = place_sensors(mesh, params, SensorConfig::Config2);
  StructuralOperators ops = assemble_operators(mesh, mat, sensors);
  ForwardSolver solver{ops.A};
  Matrix C;

  Fixture() {
    // A modest 32-column load block keeps one iteration under a second.
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    Matrix V(ops.n_p, 32);
    for (Index i = 0; i < V.size(); ++i) V.data()[i] = nd(rng);
    C = Matrix(ops.constrained_loads() * V);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

InverseMap random_map(Index n_q, Index n_d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  InverseMap m;
  m.T.resize(n_q, n_d);
  for (Index i = 0; i < m.T.size(); ++i) m.T.data()[i] = nd(rng);
  m.k = Vector::Zero(n_q);
  for (Index i = 0; i < n_q; ++i) m.k[i] = nd(rng);
  return m;
}

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix M(rows, cols);
  for (Index i = 0; i < M.size(); ++i) M.data()[i] = nd(rng);
  return M;
}

void BM_AssembleSerial(benchmark::State& s) {
  auto& f = fixture();
  for (auto _ : s) benchmark::DoNotOptimize(assemble_stiffness_unconstrained_serial(f.mesh, f.mat));
}
void BM_AssembleParallel(benchmark::State& s) {
  auto& f = fixture();
  for (auto _ : s) benchmark::DoNotOptimize(assemble_stiffness_unconstrained(f.mesh, f.mat));
}
void BM_P2OSerial(benchmark::State& s) {
  auto& f = fixture();
  for (auto _ : s) benchmark::DoNotOptimize(assemble_p2o_serial(f.ops.B, f.solver, f.C));
}
void BM_P2OParallel(benchmark::State& s) {
  auto& f = fixture();
  for (auto _ : s) benchmark::DoNotOptimize(assemble_p2o(f.ops.B, f.solver, f.C, P2ORoute::Forward).Z);
}
void BM_SnapshotsSerial(benchmark::State& s) {
  auto& f = fixture();
  const ConditionGrid grid{{5.0, 6.0, 7.0}, {-4, 0, 4}, {-4, 0, 4}, 20000.0};
  for (auto _ : s) benchmark::DoNotOptimize(database_snapshots_serial(f.mesh, f.params, grid).fields);
}
void BM_SnapshotsParallel(benchmark::State& s) {
  auto& f = fixture();
  const ConditionGrid grid{{5.0, 6.0, 7.0}, {-4, 0, 4}, {-4, 0, 4}, 20000.0};
  for (auto _ : s) benchmark::DoNotOptimize(database_snapshots(f.mesh, f.params, grid).fields);
}
void BM_EstimateBatchSerial(benchmark::State& s) {
  const InverseMap m = random_map(10000, 54, 1);
  const Matrix D = random_matrix(54, 64, 2);
  for (auto _ : s) benchmark::DoNotOptimize(m.estimate_batch_serial(D));
}
void BM_EstimateBatchParallel(benchmark::State& s) {
  const InverseMap m = random_map(10000, 54, 1);
  const Matrix D = random_matrix(54, 64, 2);
  for (auto _ : s) benchmark::DoNotOptimize(m.estimate_batch(D));
}
void BM_EstimateSingle(benchmark::State& s) {
  const InverseMap m = random_map(s.range(0), 54, 1);
  const Vector d = random_matrix(54, 1, 2).col(0);
  Vector out(m.n_q());
  for (auto _ : s) {
    m.estimate_into(d, out);
    benchmark::DoNotOptimize(out.data());
  }
}
void BM_CoefficientMap(benchmark::State& s) {
  CoefficientAffineMap cm;
  cm.A = random_matrix(5, s.range(0), 4);
  cm.offset = random_matrix(5, 1, 5).col(0);
  const Vector c = random_matrix(s.range(0), 1, 6).col(0);
  for (auto _ : s) benchmark::DoNotOptimize(cm.evaluate(c));
}

BENCHMARK(BM_AssembleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssembleParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_P2OSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_P2OParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SnapshotsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SnapshotsParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimateBatchSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EstimateBatchParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EstimateSingle)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_CoefficientMap)->Arg(5)->Arg(10)->Unit(benchmark::kNanosecond);

// Per-query percentiles, which Google Benchmark does not report.
int latency_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    std::fprintf(stderr, "cannot open %s\n", path.c_str());
    return 1;
  }
  out << "n_q,n_d,queries,p50_ns,p99_ns\n";
  for (Index n_q : {Index(1000), Index(10000)}) {
    const InverseMap m = random_map(n_q, 54, 11);
    const Matrix D = random_matrix(54, 256, 12);
    Vector q(n_q);
    const int queries = 20000;
    std::vector<double> ns(queries);
    for (int i = 0; i < queries; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      m.estimate_into(D.col(i % D.cols()), q);
      const auto t1 = std::chrono::steady_clock::now();
      benchmark::DoNotOptimize(q.data());
      ns[static_cast<std::size_t>(i)] = std::chrono::duration<double, std::nano>(t1 - t0).count();
    }
    std::sort(ns.begin(), ns.end());
    out << n_q << ",54," << queries << "," << ns[ns.size() / 2] << "," << ns[ns.size() * 99 / 100] << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strncmp(argv[i], "--latency-csv=", 14) == 0) return latency_csv(argv[i] + 14);
  }
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
