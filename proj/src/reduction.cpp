#include "strainest/reduction.hpp"

#include "strainest/container.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace strainest {

namespace {

Vector column_mean(const Matrix& P) { return P.rowwise().mean(); }

Matrix centered(const Matrix& P, const Vector& mean) { return P.colwise() - mean; }

void fix_sign(Eigen::Ref<Vector> v) {
  Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  if (v[imax] < 0.0) v = -v;
}

}  // namespace

Vector PodBasis::cumulative_energy() const {
  const Vector e = singular_values.array().square();
  const double total = e.sum();
  if (total <= 0.0) return {};
  Vector out(e.size());
  double acc = 0.0;
  for (Index i = 0; i < e.size(); ++i) out[i] = (acc += e[i]) / total;
  return out;
}

PodBasis compute_pod(const Matrix& P, const PodSelector& selector) {
  require(P.cols() >= 2, "compute_pod: need at least two snapshots");
  const Index kmax = std::min(P.rows(), P.cols());
  if (selector.kind == PodSelector::Kind::Fixed) {
    require(selector.rank >= 0 && selector.rank <= kmax, "compute_pod: r exceeds min(n_p, N)");
  } else {
    require(selector.threshold > 0.0 && selector.threshold <= 1.0, "compute_pod: energy threshold must be in (0, 1]");
  }

  PodBasis basis;
  basis.mean = column_mean(P);
  const Matrix Pc = centered(P, basis.mean);
  Eigen::BDCSVD<Matrix> svd(Pc, Eigen::ComputeThinU);
  basis.singular_values = svd.singularValues();

  Index r = selector.rank;
  if (selector.kind == PodSelector::Kind::Energy) {
    const Vector cum = basis.cumulative_energy();
    r = 0;
    if (cum.size() > 0) {
      // Guard against round-off leaving the last entry a hair below 1.
      while (r < cum.size() && cum[r] < selector.threshold - 1e-15) ++r;
      r = std::min(r + 1, cum.size());
    }
  }
  basis.modes = svd.matrixU().leftCols(r);
  for (Index j = 0; j < r; ++j) fix_sign(basis.modes.col(j));
  return basis;
}

PodBasis compute_pod(const SnapshotSet& snaps, const PodSelector& selector) {
  auto basis = compute_pod(snaps.fields, selector);
  basis.source_digest = snaps.digest();
  return basis;
}

Vector reconstruct_pressure(const PodBasis& basis, const Vector& c) {
  require_size(c.size(), basis.r(), "reconstruct_pressure");
  return basis.mean + basis.modes * c;
}

Vector project_coeffs(const PodBasis& basis, const Vector& p) {
  require_size(p.size(), basis.n_p(), "project_coeffs");
  return basis.modes.transpose() * (p - basis.mean);
}

PriorModel compute_prior(const Matrix& P) {
  require(P.cols() >= 2, "compute_prior: need at least two snapshots");
  PriorModel prior;
  prior.mean = column_mean(P);
  prior.factor = centered(P, prior.mean) / std::sqrt(static_cast<double>(P.cols() - 1));
  return prior;
}

PriorModel compute_prior(const SnapshotSet& snaps) {
  auto prior = compute_prior(snaps.fields);
  prior.source_digest = snaps.digest();
  return prior;
}

void save_pod(const PodBasis& basis, const std::filesystem::path& path) {
  Container c;
  c.put_text("kind", "pod");
  c.put("mean", basis.mean);
  c.put("modes", basis.modes);
  c.put("singular_values", basis.singular_values);
  c.put_text("source_digest", basis.source_digest);
  c.save(path);
}

PodBasis load_pod(const std::filesystem::path& path) {
  const auto c = Container::load(path);
  if (c.text("kind") != "pod") throw FormatError(path.string() + ": not a POD basis");
  return {c.vector("mean"), c.dense("modes"), c.vector("singular_values"), c.text("source_digest")};
}

void save_prior(const PriorModel& prior, const std::filesystem::path& path) {
  Container c;
  c.put_text("kind", "prior");
  c.put("mean", prior.mean);
  c.put("factor", prior.factor);
  c.put_text("source_digest", prior.source_digest);
  c.save(path);
}

PriorModel load_prior(const std::filesystem::path& path) {
  const auto c = Container::load(path);
  if (c.text("kind") != "prior") throw FormatError(path.string() + ": not a prior model");
  return {c.vector("mean"), c.dense("factor"), c.text("source_digest")};
}

std::string digest(const PodBasis& basis) {
  Digest d;
  d.update(basis.mean).update(basis.modes).update(basis.singular_values).update(basis.source_digest);
  return d.hex();
}

std::string digest(const PriorModel& prior) {
  Digest d;
  d.update(prior.mean).update(prior.factor).update(prior.source_digest);
  return d.hex();
}

}  // namespace strainest
