#include "strainest/estimator.hpp"

#include "strainest/container.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ctime>
#include <sstream>

namespace strainest {

std::string to_string(EstimatorCase c) { return c == EstimatorCase::Case1 ? "case1" : "case2"; }

void InverseMap::estimate_into(const Eigen::Ref<const Vector>& d, Eigen::Ref<Vector> out) const {
  require_size(d.size(), n_d(), "estimate");
  require_size(out.size(), n_q(), "estimate output");
  out.noalias() = T * d;
  out += k;
}

Vector InverseMap::estimate(const Vector& d) const {
  Vector out(n_q());
  estimate_into(d, out);
  return out;
}

Matrix InverseMap::estimate_batch(const Matrix& D) const {
  require_size(D.rows(), n_d(), "estimate_batch");
  Matrix out(n_q(), D.cols());
  const auto m = static_cast<std::ptrdiff_t>(D.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < m; ++j) estimate_into(D.col(j), out.col(j));
  return out;
}

Matrix InverseMap::estimate_batch_serial(const Matrix& D) const {
  require_size(D.rows(), n_d(), "estimate_batch");
  Matrix out(n_q(), D.cols());
  for (Index j = 0; j < D.cols(); ++j) estimate_into(D.col(j), out.col(j));
  return out;
}

Vector InverseMap::apply_posterior(const Vector& v) const {
  require_size(v.size(), n_q(), "apply_posterior");
  if (kind == EstimatorCase::Case1) return posterior * v;
  return prior_factor * (woodbury_core * (prior_factor.transpose() * v)) / gamma;
}

Vector InverseMap::posterior_variance() const {
  if (kind == EstimatorCase::Case1) return posterior.diagonal();
  const Matrix SK = prior_factor * woodbury_core;
  return (SK.array() * prior_factor.array()).rowwise().sum().matrix() / gamma;
}

Matrix InverseMap::posterior_covariance() const {
  if (kind == EstimatorCase::Case1) return posterior;
  return prior_factor * woodbury_core * prior_factor.transpose() / gamma;
}

std::string InverseMap::digest() const {
  Digest d;
  d.update(to_string(kind)).update(T).update(k).update(gamma).update(sigma);
  d.update(z_digest).update(noise_digest).update(basis_digest);
  return d.hex();
}

InverseMap build_case1(const Matrix& Z, const NoiseModel& noise, const Vector& data_offset) {
  const Index n_d = Z.rows(), n_q = Z.cols();
  require_size(n_d, noise.n_d(), "build_case1 noise");
  require(n_q >= 1 && n_q <= n_d, "build_case1: need 1 <= n_q <= n_d");

  const Matrix Zw = noise.whiten(Z);
  Eigen::HouseholderQR<Matrix> qr(Zw);
  const Matrix R = qr.matrixQR().topRows(n_q).triangularView<Eigen::Upper>();
  const Matrix Q = qr.householderQ() * Matrix::Identity(n_d, n_q);

  Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeFullV);
  const Vector s = svd.singularValues();
  if (!(s[n_q - 1] > 1e-12 * s[0])) {
    const Vector v = svd.matrixV().col(n_q - 1);
    Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    std::ostringstream msg;
    msg << "build_case1: Z is rank deficient (sigma_min/sigma_max = " << (s[0] > 0 ? s[n_q - 1] / s[0] : 0.0)
        << "); the null direction is dominated by parameter " << imax << " (weight " << v[imax] << ")";
    throw NumericalError(msg.str());
  }

  const auto Rt = R.triangularView<Eigen::Upper>();
  InverseMap map;
  map.kind = EstimatorCase::Case1;
  const Matrix Linv = noise.whiten(Matrix(Matrix::Identity(n_d, n_d)));
  map.T = Rt.solve(Q.transpose() * Linv);
  const Matrix Rinv = Rt.solve(Matrix::Identity(n_q, n_q));
  map.posterior = Rinv * Rinv.transpose();
  if (data_offset.size() == 0) {
    map.k = Vector::Zero(n_q);
  } else {
    require_size(data_offset.size(), n_d, "build_case1 data offset");
    map.k = -(map.T * data_offset);
  }
  map.sigma = noise.sigma();
  Digest zd;
  zd.update(Z);
  map.z_digest = zd.hex();
  map.noise_digest = noise.digest();
  return map;
}

namespace {

// M = gamma Gamma_n + Y Y^T with the conditioning guard.
Eigen::LLT<Matrix> factor_data_space(const NoiseModel& noise, const Matrix& Y, double gamma) {
  Matrix M = Y * Y.transpose();
  M += gamma * noise.covariance();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("case 2: eigensolver failed on gamma Gamma_n + Z Gamma_pr Z^T");
  const double lmin = eig.eigenvalues().minCoeff(), lmax = eig.eigenvalues().maxCoeff();
  if (!(lmax > 0.0) || lmin < 1e-12 * lmax) {
    std::ostringstream msg;
    msg << "case 2: gamma Gamma_n + Z Gamma_pr Z^T is not numerically SPD (lambda_min = " << lmin
        << ", lambda_max = " << lmax << ")";
    throw NumericalError(msg.str());
  }
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success) throw NumericalError("case 2: Cholesky of the data-space operator failed");
  return llt;
}

}  // namespace

InverseMap build_case2(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior, double gamma) {
  require(std::isfinite(gamma) && gamma > 0.0, "build_case2: gamma must be positive");
  require_size(Z.rows(), noise.n_d(), "build_case2 noise");
  require_size(Z.cols(), prior.n_q(), "build_case2 prior");

  const Matrix& S = prior.factor;
  const Matrix Y = Z * S;
  const auto llt = factor_data_space(noise, Y, gamma);
  const Matrix G = llt.solve(Y);  // M^-1 Y, n_d x N

  InverseMap map;
  map.kind = EstimatorCase::Case2;
  map.gamma = gamma;
  map.T = S * G.transpose();
  map.k = prior.mean - map.T * (Z * prior.mean);
  map.prior_factor = S;
  map.woodbury_core = Matrix::Identity(S.cols(), S.cols()) - Y.transpose() * G;
  map.sigma = noise.sigma();
  Digest zd;
  zd.update(Z);
  map.z_digest = zd.hex();
  map.noise_digest = noise.digest();
  map.basis_digest = digest(prior);
  return map;
}

ConditionReport relative_condition_number(const Matrix& Z, const Vector& q, const Vector& d) {
  require_size(q.size(), Z.cols(), "relative_condition_number q");
  require_size(d.size(), Z.rows(), "relative_condition_number d");
  const double qn = q.norm(), dn = d.norm();
  const double zqn = (Z * q).norm();
  require(qn > 0.0 && dn > 0.0, "relative_condition_number: q and d must be nonzero");
  require(zqn > 0.0, "relative_condition_number: Z q must be nonzero");
  Eigen::JacobiSVD<Matrix> svd(Z);
  ConditionReport r;
  r.sigma_max = svd.singularValues()[0];
  r.sigma_min = svd.singularValues()[svd.singularValues().size() - 1];
  r.kappa = r.sigma_max / r.sigma_min;
  r.nu = r.sigma_max * qn / zqn;
  r.cos_theta = zqn / dn;
  r.K = r.kappa / (r.nu * r.cos_theta);
  return r;
}

ConditionReport relative_condition_number(const Matrix& Z, const ConditionPreset& preset) {
  require(preset.d_scale > 0.0 && preset.q_norm > 0.0, "condition preset: norms must be positive");
  Eigen::JacobiSVD<Matrix> svd(Z);
  ConditionReport r;
  r.sigma_max = svd.singularValues()[0];
  r.sigma_min = svd.singularValues()[svd.singularValues().size() - 1];
  if (!(r.sigma_min > 0.0)) throw NumericalError("relative_condition_number: Z is rank deficient");
  const double dn = preset.d_scale * std::sqrt(static_cast<double>(Z.rows()));
  r.kappa = r.sigma_max / r.sigma_min;
  // nu cos(theta) = |Z| |q| / |d|; Z q itself cancels.
  r.nu = std::numeric_limits<double>::quiet_NaN();
  r.cos_theta = std::numeric_limits<double>::quiet_NaN();
  r.K = r.kappa * dn / (r.sigma_max * preset.q_norm);
  return r;
}

HessianSpectrum preconditioned_hessian_eigs(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior,
                                            double eps_cut) {
  require_size(Z.rows(), noise.n_d(), "preconditioned_hessian_eigs noise");
  require_size(Z.cols(), prior.n_q(), "preconditioned_hessian_eigs prior");
  const Matrix W = noise.whiten(Matrix(Z * prior.factor));
  // W^T W = S^T H_misfit S; its eigenpairs come from the SVD of W.
  Eigen::BDCSVD<Matrix> svd(W, Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("preconditioned_hessian_eigs: SVD failed");
  const Vector lambda = svd.singularValues().array().square();
  Index m = 0;
  if (lambda.size() > 0 && lambda[0] > 0.0)
    while (m < lambda.size() && lambda[m] > eps_cut * lambda[0]) ++m;

  HessianSpectrum out;
  out.eigenvalues = lambda.head(m);
  out.eigenvectors = prior.factor * svd.matrixV().leftCols(m);
  out.prior_mean = prior.mean;
  return out;
}

Vector project_onto_modes(const Vector& p, const HessianSpectrum& spectrum, Index r) {
  require(r >= 0 && r <= spectrum.count(), "project_onto_modes: r out of range");
  require_size(p.size(), spectrum.prior_mean.size(), "project_onto_modes");
  if (r == 0) return spectrum.prior_mean;
  const Matrix Br = spectrum.eigenvectors.leftCols(r);
  const Vector c = Br.colPivHouseholderQr().solve(p - spectrum.prior_mean);
  return spectrum.prior_mean + Br * c;
}

namespace {

double median(std::vector<double> v) {
  const std::size_t n = v.size(), mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double med = v[mid];
  if (n % 2 == 0) med = 0.5 * (med + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return med;
}

}  // namespace

double median_misfit(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior, double gamma,
                     const Matrix& D) {
  require(gamma > 0.0, "median_misfit: gamma must be positive");
  require(D.cols() > 0, "median_misfit: empty calibration set");
  require_size(D.rows(), Z.rows(), "median_misfit");
  // Z q_hat - d = -gamma Gamma_n M^-1 (d - Z q_bar), M = gamma Gamma_n + Y Y^T.
  const Matrix Y = Z * prior.factor;
  const auto llt = factor_data_space(noise, Y, gamma);
  const Matrix E = D.colwise() - Z * prior.mean;
  const Matrix R = gamma * noise.apply_covariance(Matrix(llt.solve(E)));
  std::vector<double> norms(static_cast<std::size_t>(D.cols()));
  for (Index j = 0; j < D.cols(); ++j) norms[static_cast<std::size_t>(j)] = R.col(j).norm();
  return median(std::move(norms));
}

MorozovResult select_gamma_morozov(const Matrix& Z, const NoiseModel& noise, const PriorModel& prior,
                                   const Matrix& D, double lambda1, const MorozovOptions& opts) {
  require(lambda1 > 0.0, "select_gamma_morozov: lambda_1 must be positive");
  require(opts.lower > 0.0 && opts.upper > opts.lower, "select_gamma_morozov: invalid bracket");
  MorozovResult res;
  res.delta = noise.sigma() * std::sqrt(static_cast<double>(Z.rows()));
  auto misfit = [&](double lg) { return median_misfit(Z, noise, prior, std::pow(10.0, lg), D); };

  double lo = std::log10(opts.lower * lambda1), hi = std::log10(opts.upper * lambda1);
  double f_lo = misfit(lo), f_hi = misfit(hi);
  if (!(f_lo <= res.delta && f_hi >= res.delta)) {
    std::ostringstream msg;
    msg << "select_gamma_morozov: bracket does not straddle delta = " << res.delta << " (misfit " << f_lo
        << " at gamma = " << std::pow(10.0, lo) << ", " << f_hi << " at gamma = " << std::pow(10.0, hi) << ")";
    throw NumericalError(msg.str());
  }
  const double slack = 1e-10 * res.delta;
  double mid = 0.5 * (lo + hi), f_mid = misfit(mid);
  for (res.iterations = 1;; ++res.iterations) {
    if (f_mid < f_lo - slack || f_mid > f_hi + slack)
      throw NumericalError("select_gamma_morozov: data misfit is not monotone in gamma");
    if (std::abs(f_mid - res.delta) <= opts.rel_tol * res.delta || res.iterations >= opts.max_iter ||
        hi - lo < 1e-12)
      break;
    if (f_mid < res.delta) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
      f_hi = f_mid;
    }
    mid = 0.5 * (lo + hi);
    f_mid = misfit(mid);
  }
  res.gamma = std::pow(10.0, mid);
  res.median_misfit = f_mid;
  return res;
}

namespace {

std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void save_spectrum(const HessianSpectrum& spectrum, const std::filesystem::path& path) {
  Container c;
  c.put_text("kind", "hessian_spectrum");
  c.put("eigenvalues", spectrum.eigenvalues);
  c.put("eigenvectors", spectrum.eigenvectors);
  c.put("prior_mean", spectrum.prior_mean);
  c.save(path);
}

HessianSpectrum load_spectrum(const std::filesystem::path& path) {
  const auto c = Container::load(path);
  if (c.text("kind") != "hessian_spectrum") throw FormatError(path.string() + ": not a Hessian spectrum");
  return {c.vector("eigenvalues"), c.dense("eigenvectors"), c.vector("prior_mean")};
}

void save_inverse_map(const InverseMap& map, const std::filesystem::path& path) {
  Container c;
  c.put_text("kind", "inverse_map");
  c.put_text("case", to_string(map.kind));
  c.put("T", map.T);
  c.put("k", map.k);
  c.put_scalar("gamma", map.gamma);
  c.put_scalar("sigma", map.sigma);
  c.put_text("z_digest", map.z_digest);
  c.put_text("noise_digest", map.noise_digest);
  c.put_text("basis_digest", map.basis_digest);
  if (map.kind == EstimatorCase::Case1) {
    c.put("posterior", map.posterior);
  } else {
    c.put("prior_factor", map.prior_factor);
    c.put("woodbury_core", map.woodbury_core);
  }
  c.save(path);

  nlohmann::ordered_json j;
  j["format"] = "strainest-inverse-map";
  j["version"] = 1;
  j["case"] = to_string(map.kind);
  j["n_q"] = map.n_q();
  j["n_d"] = map.n_d();
  j["gamma"] = map.gamma;
  j["sigma"] = map.sigma;
  j["noise"] = {{"generator", GaussianStream::kGenerator},
                {"gaussian_method", GaussianStream::kMethod},
                {"stream_rule", "splitmix64(splitmix64(splitmix64(base) ^ condition) ^ replicate)"}};
  j["digests"] = {{"Z", map.z_digest},
                  {"noise", map.noise_digest},
                  {"basis", map.basis_digest},
                  {"map", map.digest()},
                  {"container", digest_file(path)}};
  j["built_at"] = utc_timestamp();
  auto manifest = path;
  manifest += ".json";
  write_file_atomic(manifest, j.dump(2) + "\n");
}

InverseMap load_inverse_map(const std::filesystem::path& path) {
  const auto c = Container::load(path);
  if (c.text("kind") != "inverse_map") throw FormatError(path.string() + ": not an inverse map");
  InverseMap map;
  const auto kind = c.text("case");
  if (kind == "case1")
    map.kind = EstimatorCase::Case1;
  else if (kind == "case2")
    map.kind = EstimatorCase::Case2;
  else
    throw FormatError(path.string() + ": unknown estimator case '" + kind + "'");
  map.T = c.dense("T");
  map.k = c.vector("k");
  map.gamma = c.scalar("gamma");
  map.sigma = c.scalar("sigma");
  map.z_digest = c.text("z_digest");
  map.noise_digest = c.text("noise_digest");
  map.basis_digest = c.text("basis_digest");
  if (map.kind == EstimatorCase::Case1) {
    map.posterior = c.dense("posterior");
  } else {
    map.prior_factor = c.dense("prior_factor");
    map.woodbury_core = c.dense("woodbury_core");
  }
  if (map.k.size() != map.T.rows()) throw FormatError(path.string() + ": inconsistent T/k shapes");
  return map;
}

}  // namespace strainest
