#include "strainest/noise.hpp"

#include "strainest/container.hpp"

#include <algorithm>
#include <cmath>

namespace strainest {

NoiseModel NoiseModel::diagonal(double sigma, Index n_d) {
  require(std::isfinite(sigma) && sigma > 0.0, "noise model: sigma must be positive");
  require(n_d > 0, "noise model: n_d must be positive");
  NoiseModel m;
  m.n_d_ = n_d;
  m.sigma_ = sigma;
  return m;
}

NoiseModel NoiseModel::from_cholesky(const Matrix& L) {
  require(L.rows() == L.cols() && L.rows() > 0, "noise model: Cholesky factor must be square");
  require(L.isLowerTriangular(0.0), "noise model: Cholesky factor must be lower triangular");
  for (Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, i) > 0.0)) throw NumericalError("noise model: Cholesky factor has a nonpositive diagonal entry");
  }
  NoiseModel m;
  m.n_d_ = L.rows();
  m.L_ = L;
  m.sigma_ = L.norm() / std::sqrt(static_cast<double>(L.rows()));
  return m;
}

Matrix NoiseModel::cholesky() const {
  if (is_diagonal()) return sigma_ * Matrix::Identity(n_d_, n_d_);
  return L_;
}

Matrix NoiseModel::covariance() const {
  if (is_diagonal()) return sigma_ * sigma_ * Matrix::Identity(n_d_, n_d_);
  return L_ * L_.transpose();
}

Vector NoiseModel::color(const Vector& z) const {
  require_size(z.size(), n_d_, "noise color");
  if (is_diagonal()) return sigma_ * z;
  return L_.triangularView<Eigen::Lower>() * z;
}

Vector NoiseModel::whiten(const Vector& v) const {
  require_size(v.size(), n_d_, "whiten");
  if (is_diagonal()) return v / sigma_;
  return L_.triangularView<Eigen::Lower>().solve(v);
}

Matrix NoiseModel::whiten(const Matrix& M) const {
  require_size(M.rows(), n_d_, "whiten");
  if (is_diagonal()) return M / sigma_;
  return L_.triangularView<Eigen::Lower>().solve(M);
}

Vector NoiseModel::apply_covariance(const Vector& v) const {
  require_size(v.size(), n_d_, "noise covariance");
  if (is_diagonal()) return sigma_ * sigma_ * v;
  const Vector w = L_.transpose().triangularView<Eigen::Upper>() * v;
  return L_.triangularView<Eigen::Lower>() * w;
}

Matrix NoiseModel::apply_covariance(const Matrix& M) const {
  require_size(M.rows(), n_d_, "noise covariance");
  if (is_diagonal()) return sigma_ * sigma_ * M;
  const Matrix W = L_.transpose().triangularView<Eigen::Upper>() * M;
  return L_.triangularView<Eigen::Lower>() * W;
}

std::string NoiseModel::digest() const {
  Digest d;
  d.update(static_cast<std::int64_t>(n_d_)).update(sigma_);
  if (!is_diagonal()) d.update(L_);
  return d.hex();
}

namespace {

double median_abs(std::vector<double> mags) {
  require(!mags.empty(), "calibrate_sigma: empty strain database");
  const std::size_t n = mags.size(), mid = n / 2;
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid), mags.end());
  double med = mags[mid];
  if (n % 2 == 0) med = 0.5 * (med + *std::max_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid)));
  return med;
}

double finish_sigma(double median, double fraction) {
  const double sigma = fraction * median;
  if (!(sigma > 0.0)) throw NumericalError("calibrate_sigma: median strain magnitude is zero");
  return sigma;
}

}  // namespace

double calibrate_sigma(const Matrix& strains, double fraction) {
  require(fraction > 0.0, "calibrate_sigma: fraction must be positive");
  std::vector<double> mags(static_cast<std::size_t>(strains.size()));
  for (Index i = 0; i < strains.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(strains.data()[i]);
  return finish_sigma(median_abs(std::move(mags)), fraction);
}

double calibrate_sigma(const std::vector<Vector>& strains, double fraction) {
  require(fraction > 0.0, "calibrate_sigma: fraction must be positive");
  std::vector<double> mags;
  for (const auto& y : strains)
    for (Index i = 0; i < y.size(); ++i) mags.push_back(std::abs(y[i]));
  return finish_sigma(median_abs(std::move(mags)), fraction);
}

double GaussianStream::uniform() {
  const std::uint64_t bits = engine_() >> 11;  // 53 bits
  return static_cast<double>(bits) * 0x1.0p-52 - 1.0;
}

double GaussianStream::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = uniform();
    v = uniform();
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  have_spare_ = true;
  return u * f;
}

Vector GaussianStream::draw(Index n) {
  Vector z(n);
  for (Index i = 0; i < n; ++i) z[i] = next();
  return z;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t condition, std::uint64_t replicate) {
  return splitmix64(splitmix64(splitmix64(base) ^ condition) ^ replicate);
}

Vector sample_noise(const NoiseModel& model, std::uint64_t seed) {
  GaussianStream stream(seed);
  return sample_noise(model, stream);
}

Vector sample_noise(const NoiseModel& model, GaussianStream& stream) { return model.color(stream.draw(model.n_d())); }

}  // namespace strainest
