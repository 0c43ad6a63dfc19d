#include "saalae/eval/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace saalae::eval {

namespace {

void check_pair(const Matrix& a, const Matrix& b, const char* who) {
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 samples per set");
  if (a.cols() != b.cols() || a.cols() < 1) throw std::invalid_argument(std::string(who) + ": feature dimensions differ");
  if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument(std::string(who) + ": non-finite features");
}

std::vector<double> histogram(const Matrix& x, Eigen::Index col, double lo, double hi, int bins, double smoothing) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int k = static_cast<int>(std::floor((x(i, col) - lo) / (hi - lo) * bins));
    h[static_cast<std::size_t>(std::clamp(k, 0, bins - 1))] += 1.0;
  }
  double total = 0;
  for (auto& v : h) {
    v = v / double(x.rows()) + smoothing;
    total += v;
  }
  for (auto& v : h) v /= total;
  return h;
}

template <typename F>
double histogram_divergence(const Matrix& a, const Matrix& b, int bins, double smoothing, const char* who, F&& f) {
  check_pair(a, b, who);
  if (bins < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 bins");
  double acc = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double lo = std::min(a.col(j).minCoeff(), b.col(j).minCoeff());
    const double hi = std::max(a.col(j).maxCoeff(), b.col(j).maxCoeff());
    if (!(hi > lo)) continue;  // every value equal in both sets
    acc += f(histogram(a, j, lo, hi, bins, smoothing), histogram(b, j, lo, hi, bins, smoothing));
  }
  return acc / double(a.cols());
}

}  // namespace

GaussianSummary summarize(const Matrix& features) {
  if (features.rows() < 2) throw std::invalid_argument("summarize: need at least 2 samples");
  if (!features.allFinite()) throw std::invalid_argument("summarize: non-finite features");
  GaussianSummary s;
  s.count = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Matrix centred = features.rowwise() - s.mean.transpose();
  s.covariance = (centred.transpose() * centred) / double(features.rows() - 1);
  return s;
}

Matrix matrix_sqrt_psd(const Matrix& c) {
  if (c.rows() != c.cols()) throw std::invalid_argument("matrix_sqrt_psd: matrix must be square");
  const Matrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error("matrix_sqrt_psd: eigendecomposition failed");
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double fid(const GaussianSummary& a, const GaussianSummary& b, double jitter) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("fid: feature dimensions differ");
  const auto d = a.mean.size();
  const Matrix ca = a.covariance + jitter * Matrix::Identity(d, d);
  const Matrix cb = b.covariance + jitter * Matrix::Identity(d, d);
  // Tr (C_a C_b)^½ = Tr (S C_b S)^½ with S = C_a^½, and S C_b S is symmetric PSD.
  const Matrix s = matrix_sqrt_psd(ca);
  const Matrix m = s * cb * s;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) {
    throw std::runtime_error("fid: covariance product could not be decomposed");
  }
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-6 * scale) {
    throw std::runtime_error("fid: singular covariance not resolved by jitter");
  }
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double fid(const Matrix& a, const Matrix& b) {
  check_pair(a, b, "fid");
  return fid(summarize(a), summarize(b));
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integral of |F_a − F_b| over the merged support.
  std::size_t i = 0, j = 0;
  double acc = 0, prev = std::min(a.front(), b.front());
  const double na = double(a.size()), nb = double(b.size());
  while (i < a.size() || j < b.size()) {
    const double x = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    acc += std::abs(double(i) / na - double(j) / nb) * (x - prev);
    prev = x;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return acc;
}

double emd(const Matrix& a, const Matrix& b, int projections, std::uint64_t seed) {
  check_pair(a, b, "emd");
  if (projections < 1) throw std::invalid_argument("emd: need at least one projection");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double acc = 0;
  for (int r = 0; r < projections; ++r) {
    Vector dir(a.cols());
    do {
      for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = normal(rng);
    } while (dir.norm() == 0);
    dir /= dir.norm();
    const Vector pa = a * dir, pb = b * dir;
    acc += wasserstein_1d({pa.data(), pa.data() + pa.size()}, {pb.data(), pb.data() + pb.size()});
  }
  return acc / projections;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("kl_divergence: histogram sizes differ");
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return std::numeric_limits<double>::infinity();
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, acc);
}

double kld(const Matrix& a, const Matrix& b, int bins, double smoothing) {
  return histogram_divergence(a, b, bins, smoothing, "kld",
                              [](const auto& p, const auto& q) { return kl_divergence(p, q); });
}

double jsd(const Matrix& a, const Matrix& b, int bins, double smoothing) {
  return histogram_divergence(a, b, bins, smoothing, "jsd", [](const auto& p, const auto& q) {
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
  });
}

nlohmann::json MetricReport::to_json() const {
  return {{"extractor", extractor}, {"n_a", n_a}, {"n_b", n_b}, {"fid", fid},
          {"emd", emd},             {"kld", kld}, {"jsd", jsd}, {"warnings", warnings}};
}

MetricReport compare(std::span<const data::Image> a, std::span<const data::Image> b, const FeatureExtractor& extractor,
                     std::uint64_t seed) {
  const Matrix fa = extractor.extract(a), fb = extractor.extract(b);
  MetricReport r;
  r.extractor = extractor.name();
  r.n_a = fa.rows();
  r.n_b = fb.rows();
  if (std::min(r.n_a, r.n_b) < extractor.embedding_dim() + 1) {
    r.warnings.push_back("fewer samples than embedding_dim + 1; covariance is rank deficient");
  }
  r.fid = fid(fa, fb);
  r.emd = emd(fa, fb, kEmdProjections, seed);
  r.kld = kld(fa, fb);
  r.jsd = jsd(fa, fb);
  return r;
}

}  // namespace saalae::eval
