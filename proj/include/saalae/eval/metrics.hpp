#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "saalae/eval/features.hpp"

namespace saalae::eval {

inline constexpr double kFidJitter = 1e-6;
inline constexpr int kEmdProjections = 128;
inline constexpr int kHistogramBins = 64;
inline constexpr double kHistogramSmoothing = 1e-10;

struct GaussianSummary {
  Vector mean;
  Matrix covariance;  // unbiased
  std::int64_t count = 0;
};

// Rows are samples. Throws for fewer than two rows.
GaussianSummary summarize(const Matrix& features);

// Symmetric square root of a symmetric PSD matrix; eigenvalues below zero are clamped.
Matrix matrix_sqrt_psd(const Matrix& c);

// ‖m_a − m_b‖² + Tr(C_a + C_b − 2 (C_a C_b)^½) with jitter·I added to both covariances; clamped at 0.
double fid(const GaussianSummary& a, const GaussianSummary& b, double jitter = kFidJitter);
double fid(const Matrix& a, const Matrix& b);

// Sliced Wasserstein-1 over seeded random unit directions.
double emd(const Matrix& a, const Matrix& b, int projections = kEmdProjections, std::uint64_t seed = 0);
// Exact 1-D Wasserstein-1 between two empirical samples.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

// Mean over dimensions of histogram divergences (pooled min-max range, smoothed).
double kld(const Matrix& a, const Matrix& b, int bins = kHistogramBins, double smoothing = kHistogramSmoothing);
double jsd(const Matrix& a, const Matrix& b, int bins = kHistogramBins, double smoothing = kHistogramSmoothing);
// KL(p ‖ q) for normalized histograms.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct MetricReport {
  std::string extractor;
  std::int64_t n_a = 0, n_b = 0;
  double fid = 0, emd = 0, kld = 0, jsd = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

MetricReport compare(std::span<const data::Image> a, std::span<const data::Image> b, const FeatureExtractor& extractor,
                     std::uint64_t seed = 0);

}  // namespace saalae::eval
