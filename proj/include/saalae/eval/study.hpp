#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "saalae/eval/features.hpp"
#include "saalae/eval/perturb.hpp"

namespace saalae::eval {

// Distance between source features and perturbed features (rows are samples).
using Criterion = std::function<double(const Matrix& source, const Matrix& perturbed)>;

struct NamedCriterion {
  std::string name;
  Criterion fn;
};

// fid, emd, kld, jsd.
std::vector<NamedCriterion> default_criteria(std::uint64_t seed = 0);

// "monotone" when strictly increasing, otherwise "non-monotone".
std::string monotonicity_verdict(const std::vector<double>& values);

struct CriterionCurve {
  std::string criterion;
  std::vector<double> raw;
  std::vector<double> normalized;  // raw / raw[level 1]; raw when raw[level 1] is 0
  std::string verdict;
  bool operator==(const CriterionCurve&) const = default;
};

struct KindCurves {
  std::string kind;
  std::vector<int> levels;
  std::vector<double> parameters;
  std::vector<CriterionCurve> curves;
  bool operator==(const KindCurves&) const = default;
};

struct StudyResult {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  std::string study;  // "criteria" | "sample_size"
  std::string extractor;
  std::uint64_t seed = 0;
  std::int64_t n_images = 0;

  // criteria study
  std::vector<KindCurves> kinds;

  // sample-size study
  std::string related_kind;
  int related_level = 0;
  int resamples = 0;
  std::vector<int> sizes;
  std::vector<std::vector<double>> fid;  // [size][resample]
  std::vector<double> mean, stddev, cv;

  const CriterionCurve& curve(const std::string& kind, const std::string& criterion) const;

  nlohmann::json to_json() const;
  // Throws on an unknown schema version or missing fields.
  static StudyResult from_json(const nlohmann::json& j);
  bool operator==(const StudyResult&) const = default;
};

struct CriterionStudyOptions {
  std::vector<Perturbation> kinds{kAllPerturbations.begin(), kAllPerturbations.end()};
  std::uint64_t seed = 0;
  std::size_t min_images = 1000;
};

// Every criterion between the source set and its perturbed copy at levels 1..3, per kind.
StudyResult criterion_study(std::span<const data::Image> images, const FeatureExtractor& extractor,
                            const std::vector<NamedCriterion>& criteria, const CriterionStudyOptions& options = {});

struct SampleSizeOptions {
  std::vector<int> sizes{50, 100, 500, 1000, 2000};
  int resamples = 5;
  // The second group is the pool under this perturbation, so the two groups are related but distinct.
  Perturbation related = Perturbation::blur;
  int related_level = 2;
  std::uint64_t seed = 0;
};

// For each size n and resample r: FID between n pool images and n disjoint pool images of the related group.
StudyResult sample_size_study(std::span<const data::Image> images, const FeatureExtractor& extractor,
                              const SampleSizeOptions& options = {});

// Line chart(s) as SVG: normalized criterion curves per kind, or mean FID ± std over sample sizes.
void write_svg_plot(const StudyResult& result, const std::filesystem::path& path);

}  // namespace saalae::eval
