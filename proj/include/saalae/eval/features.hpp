#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include <Eigen/Core>

#include "saalae/data/dataset.hpp"

namespace saalae::eval {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kDefaultPcaDim = 16;

// Deterministic image embedding. Rows of extract() follow the input order.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int embedding_dim() const = 0;
  virtual int resolution() const = 0;
  // (n, embedding_dim). Throws std::invalid_argument on a resolution mismatch.
  virtual Matrix extract(std::span<const data::Image> images) const = 0;
  virtual void save(const std::filesystem::path& path) const = 0;
};

// Projection of centred, flattened pixels onto the leading principal directions.
class PixelPca final : public FeatureExtractor {
 public:
  PixelPca(int resolution, Vector mean, Matrix basis, Vector variances);

  std::string name() const override { return "pixel_pca"; }
  int embedding_dim() const override { return static_cast<int>(basis_.rows()); }
  int resolution() const override { return resolution_; }
  Matrix extract(std::span<const data::Image> images) const override;
  void save(const std::filesystem::path& path) const override;

  // Variance of each component over the basis-defining set, descending.
  const Vector& component_variances() const { return variances_; }

 private:
  int resolution_;
  Vector mean_;
  Matrix basis_;  // (dim, R*R), orthonormal rows
  Vector variances_;
};

// At most 2000 images (seeded subset) define the basis. Component signs are fixed so the
// largest-magnitude loading is positive.
std::unique_ptr<PixelPca> fit_pixel_pca(std::span<const data::Image> images, int dim, std::uint64_t seed);

struct ClassifierOptions {
  int epochs = 4;
  int batch_size = 32;
  double learning_rate = 2e-3;
  int embedding_dim = 32;
  int width = 8;  // channels of the first convolution
  std::size_t max_train = 2000;
  std::uint64_t seed = 0;
};

class ShapeClassifier;

// Penultimate activations of a small convolutional classifier trained on family labels.
class ClassifierExtractor final : public FeatureExtractor {
 public:
  explicit ClassifierExtractor(std::unique_ptr<ShapeClassifier> net);
  ~ClassifierExtractor() override;

  std::string name() const override { return "classifier"; }
  int embedding_dim() const override;
  int resolution() const override;
  Matrix extract(std::span<const data::Image> images) const override;
  void save(const std::filesystem::path& path) const override;

  // Predicted family per image.
  std::vector<int> predict(std::span<const data::Image> images) const;
  // Fraction of labelled samples classified correctly.
  double accuracy(std::span<const data::Sample> samples) const;

  // Accuracy on the test split measured at the end of training.
  double held_out_accuracy = 0;

 private:
  std::unique_ptr<ShapeClassifier> net_;
};

// Trains on the labelled train split; held_out_accuracy is measured on the test split.
std::unique_ptr<ClassifierExtractor> train_classifier(const data::DatasetSplits& data, const ClassifierOptions& options);

// Either kind, as written by save().
std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& path);

}  // namespace saalae::eval
