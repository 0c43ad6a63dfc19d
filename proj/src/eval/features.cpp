#include "saalae/eval/features.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "saalae/checkpoint.hpp"
#include "saalae/data/blueprint.hpp"
#include "saalae/nn/layers.hpp"
#include "saalae/training.hpp"

namespace saalae::eval {

namespace {

void check_resolution(std::span<const data::Image> images, int resolution, const std::string& who) {
  for (const auto& im : images) {
    if (im.width != resolution || im.height != resolution) {
      throw std::invalid_argument(who + " extractor expects " + std::to_string(resolution) + "x" +
                                  std::to_string(resolution) + " images, got " + std::to_string(im.width) + "x" +
                                  std::to_string(im.height));
    }
  }
}

io::NamedArray named(const std::string& name, Shape shape, std::vector<double> values,
                     io::NamedArray::DType dtype = io::NamedArray::DType::f64) {
  return {name, dtype, std::move(shape), std::move(values)};
}

const io::NamedArray& find(const io::Archive& ar, const std::string& name) {
  for (const auto& a : ar.arrays) {
    if (a.name == name) return a;
  }
  throw std::runtime_error("extractor archive lacks array '" + name + "'");
}

}  // namespace

// ---- pixel PCA -----------------------------------------------------------------------------------

PixelPca::PixelPca(int resolution, Vector mean, Matrix basis, Vector variances)
    : resolution_(resolution), mean_(std::move(mean)), basis_(std::move(basis)), variances_(std::move(variances)) {
  const auto p = static_cast<Eigen::Index>(resolution) * resolution;
  if (mean_.size() != p || basis_.cols() != p || variances_.size() != basis_.rows() || basis_.rows() < 2) {
    throw std::invalid_argument("PixelPca: inconsistent basis dimensions");
  }
}

Matrix PixelPca::extract(std::span<const data::Image> images) const {
  check_resolution(images, resolution_, "pixel_pca");
  const auto p = mean_.size();
  Matrix x(static_cast<Eigen::Index>(images.size()), p);
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (Eigen::Index j = 0; j < p; ++j) x(Eigen::Index(i), j) = images[i].pixels[std::size_t(j)] - mean_(j);
  }
  return x * basis_.transpose();
}

void PixelPca::save(const std::filesystem::path& path) const {
  io::Archive ar;
  ar.manifest = {{"kind", "pixel_pca"}, {"resolution", resolution_}, {"embedding_dim", embedding_dim()}};
  ar.arrays.push_back(named("mean", {mean_.size()}, {mean_.data(), mean_.data() + mean_.size()}));
  std::vector<double> b(std::size_t(basis_.size()));
  for (Eigen::Index r = 0; r < basis_.rows(); ++r)
    for (Eigen::Index c = 0; c < basis_.cols(); ++c) b[std::size_t(r * basis_.cols() + c)] = basis_(r, c);
  ar.arrays.push_back(named("basis", {basis_.rows(), basis_.cols()}, std::move(b)));
  ar.arrays.push_back(named("variances", {variances_.size()}, {variances_.data(), variances_.data() + variances_.size()}));
  io::write_archive(path, ar);
}

std::unique_ptr<PixelPca> fit_pixel_pca(std::span<const data::Image> images, int dim, std::uint64_t seed) {
  if (dim < 2) throw std::invalid_argument("fit_pixel_pca: embedding_dim must be >= 2");
  if (images.size() < static_cast<std::size_t>(dim) + 1) {
    throw std::invalid_argument("fit_pixel_pca: need more than embedding_dim images");
  }
  const int res = images[0].width;
  check_resolution(images, res, "pixel_pca");
  std::vector<std::size_t> idx(images.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > 2000) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(2000);
    std::sort(idx.begin(), idx.end());
  }
  const auto n = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index p = Eigen::Index(res) * res;
  Matrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = images[idx[std::size_t(i)]].pixels[std::size_t(j)];
  const Vector mean = x.colwise().mean().transpose();
  x.rowwise() -= mean.transpose();

  Matrix basis(dim, p);
  Vector variances(dim);
  if (n <= p) {
    // Eigenvectors of the (n x n) Gram matrix map to principal directions through x^T.
    Eigen::SelfAdjointEigenSolver<Matrix> es((x * x.transpose()) / double(n - 1));
    for (int k = 0; k < dim; ++k) {
      const Eigen::Index col = n - 1 - k;
      const double lambda = es.eigenvalues()(col);
      if (!(lambda > 1e-12)) throw std::invalid_argument("fit_pixel_pca: image set has fewer than dim directions");
      Vector v = x.transpose() * es.eigenvectors().col(col);
      basis.row(k) = (v / v.norm()).transpose();
      variances(k) = lambda;
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es((x.transpose() * x) / double(n - 1));
    for (int k = 0; k < dim; ++k) {
      const Eigen::Index col = p - 1 - k;
      if (!(es.eigenvalues()(col) > 1e-12)) throw std::invalid_argument("fit_pixel_pca: degenerate image set");
      basis.row(k) = es.eigenvectors().col(col).transpose();
      variances(k) = es.eigenvalues()(col);
    }
  }
  for (int k = 0; k < dim; ++k) {
    Eigen::Index at;
    basis.row(k).cwiseAbs().maxCoeff(&at);
    if (basis(k, at) < 0) basis.row(k) *= -1.0;
  }
  return std::make_unique<PixelPca>(res, mean, std::move(basis), std::move(variances));
}

// ---- classifier ----------------------------------------------------------------------------------

class ShapeClassifier : public nn::Module<float> {
 public:
  ShapeClassifier(int resolution, int width, int embedding_dim, std::uint64_t seed)
      : resolution_(resolution), width_(width), embedding_dim_(embedding_dim) {
    if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
      throw std::invalid_argument("classifier resolution must be a power of two >= 8");
    }
    if (width < 1 || embedding_dim < 2) throw std::invalid_argument("classifier width/embedding_dim too small");
    nn::Rng rng(seed);
    std::int64_t cin = 1, c = width;
    int size = resolution, k = 0;
    while (size > 4) {
      convs_.push_back(&this->add_child("conv" + std::to_string(k++),
                                        std::make_unique<nn::Conv2d<float>>(cin, c, 3, false, rng)));
      cin = c;
      c = std::min<std::int64_t>(c * 2, 4 * width);
      size /= 2;
    }
    embed_ = &this->add_child("embed", std::make_unique<nn::Linear<float>>(cin * 16, embedding_dim, false, rng));
    head_ = &this->add_child("head", std::make_unique<nn::Linear<float>>(embedding_dim, data::kFamilyCount, false, rng));
  }

  Var<float> embed(const Var<float>& x, nn::Pass pass) {
    Var<float> h = x;
    for (auto* conv : convs_) h = ops::avg_pool2(ops::leaky_relu(conv->forward(h, pass), float(nn::kLeakySlope)));
    h = ops::reshape(h, {h->value.dim(0), h->value.size() / h->value.dim(0)});
    return ops::leaky_relu(embed_->forward(h, pass), float(nn::kLeakySlope));
  }
  Var<float> logits(const Var<float>& embedding, nn::Pass pass) { return head_->forward(embedding, pass); }

  int resolution() const { return resolution_; }
  int width() const { return width_; }
  int embedding_dim() const { return embedding_dim_; }

 private:
  int resolution_, width_, embedding_dim_;
  std::vector<nn::Conv2d<float>*> convs_;
  nn::Linear<float>* embed_;
  nn::Linear<float>* head_;
};

ClassifierExtractor::ClassifierExtractor(std::unique_ptr<ShapeClassifier> net) : net_(std::move(net)) {}
ClassifierExtractor::~ClassifierExtractor() = default;

int ClassifierExtractor::embedding_dim() const { return net_->embedding_dim(); }
int ClassifierExtractor::resolution() const { return net_->resolution(); }

Matrix ClassifierExtractor::extract(std::span<const data::Image> images) const {
  check_resolution(images, resolution(), "classifier");
  Matrix out(static_cast<Eigen::Index>(images.size()), embedding_dim());
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const auto e = net_->embed(constant(data::to_batch(chunk)), nn::Pass::eval());
    for (std::size_t i = 0; i < chunk.size(); ++i)
      for (int j = 0; j < embedding_dim(); ++j)
        out(Eigen::Index(start + i), j) = e->value[std::int64_t(i) * embedding_dim() + j];
  }
  return out;
}

std::vector<int> ClassifierExtractor::predict(std::span<const data::Image> images) const {
  check_resolution(images, resolution(), "classifier");
  std::vector<int> out;
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const auto l = net_->logits(net_->embed(constant(data::to_batch(chunk)), nn::Pass::eval()), nn::Pass::eval());
    const auto k = l->value.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const float* row = l->value.data() + std::int64_t(i) * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

double ClassifierExtractor::accuracy(std::span<const data::Sample> samples) const {
  std::vector<data::Image> images;
  std::vector<int> labels;
  for (const auto& s : samples) {
    if (s.family < 0) continue;
    images.push_back(s.image);
    labels.push_back(s.family);
  }
  if (images.empty()) throw std::invalid_argument("accuracy: no labelled samples");
  const auto pred = predict(images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return double(hits) / double(pred.size());
}

void ClassifierExtractor::save(const std::filesystem::path& path) const {
  io::Archive ar;
  ar.manifest = {{"kind", "classifier"},
                 {"resolution", resolution()},
                 {"width", net_->width()},
                 {"embedding_dim", embedding_dim()},
                 {"held_out_accuracy", held_out_accuracy}};
  for (const auto& [name, v] : net_->named_parameters()) {
    ar.arrays.push_back(named(name, v->value.shape(), {v->value.storage().begin(), v->value.storage().end()},
                              io::NamedArray::DType::f32));
  }
  io::write_archive(path, ar);
}

std::unique_ptr<ClassifierExtractor> train_classifier(const data::DatasetSplits& data, const ClassifierOptions& options) {
  std::vector<const data::Sample*> pool;
  for (const auto& s : data.train) {
    if (s.family >= 0) pool.push_back(&s);
  }
  if (pool.size() < 8) throw std::invalid_argument("train_classifier: need labelled training images");
  if (options.epochs < 1 || options.batch_size < 2) throw std::invalid_argument("train_classifier: bad options");
  std::mt19937_64 rng(options.seed ^ 0xc1a55ULL);
  if (pool.size() > options.max_train) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(options.max_train);
  }
  const int res = pool.front()->image.width;
  auto net = std::make_unique<ShapeClassifier>(res, options.width, options.embedding_dim, options.seed);
  train::Adam<float> adam(net->parameters(), options.learning_rate, 0.9, 0.999, 1e-8);
  const auto batch = static_cast<std::size_t>(options.batch_size);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t start = 0; start + batch <= pool.size(); start += batch) {
      std::vector<data::Image> images;
      std::vector<int> labels;
      for (std::size_t i = start; i < start + batch; ++i) {
        images.push_back(pool[i]->image);
        labels.push_back(pool[i]->family);
      }
      net->zero_grad();
      auto loss = ops::softmax_cross_entropy(
          net->logits(net->embed(constant(data::to_batch(images)), nn::Pass::train()), nn::Pass::train()), labels);
      backward(loss);
      adam.step();
    }
  }
  auto out = std::make_unique<ClassifierExtractor>(std::move(net));
  bool labelled_test = std::any_of(data.test.begin(), data.test.end(), [](const auto& s) { return s.family >= 0; });
  if (labelled_test) out->held_out_accuracy = out->accuracy(data.test);
  return out;
}

std::unique_ptr<FeatureExtractor> load_extractor(const std::filesystem::path& path) {
  const auto ar = io::read_archive(path);
  const auto kind = ar.manifest.value("kind", std::string());
  const int res = ar.manifest.at("resolution").get<int>();
  if (kind == "pixel_pca") {
    const auto& m = find(ar, "mean");
    const auto& b = find(ar, "basis");
    const auto& v = find(ar, "variances");
    if (b.shape.size() != 2) throw std::runtime_error("pixel_pca basis must be 2-D");
    Matrix basis(b.shape[0], b.shape[1]);
    for (Eigen::Index r = 0; r < basis.rows(); ++r)
      for (Eigen::Index c = 0; c < basis.cols(); ++c) basis(r, c) = b.values[std::size_t(r * basis.cols() + c)];
    return std::make_unique<PixelPca>(res, Eigen::Map<const Vector>(m.values.data(), Eigen::Index(m.values.size())),
                                      std::move(basis),
                                      Eigen::Map<const Vector>(v.values.data(), Eigen::Index(v.values.size())));
  }
  if (kind == "classifier") {
    auto net = std::make_unique<ShapeClassifier>(res, ar.manifest.at("width").get<int>(),
                                                 ar.manifest.at("embedding_dim").get<int>(), 0);
    auto params = net->named_parameters();
    if (params.size() != ar.arrays.size()) throw std::runtime_error("classifier archive has the wrong array count");
    for (auto& [name, p] : params) {
      const auto& a = find(ar, name);
      if (a.shape != p->value.shape()) throw std::runtime_error("classifier array '" + name + "' has the wrong shape");
      for (std::size_t i = 0; i < a.values.size(); ++i) p->value[std::int64_t(i)] = float(a.values[i]);
    }
    auto out = std::make_unique<ClassifierExtractor>(std::move(net));
    out->held_out_accuracy = ar.manifest.value("held_out_accuracy", 0.0);
    return out;
  }
  throw std::runtime_error("unknown extractor kind '" + kind + "' in " + path.string());
}

}  // namespace saalae::eval
