#include "saalae/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "saalae/checkpoint.hpp"
#include "saalae/eval/features.hpp"
#include "saalae/eval/metrics.hpp"
#include "saalae/ops.hpp"

namespace saalae::train {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("training config: " + what);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
std::vector<Var<T>> concat(std::vector<Var<T>> a, const std::vector<Var<T>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TrainingConfig TrainingConfig::desk_scale() {
  TrainingConfig c;
  c.batch_size = 32;
  c.max_epochs = 30;
  c.r1_interval = 4;
  return c;
}

void TrainingConfig::validate() const {
  require(lr_de > 0 && lr_mg > 0 && lr_ge > 0, "learning rates must be > 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must be in [0, 1)");
  require(adam_eps > 0, "adam_eps must be > 0");
  require(batch_size >= 2, "batch_size must be >= 2");
  require(max_epochs >= 1, "max_epochs must be >= 1");
  require(patience >= 1, "patience must be >= 1");
  require(eval_samples_per_epoch >= 2, "eval_samples_per_epoch must be >= 2");
  require(r1_gamma >= 0 && std::isfinite(r1_gamma), "r1_gamma must be finite and >= 0");
  require(r1_interval >= 1, "r1_interval must be >= 1");
  require(phase_ratio >= 1, "phase_ratio must be >= 1");
  require(fid_extractor == "pixel_pca" || fid_extractor == "classifier",
          "fid_extractor must be pixel_pca or classifier");
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"lr_de", lr_de},
          {"lr_mg", lr_mg},
          {"lr_ge", lr_ge},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"eval_samples_per_epoch", eval_samples_per_epoch},
          {"seed", seed},
          {"r1_gamma", r1_gamma},
          {"r1_interval", r1_interval},
          {"phase_ratio", phase_ratio},
          {"fid_extractor", fid_extractor}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.lr_de = j.value("lr_de", c.lr_de);
  c.lr_mg = j.value("lr_mg", c.lr_mg);
  c.lr_ge = j.value("lr_ge", c.lr_ge);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.eval_samples_per_epoch = j.value("eval_samples_per_epoch", c.eval_samples_per_epoch);
  c.seed = j.value("seed", c.seed);
  c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
  c.r1_interval = j.value("r1_interval", c.r1_interval);
  c.phase_ratio = j.value("phase_ratio", c.phase_ratio);
  c.fid_extractor = j.value("fid_extractor", c.fid_extractor);
  c.validate();
  return c;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},   {"step", step},       {"loss_de", loss_de},          {"loss_mg", loss_mg},
          {"loss_ge", loss_ge}, {"val_fid", val_fid}, {"wall_seconds", wall_seconds}};
}

nlohmann::json TrainingState::to_json() const {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& r : history) h.push_back(r.to_json());
  return {{"step", step},
          {"epoch", epoch},
          {"best_val_fid", std::isfinite(best_val_fid) ? nlohmann::json(best_val_fid) : nlohmann::json(nullptr)},
          {"best_epoch", best_epoch},
          {"epochs_since_improvement", epochs_since_improvement},
          {"history", h}};
}

// ---- Adam ----------------------------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(std::vector<Var<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (!p.has_grad()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::int64_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = static_cast<T>(beta1_ * m[k] + (1 - beta1_) * g);
      v[k] = static_cast<T>(beta2_ * v[k] + (1 - beta2_) * g * g);
      const double mh = m[k] / c1, vh = v[k] / c2;
      p.value[k] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
    p.zero_grad();
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
FreezeParameters<T>::FreezeParameters(std::vector<Var<T>> params) : params_(std::move(params)) {
  for (auto& p : params_) {
    previous_.push_back(p->requires_grad);
    p->requires_grad = false;
  }
}

template <typename T>
FreezeParameters<T>::~FreezeParameters() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = previous_[i];
}

// ---- losses --------------------------------------------------------------------------------------

template <typename T>
Var<T> critic_loss(const Var<T>& real_scores, const Var<T>& fake_scores) {
  return ops::add(ops::mean(ops::softplus(ops::scale(real_scores, T(-1)))), ops::mean(ops::softplus(fake_scores)));
}

template <typename T>
Var<T> generator_loss(const Var<T>& fake_scores) {
  return ops::mean(ops::softplus(ops::scale(fake_scores, T(-1))));
}

template <typename T>
Var<T> latent_loss(const Var<T>& reconstructed, const Tensor<T>& target) {
  return ops::mse(reconstructed, target);
}

// ---- Trainer -------------------------------------------------------------------------------------

template <typename T>
Trainer<T>::Trainer(model::ModelBundle<T>& bundle, const TrainingConfig& config)
    : bundle_(bundle),
      config_((config.validate(), config)),
      opt_de_(group({"E", "D"}), config.lr_de, config.beta1, config.beta2, config.adam_eps),
      opt_mg_(group({"M", "G"}), config.lr_mg, config.beta1, config.beta2, config.adam_eps),
      opt_ge_(group({"G", "E"}), config.lr_ge, config.beta1, config.beta2, config.adam_eps) {}

template <typename T>
std::vector<Var<T>> Trainer<T>::group(std::initializer_list<const char*> names) const {
  std::vector<Var<T>> out;
  for (const char* n : names) out = concat(std::move(out), bundle_.network(n).parameters());
  return out;
}

template <typename T>
Var<T> Trainer<T>::critic(const Var<T>& x, nn::Pass pass) {
  if (overrides_.critic) return overrides_.critic(x, pass);
  return bundle_.discriminator->forward(bundle_.encoder->forward(x, pass), pass);
}

template <typename T>
Var<T> Trainer<T>::cycle(const Var<T>& w, nn::Pass pass) {
  if (overrides_.cycle) return overrides_.cycle(w, pass);
  std::optional<std::uint64_t> noise;
  if (bundle_.config.noise_injection) noise = mix_seed(config_.seed, 0x6e6f697365ULL + std::uint64_t(step_));
  return bundle_.encoder->forward(bundle_.generator->forward(w, pass, noise), pass);
}

template <typename T>
void Trainer<T>::check_finite(const std::string& phase, double loss, const nlohmann::json& terms) const {
  if (std::isfinite(loss)) return;
  nlohmann::json snap = {{"phase", phase}, {"step", step_}, {"loss", std::to_string(loss)}, {"terms", terms}};
  for (const auto& [name, net] : bundle_.networks()) {
    double sq = 0;
    bool finite = true;
    for (const auto& p : net->parameters()) {
      for (T v : p->value.values()) {
        finite = finite && std::isfinite(v);
        sq += double(v) * double(v);
      }
    }
    snap["parameter_norms"][name] = finite ? nlohmann::json(std::sqrt(sq)) : nlohmann::json("non-finite");
  }
  throw NumericalError("non-finite " + phase + " loss at step " + std::to_string(step_), snap);
}

namespace {

template <typename T>
double gradient_penalty(const Tensor<T>& real, double weight, bool accumulate,
                        const std::function<Var<T>(const Var<T>&, nn::Pass)>& critic,
                        const std::vector<Var<T>>& params) {
  const auto batch = real.dim(0);
  Tensor<T> g;
  {
    FreezeParameters<T> freeze(params);
    auto x = leaf(real, true);
    auto s = ops::sum(critic(x, nn::Pass::frozen_train()));
    backward(s);
    g = x->has_grad() ? x->grad : Tensor<T>(real.shape());
  }
  double sq = 0;
  for (T v : g.values()) sq += double(v) * double(v);
  const double penalty = weight / 2 * sq / double(batch);
  if (!accumulate || sq == 0 || weight == 0) return penalty;

  // d/dθ Σ‖g‖² = 2 (∂²f/∂θ∂x)·g, estimated by a central difference of ∂f/∂θ along x ± εg.
  const double rms = std::sqrt(sq / double(g.size()));
  const double h = std::is_same_v<T, float> ? 1e-2 : 1e-5;
  const double eps = h / rms;
  const double c = weight / (double(batch) * 2 * eps);
  for (int sign : {1, -1}) {
    Tensor<T> shifted = real;
    for (std::int64_t i = 0; i < g.size(); ++i) shifted[i] += static_cast<T>(sign * eps * g[i]);
    auto s = ops::sum(critic(constant(std::move(shifted)), nn::Pass::frozen_train()));
    backward(s, Tensor<T>(s->value.shape(), static_cast<T>(sign * c)));
  }
  return penalty;
}

}  // namespace

template <typename T>
double Trainer<T>::accumulate_gradient_penalty(const Tensor<T>& real, double weight) {
  return gradient_penalty<T>(real, weight, true, [this](const Var<T>& x, nn::Pass p) { return critic(x, p); },
                             group({"E", "D"}));
}

template <typename T>
StepResult Trainer<T>::step_discriminator(const Tensor<T>& real, const Tensor<T>& z, bool dry_run) {
  if (real.rank() != 4 || z.rank() != 2 || real.dim(0) != z.dim(0)) {
    throw std::invalid_argument("step_discriminator: expected real (B,1,R,R) and z (B,d) with equal B");
  }
  for (const auto& [name, net] : bundle_.networks()) net->zero_grad();
  const nn::Pass own = dry_run ? nn::Pass::frozen_train() : nn::Pass::train();
  Tensor<T> fake;
  {
    NoGradGuard no_grad;
    auto w = bundle_.mapper->forward(constant(z), nn::Pass::frozen_train());
    fake = bundle_.generator->forward(w, nn::Pass::frozen_train())->value;
  }
  auto real_scores = critic(constant(real), own);
  auto fake_scores = critic(constant(std::move(fake)), nn::Pass::frozen_train());
  auto adv = critic_loss(real_scores, fake_scores);
  StepResult r;
  const bool penalise = config_.r1_gamma > 0 && de_steps_ % config_.r1_interval == 0;
  if (!dry_run) backward(adv);
  if (penalise) {
    const double weight = config_.r1_gamma * config_.r1_interval;
    r.penalty = gradient_penalty<T>(real, weight, !dry_run,
                                    [this](const Var<T>& x, nn::Pass p) { return critic(x, p); }, group({"E", "D"})) /
                config_.r1_interval;
  }
  r.loss = double(adv->value[0]) + r.penalty;
  check_finite("discriminator", r.loss, {{"adversarial", double(adv->value[0])}, {"penalty", r.penalty}});
  if (!dry_run) {
    opt_de_.step();
    ++de_steps_;
    ++step_;
  }
  return r;
}

template <typename T>
StepResult Trainer<T>::step_generator(const Tensor<T>& z, bool dry_run) {
  for (const auto& [name, net] : bundle_.networks()) net->zero_grad();
  const nn::Pass own = dry_run ? nn::Pass::frozen_train() : nn::Pass::train();
  StepResult r;
  FreezeParameters<T> freeze(group({"E", "D"}));
  auto w = bundle_.mapper->forward(constant(z), own);
  auto x = bundle_.generator->forward(w, own);
  auto loss = generator_loss(critic(x, nn::Pass::frozen_train()));
  r.loss = loss->value[0];
  check_finite("generator", r.loss, nlohmann::json::object());
  if (!dry_run) {
    backward(loss);
    opt_mg_.step();
  }
  return r;
}

template <typename T>
StepResult Trainer<T>::step_latent_autoencoder(const Tensor<T>& z, bool dry_run) {
  for (const auto& [name, net] : bundle_.networks()) net->zero_grad();
  const nn::Pass own = dry_run ? nn::Pass::frozen_train() : nn::Pass::train();
  Tensor<T> target;
  {
    NoGradGuard no_grad;
    target = bundle_.mapper->forward(constant(z), nn::Pass::frozen_train())->value;
  }
  auto loss = latent_loss(cycle(constant(target), own), target);
  StepResult r;
  r.loss = loss->value[0];
  check_finite("latent_autoencoder", r.loss, nlohmann::json::object());
  if (!dry_run) {
    backward(loss);
    opt_ge_.step();
  }
  return r;
}

// ---- epoch loop ----------------------------------------------------------------------------------

std::pair<bool, bool> EarlyStopping::record(int epoch, double fid) {
  if (std::isfinite(fid) && fid < best) {
    best = fid;
    best_epoch = epoch;
    since_improvement = 0;
    return {true, false};
  }
  ++since_improvement;
  return {false, since_improvement >= patience};
}

Evaluator make_fid_evaluator(const data::DatasetSplits& data, const TrainingConfig& config, int resolution) {
  auto reference = data.images("val");
  if (reference.size() < 2) reference = data.images("train");
  if (reference.size() > static_cast<std::size_t>(config.eval_samples_per_epoch)) {
    reference.resize(static_cast<std::size_t>(config.eval_samples_per_epoch));
  }
  std::shared_ptr<eval::FeatureExtractor> extractor;
  if (config.fid_extractor == "classifier") {
    eval::ClassifierOptions opts;
    opts.seed = config.seed;
    extractor = eval::train_classifier(data, opts);
  } else {
    auto basis = data.images("train");
    if (basis.size() > 1000) basis.resize(1000);
    extractor = eval::fit_pixel_pca(basis, eval::kDefaultPcaDim, config.seed);
  }
  if (extractor->resolution() != resolution) throw std::invalid_argument("evaluator resolution mismatch");
  const auto ref = eval::summarize(extractor->extract(reference));
  const auto n = static_cast<std::int64_t>(reference.size());
  const std::uint64_t sample_seed = mix_seed(config.seed, 0xe7a1ULL);
  return [extractor, ref, n, sample_seed](const model::ModelBundle<float>& bundle, int) {
    const auto z = model::sample_noise<float>(n, bundle.config.latent_dim, sample_seed);
    const auto images = data::from_batch(model::generate(bundle, model::map_latent(bundle, z)));
    return eval::fid(ref, eval::summarize(extractor->extract(images)));
  };
}

TrainResult train(const data::DatasetSplits& data, const model::ArchitectureConfig& arch, const TrainingConfig& config,
                  const std::filesystem::path& out_dir, const TrainOptions& options) {
  config.validate();
  arch.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.resolution != arch.resolution) {
    throw std::invalid_argument("train: dataset resolution " + std::to_string(data.resolution) +
                                " does not match model resolution " + std::to_string(arch.resolution));
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (ec || !metrics) throw std::runtime_error("train: cannot write to " + out_dir.string());

  auto bundle = model::build<float>(arch, config.seed);
  auto best = model::build<float>(arch, config.seed);
  Trainer<float> trainer(bundle, config);
  const Evaluator evaluator = options.evaluator ? *options.evaluator : make_fid_evaluator(data, config, arch.resolution);

  const auto train_images = data.images("train");
  const auto pixels = static_cast<std::int64_t>(arch.resolution) * arch.resolution;
  const std::int64_t n = static_cast<std::int64_t>(train_images.size());
  const std::int64_t batch = std::min<std::int64_t>(config.batch_size, n);
  if (batch < 2) throw std::invalid_argument("train: need at least 2 training images");
  const std::int64_t batches = n / batch;

  TrainingState state;
  EarlyStopping stopping{config.patience};
  const auto checkpoint = out_dir / "best.ckpt";
  auto manifest = [&]() {
    auto m = state.to_json();
    m["training_config"] = config.to_json();
    m["fid_extractor"] = config.fid_extractor;
    m["dataset"] = data.source;
    return m;
  };

  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(config.seed, std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double sum_de = 0, sum_mg = 0, sum_ge = 0;
    for (std::int64_t b = 0; b < batches; ++b) {
      Tensor<float> x({batch, 1, arch.resolution, arch.resolution});
      for (std::int64_t i = 0; i < batch; ++i) {
        const auto& im = train_images[static_cast<std::size_t>(order[static_cast<std::size_t>(b * batch + i)])];
        std::copy(im.pixels.begin(), im.pixels.end(), x.data() + i * pixels);
      }
      const auto step_seed = mix_seed(config.seed, 0x100000000ULL + std::uint64_t(state.step));
      const double de = trainer.step_discriminator(x, model::sample_noise<float>(batch, arch.latent_dim, step_seed)).loss;
      const double mg = trainer.step_generator(model::sample_noise<float>(batch, arch.latent_dim, step_seed + 1)).loss;
      double ge = 0;
      for (int k = 0; k < config.phase_ratio; ++k) {
        ge += trainer.step_latent_autoencoder(model::sample_noise<float>(batch, arch.latent_dim, step_seed + 2 + k)).loss;
      }
      ge /= config.phase_ratio;
      state.loss_de.push_back(de);
      state.loss_mg.push_back(mg);
      state.loss_ge.push_back(ge);
      sum_de += de;
      sum_mg += mg;
      sum_ge += ge;
      ++state.step;
    }

    double fid = std::numeric_limits<double>::infinity();
    try {
      fid = evaluator(bundle, epoch);
    } catch (const std::exception& e) {
      if (options.log_progress) std::cerr << "epoch " << epoch << ": evaluation failed: " << e.what() << '\n';
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = state.step;
    rec.loss_de = sum_de / double(batches);
    rec.loss_mg = sum_mg / double(batches);
    rec.loss_ge = sum_ge / double(batches);
    rec.val_fid = fid;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.epoch = epoch;
    state.history.push_back(rec);
    const auto [improved, stop] = stopping.record(epoch, fid);
    state.best_val_fid = stopping.best;
    state.best_epoch = stopping.best_epoch;
    state.epochs_since_improvement = stopping.since_improvement;
    metrics << rec.to_json().dump() << '\n' << std::flush;
    if (options.log_progress) std::cerr << rec.to_json().dump() << '\n';
    if (improved) {
      io::copy_weights(bundle, best);
      io::save_checkpoint(checkpoint, best, manifest());
    }
    if (options.on_epoch && !options.on_epoch(rec)) break;
    if (stop) break;
  }
  io::save_checkpoint(checkpoint, best, manifest());
  return {checkpoint, std::move(state)};
}

#define SAALAE_INSTANTIATE(T)                                                  \
  template class Adam<T>;                                                      \
  template class FreezeParameters<T>;                                          \
  template class Trainer<T>;                                                   \
  template Var<T> critic_loss(const Var<T>&, const Var<T>&);                   \
  template Var<T> generator_loss(const Var<T>&);                               \
  template Var<T> latent_loss(const Var<T>&, const Tensor<T>&);

SAALAE_INSTANTIATE(float)
SAALAE_INSTANTIATE(double)
#undef SAALAE_INSTANTIATE

}  // namespace saalae::train
