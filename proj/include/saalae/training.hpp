#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saalae/data/dataset.hpp"
#include "saalae/model.hpp"

namespace saalae::train {

struct TrainingConfig {
  double lr_de = 1e-4;
  double lr_mg = 2e-4;
  double lr_ge = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 20;
  int eval_samples_per_epoch = 100;
  std::uint64_t seed = 0;
  double r1_gamma = 10.0;
  // Apply the gradient penalty every r1_interval discriminator steps, scaled by the interval.
  int r1_interval = 1;
  // Latent-autoencoder steps per batch.
  int phase_ratio = 1;
  // Extractor for the per-epoch validation FID: "pixel_pca" or "classifier".
  std::string fid_extractor = "pixel_pca";

  // Batch 32 and lazy penalty for CPU runs; all else at the defaults above.
  static TrainingConfig desk_scale();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss_de = 0, loss_mg = 0, loss_ge = 0;
  double val_fid = 0;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

struct TrainingState {
  std::int64_t step = 0;
  int epoch = 0;
  double best_val_fid = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_improvement = 0;
  std::vector<double> loss_de, loss_mg, loss_ge;  // per step
  std::vector<EpochRecord> history;

  nlohmann::json to_json() const;
};

// Non-finite loss. snapshot carries phase, step, loss terms and per-network parameter norms.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, nlohmann::json snapshot)
      : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
  const nlohmann::json& snapshot() const { return snapshot_; }

 private:
  nlohmann::json snapshot_;
};

// Adam over a fixed parameter group with per-parameter first/second moments.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, double lr, double beta1, double beta2, double eps);
  // Consumes the accumulated gradients and clears them.
  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const std::vector<Var<T>>& params() const { return params_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// Marks parameters as constants for the guard's lifetime.
template <typename T>
class FreezeParameters {
 public:
  explicit FreezeParameters(std::vector<Var<T>> params);
  ~FreezeParameters();
  FreezeParameters(const FreezeParameters&) = delete;
  FreezeParameters& operator=(const FreezeParameters&) = delete;

 private:
  std::vector<Var<T>> params_;
  std::vector<bool> previous_;
};

// Loss terms, usable on any scores.
// mean softplus(-real) + mean softplus(fake)
template <typename T>
Var<T> critic_loss(const Var<T>& real_scores, const Var<T>& fake_scores);
// mean softplus(-fake)
template <typename T>
Var<T> generator_loss(const Var<T>& fake_scores);
// mean squared error against a constant target
template <typename T>
Var<T> latent_loss(const Var<T>& reconstructed, const Tensor<T>& target);

// Replacement compositions for analytic tests. Unset members use the bundle networks.
template <typename T>
struct Overrides {
  std::function<Var<T>(const Var<T>& images, nn::Pass)> critic;     // D(E(x))
  std::function<Var<T>(const Var<T>& latents, nn::Pass)> cycle;     // E(G(w))
};

struct StepResult {
  double loss = 0;
  double penalty = 0;  // gradient penalty part of the critic loss
};

// Three-phase optimisation over one bundle: (E, D), (M, G) and (G, E) each own an optimizer.
template <typename T>
class Trainer {
 public:
  Trainer(model::ModelBundle<T>& bundle, const TrainingConfig& config);

  // Updates E and D. real: (B, 1, R, R); z: (B, d). dry_run computes the loss without touching any state.
  StepResult step_discriminator(const Tensor<T>& real, const Tensor<T>& z, bool dry_run = false);
  // Updates M and G.
  StepResult step_generator(const Tensor<T>& z, bool dry_run = false);
  // Updates G and E against the detached target M(z).
  StepResult step_latent_autoencoder(const Tensor<T>& z, bool dry_run = false);

  // Differentiable penalty value and its parameter gradient (accumulated into E and D grads).
  // The gradient uses a central difference of the critic's input gradient along itself.
  double accumulate_gradient_penalty(const Tensor<T>& real, double weight);

  Overrides<T>& overrides() { return overrides_; }
  std::int64_t steps() const { return step_; }
  model::ModelBundle<T>& bundle() { return bundle_; }

 private:
  Var<T> critic(const Var<T>& x, nn::Pass pass);
  Var<T> cycle(const Var<T>& w, nn::Pass pass);
  void check_finite(const std::string& phase, double loss, const nlohmann::json& terms) const;
  std::vector<Var<T>> group(std::initializer_list<const char*> names) const;

  model::ModelBundle<T>& bundle_;
  TrainingConfig config_;
  Adam<T> opt_de_, opt_mg_, opt_ge_;
  Overrides<T> overrides_;
  std::int64_t step_ = 0;
  std::int64_t de_steps_ = 0;
};

// Per-epoch validation FID given the bundle being trained.
using Evaluator = std::function<double(const model::ModelBundle<float>&, int epoch)>;

// FID between eval_samples_per_epoch validation images and as many fixed-seed samples, under the
// configured extractor (fitted on the training split).
Evaluator make_fid_evaluator(const data::DatasetSplits& data, const TrainingConfig& config, int resolution);

struct TrainOptions {
  std::optional<Evaluator> evaluator;  // default: make_fid_evaluator
  bool log_progress = false;
  // Called after every epoch record; returning false stops training early.
  std::function<bool(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  TrainingState state;
};

// Early-stopping bookkeeping: returns true when training should halt after recording `fid`.
struct EarlyStopping {
  int patience;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_improvement = 0;

  // Returns {improved, stop}.
  std::pair<bool, bool> record(int epoch, double fid);
};

// Writes out_dir/metrics.jsonl (one record per epoch) and out_dir/best.ckpt.
TrainResult train(const data::DatasetSplits& data, const model::ArchitectureConfig& arch,
                  const TrainingConfig& config, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

}  // namespace saalae::train
