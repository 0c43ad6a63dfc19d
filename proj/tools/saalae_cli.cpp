// saalae: dataset synthesis, training, inference, evaluation studies and the inference service.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "saalae/checkpoint.hpp"
#include "saalae/data/dataset.hpp"
#include "saalae/eval/metrics.hpp"
#include "saalae/eval/study.hpp"
#include "saalae/inference.hpp"
#include "saalae/service.hpp"
#include "saalae/training.hpp"

using namespace saalae;
namespace fs = std::filesystem;

namespace {

// "synthetic:N" or "synthetic:N:SEED", otherwise a dataset directory.
data::DatasetSplits open_data(const std::string& spec, std::optional<int> resolution, std::uint64_t seed) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    std::stringstream ss(spec.substr(prefix.size()));
    std::string n_text, seed_text;
    std::getline(ss, n_text, ':');
    std::getline(ss, seed_text);
    const auto n = std::stoull(n_text);
    return data::synthesize(n, resolution.value_or(64), data::kUniformMix,
                            seed_text.empty() ? seed : std::stoull(seed_text));
  }
  data::LoadOptions opts;
  opts.resize = resolution;
  opts.split_seed = seed;
  return data::load_dataset(spec, opts);
}

std::vector<data::Image> read_inputs(const std::vector<std::string>& files, int resolution, bool resize) {
  std::vector<data::Image> out;
  for (const auto& f : files) {
    auto im = data::read_png(f);
    if (im.width != resolution || im.height != resolution) {
      if (!resize || !im.square()) {
        throw std::runtime_error(f + ": expected " + std::to_string(resolution) + "x" + std::to_string(resolution) +
                                 " (pass --resize for square images of another size)");
      }
      im = data::resize(im, resolution);
    }
    out.push_back(std::move(im));
  }
  return out;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
}

std::unique_ptr<eval::FeatureExtractor> make_extractor(const std::string& which, const data::DatasetSplits& ds,
                                                       std::uint64_t seed) {
  if (which == "pixel_pca") {
    const auto imgs = ds.images("train");
    return eval::fit_pixel_pca(imgs, eval::kDefaultPcaDim, seed);
  }
  if (which == "classifier") {
    eval::ClassifierOptions o;
    o.seed = seed;
    auto c = eval::train_classifier(ds, o);
    std::cerr << "classifier held-out accuracy " << c->held_out_accuracy << "\n";
    return c;
  }
  return eval::load_extractor(which);
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-attention adversarial latent autoencoder toolkit"};
  app.require_subcommand(1);

  // data synth
  auto* data_cmd = app.add_subcommand("data", "Dataset tools")->require_subcommand(1);
  auto* synth = data_cmd->add_subcommand("synth", "Render a synthetic blueprint dataset");
  std::size_t synth_n = 4000;
  int synth_res = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out, synth_mix = "0.25,0.25,0.25,0.25";
  synth->add_option("--n", synth_n, "Number of images")->check(CLI::Range(200, 1000000));
  synth->add_option("--resolution", synth_res, "Image side in pixels")->check(CLI::Range(32, 256));
  synth->add_option("--seed", synth_seed);
  synth->add_option("--mix", synth_mix, "Family proportions F0..F3");
  synth->add_option("--out", synth_out)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_data, train_out;
  std::optional<int> train_res;
  model::ArchitectureConfig arch;
  auto tcfg = train::TrainingConfig::desk_scale();
  train_cmd->add_option("--data", train_data, "Dataset directory or synthetic:N[:SEED]")->required();
  train_cmd->add_option("--resolution", train_res);
  train_cmd->add_option("--latent-dim", arch.latent_dim);
  train_cmd->add_option("--base-channels", arch.base_channels);
  train_cmd->add_option("--batch", tcfg.batch_size);
  train_cmd->add_option("--lr-de", tcfg.lr_de);
  train_cmd->add_option("--lr-mg", tcfg.lr_mg);
  train_cmd->add_option("--lr-ge", tcfg.lr_ge);
  train_cmd->add_option("--max-epochs", tcfg.max_epochs);
  train_cmd->add_option("--patience", tcfg.patience);
  train_cmd->add_option("--r1-gamma", tcfg.r1_gamma);
  train_cmd->add_option("--r1-interval", tcfg.r1_interval);
  train_cmd->add_option("--fid-extractor", tcfg.fid_extractor);
  train_cmd->add_option("--seed", tcfg.seed);
  train_cmd->add_option("--out", train_out)->required();

  // inference
  std::string ckpt, out;
  std::vector<std::string> inputs;
  bool resize = false;
  std::uint64_t z_seed = 0;
  int sample_n = 8;
  double mu = 0.5;
  std::string alphas_text = "0,0.2,0.4,0.6,0.8,1";

  auto* sample = app.add_subcommand("sample", "Generate images from random latents");
  sample->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  sample->add_option("--n", sample_n)->check(CLI::Range(1, 1024));
  sample->add_option("--z-seed", z_seed);
  sample->add_option("--out", out, "Output PNG (grid)")->required();

  auto* recon = app.add_subcommand("reconstruct", "G(E(x)) for each input PNG");
  recon->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  recon->add_option("inputs", inputs)->required()->check(CLI::ExistingFile);
  recon->add_flag("--resize", resize);
  recon->add_option("--out", out, "Output directory")->required();

  auto* blend_cmd = app.add_subcommand("blend", "Mix encoded images with mapped random latents");
  blend_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  blend_cmd->add_option("inputs", inputs)->required()->check(CLI::ExistingFile);
  blend_cmd->add_option("--mu", mu)->check(CLI::Range(0.0, 1.0));
  blend_cmd->add_option("--z-seed", z_seed);
  blend_cmd->add_flag("--resize", resize);
  blend_cmd->add_option("--out", out, "Output directory")->required();

  auto* interp = app.add_subcommand("interpolate", "Latent interpolation strips between image pairs");
  interp->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  interp->add_option("inputs", inputs, "Pairs of PNGs: a1 b1 [a2 b2 ...]")->required()->check(CLI::ExistingFile);
  interp->add_option("--alphas", alphas_text);
  interp->add_flag("--resize", resize);
  interp->add_option("--out", out, "Output grid PNG")->required();

  // evaluation
  auto* fit_cmd = app.add_subcommand("extractor", "Fit and save a feature extractor");
  std::string eval_data, kind = "classifier";
  std::uint64_t eval_seed = 0;
  fit_cmd->add_option("--data", eval_data)->required();
  fit_cmd->add_option("--kind", kind)->check(CLI::IsMember({"pixel_pca", "classifier"}));
  fit_cmd->add_option("--seed", eval_seed);
  fit_cmd->add_option("--out", out)->required();

  auto* compare_cmd = app.add_subcommand("compare", "FID/EMD/KLD/JSD between two image directories");
  std::string dir_a, dir_b, extractor_spec = "pixel_pca";
  compare_cmd->add_option("a", dir_a)->required();
  compare_cmd->add_option("b", dir_b)->required();
  compare_cmd->add_option("--extractor", extractor_spec, "pixel_pca, classifier, or a saved extractor file");
  compare_cmd->add_option("--seed", eval_seed);

  auto* study = app.add_subcommand("study", "Evaluation-criterion studies")->require_subcommand(1);
  std::string plot;
  auto* crit = study->add_subcommand("criteria", "Criterion response to perturbation levels");
  crit->add_option("--data", eval_data)->required();
  crit->add_option("--extractor", extractor_spec);
  crit->add_option("--seed", eval_seed);
  crit->add_option("--out", out, "Result JSON")->required();
  crit->add_option("--plot", plot, "SVG plot");
  auto* ss = study->add_subcommand("sample-size", "FID spread over sample sizes");
  std::string sizes_text = "50,100,500,1000,2000";
  int resamples = 5;
  ss->add_option("--data", eval_data)->required();
  ss->add_option("--extractor", extractor_spec);
  ss->add_option("--sizes", sizes_text);
  ss->add_option("--resamples", resamples)->check(CLI::Range(2, 100));
  ss->add_option("--seed", eval_seed);
  ss->add_option("--out", out, "Result JSON")->required();
  ss->add_option("--plot", plot, "SVG plot");

  // service
  auto* serve = app.add_subcommand("serve", "Run the JSON-over-HTTP inference service");
  std::string ckpt_dir, host = "127.0.0.1", cors;
  int port = 8080, timeout_ms = 30000;
  std::size_t store = 256;
  serve->add_option("--ckpt", ckpt, "Checkpoint to load at startup")->check(CLI::ExistingFile);
  serve->add_option("--checkpoint-dir", ckpt_dir, "Directory listed by /checkpoints (default: the checkpoint's)");
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve->add_option("--cors-origin", cors);
  serve->add_option("--timeout-ms", timeout_ms)->check(CLI::PositiveNumber);
  serve->add_option("--image-store", store)->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto m = parse_list(synth_mix);
      if (m.size() != 4) throw std::invalid_argument("--mix needs four proportions");
      const auto ds = data::make_dataset(synth_n, synth_res, {m[0], m[1], m[2], m[3]}, synth_seed, synth_out);
      std::cout << "wrote " << ds.size() << " images (train " << ds.train.size() << ", val " << ds.val.size()
                << ", test " << ds.test.size() << ") to " << synth_out << "\n";
    } else if (train_cmd->parsed()) {
      const auto ds = open_data(train_data, train_res, tcfg.seed);
      arch.resolution = ds.resolution;
      train::TrainOptions o;
      o.log_progress = true;
      const auto r = train::train(ds, arch, tcfg, train_out, o);
      std::cout << "best val FID " << r.state.best_val_fid << " at epoch " << r.state.best_epoch << "; checkpoint "
                << r.checkpoint.string() << "\n";
    } else if (sample->parsed()) {
      const auto c = io::load_checkpoint(ckpt);
      const auto imgs = data::from_batch(infer::sample_random(c.bundle, z_seed, sample_n));
      data::write_png(out, data::tile(imgs, std::min(sample_n, 8)));
    } else if (recon->parsed() || blend_cmd->parsed()) {
      const auto c = io::load_checkpoint(ckpt);
      const auto imgs = read_inputs(inputs, c.bundle.config.resolution, resize);
      const auto batch = data::to_batch(imgs);
      const auto result = recon->parsed() ? infer::reconstruct(c.bundle, batch)
                                          : infer::blend(c.bundle, batch, mu, z_seed).images;
      fs::create_directories(out);
      const auto outs = data::from_batch(result);
      for (std::size_t i = 0; i < outs.size(); ++i) {
        data::write_png(fs::path(out) / fs::path(inputs[i]).filename(), outs[i]);
      }
    } else if (interp->parsed()) {
      if (inputs.size() % 2 != 0) throw std::invalid_argument("interpolate needs pairs of images");
      const auto c = io::load_checkpoint(ckpt);
      const auto imgs = read_inputs(inputs, c.bundle.config.resolution, resize);
      const auto alphas = parse_list(alphas_text);
      std::vector<infer::InterpolationResult> rows;
      for (std::size_t i = 0; i < imgs.size(); i += 2) {
        rows.push_back(infer::interpolate(c.bundle, data::to_batch(std::span(&imgs[i], 1)),
                                          data::to_batch(std::span(&imgs[i + 1], 1)), alphas));
      }
      infer::write_interpolation_grid(rows, out);
    } else if (fit_cmd->parsed()) {
      const auto ds = open_data(eval_data, std::nullopt, eval_seed);
      make_extractor(kind, ds, eval_seed)->save(out);
    } else if (compare_cmd->parsed()) {
      const auto a = data::load_dataset(dir_a), b = data::load_dataset(dir_b);
      const auto ex = make_extractor(extractor_spec, a, eval_seed);
      const auto ia = a.images("all"), ib = b.images("all");
      std::cout << eval::compare(ia, ib, *ex, eval_seed).to_json().dump(2) << "\n";
    } else if (crit->parsed() || ss->parsed()) {
      const auto ds = open_data(eval_data, std::nullopt, eval_seed);
      const auto ex = make_extractor(extractor_spec, ds, eval_seed);
      const auto imgs = ds.images("all");
      eval::StudyResult r;
      if (crit->parsed()) {
        r = eval::criterion_study(imgs, *ex, eval::default_criteria(eval_seed), {.seed = eval_seed});
      } else {
        eval::SampleSizeOptions o;
        o.sizes.clear();
        for (double s : parse_list(sizes_text)) o.sizes.push_back(static_cast<int>(s));
        o.resamples = resamples;
        o.seed = eval_seed;
        r = eval::sample_size_study(imgs, *ex, o);
      }
      write_json(out, r.to_json());
      if (!plot.empty()) eval::write_svg_plot(r, plot);
    } else if (serve->parsed()) {
      service::ServiceConfig sc;
      sc.checkpoint_dir = !ckpt_dir.empty() ? fs::path(ckpt_dir)
                          : !ckpt.empty()   ? fs::absolute(ckpt).parent_path()
                                            : fs::current_path();
      sc.cors_origin = cors;
      sc.timeout = std::chrono::milliseconds(timeout_ms);
      sc.image_store_capacity = store;
      service::Service svc(sc);
      if (!ckpt.empty()) {
        const auto id = fs::relative(fs::absolute(ckpt), fs::absolute(sc.checkpoint_dir)).generic_string();
        svc.load_checkpoint(ckpt, id);
      }
      service::HttpServer server(svc);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int bound = server.start(host, port);
      std::cout << "listening on http://" << host << ":" << bound << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      server.stop();
    }
  } catch (const train::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n" << e.snapshot().dump(2) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
