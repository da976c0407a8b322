// gameprior: train, apply and check patch-game denoisers.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gameprior/checkpoint.hpp"
#include "gameprior/config.hpp"
#include "gameprior/image_io.hpp"
#include "gameprior/parallel.hpp"
#include "gameprior/trainer.hpp"
#include "gameprior/verify.hpp"

namespace fs = std::filesystem;
using namespace gameprior;

namespace {

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error(dir.string() + ": no .pgm or .png images");
  return files;
}

std::string db(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

int train(const fs::path& config_path, const fs::path& data, const fs::path& out, const std::string& curve) {
  const RunConfig cfg = load_config(config_path);
  std::vector<Tensor> images;
  for (const auto& f : image_files(data)) images.push_back(load_image(f));
  const ModelParams init =
      init_params(images, cfg.model, cfg.priors, InitOptions{cfg.solver.iterations, cfg.solver.eta0, cfg.train.seed});
  TrainResult r = run_training(images, cfg.model, cfg.priors, cfg.solver, cfg.train, make_train_state(init, cfg.train));
  save_checkpoint(Checkpoint{cfg, r.state}, out);
  if (!curve.empty()) {
    std::ofstream c(curve);
    if (!c) throw std::runtime_error(curve + ": cannot open for writing");
    write_loss_csv(c, r.curve);
  }
  std::cout << "final loss " << std::setprecision(8) << r.final_loss << " after " << r.state.step << " steps, "
            << r.restores << " restores\n";
  return 0;
}

int denoise_cmd(const fs::path& ckpt, const fs::path& in, const fs::path& out, const std::string& trace_path) {
  const Checkpoint c = load_checkpoint(ckpt);
  std::vector<TraceRow> trace;
  const Tensor restored = denoise(c.config.model, c.config.priors, c.config.solver, c.state.params, load_image(in),
                                  trace_path.empty() ? nullptr : &trace);
  save_image(restored, out);
  if (!trace_path.empty()) {
    std::ofstream t(trace_path);
    if (!t) throw std::runtime_error(trace_path + ": cannot open for writing");
    write_trace_csv(t, trace);
  }
  return 0;
}

int eval(const fs::path& ckpt, const fs::path& clean_dir, double sigma, std::uint64_t seed) {
  const Checkpoint c = load_checkpoint(ckpt);
  const auto files = image_files(clean_dir);
  std::vector<double> noisy_db(files.size()), denoised_db(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    const Tensor clean = load_image(files[i]);
    const Tensor noisy = add_noise(clean, sigma, seed + i);
    noisy_db[i] = psnr(clean, noisy);
    denoised_db[i] = psnr(clean, denoise(c.config.model, c.config.priors, c.config.solver, c.state.params, noisy));
  });
  std::cout << "file,psnr_noisy,psnr_denoised\n";
  double sn = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::cout << files[i].filename().string() << ',' << db(noisy_db[i]) << ',' << db(denoised_db[i]) << '\n';
    sn += noisy_db[i];
    sd += denoised_db[i];
  }
  const double n = static_cast<double>(files.size());
  std::cout << "mean," << db(sn / n) << ',' << db(sd / n) << '\n';
  return 0;
}

int verify(const std::string& suite) {
  const auto checks = run_verify(suite);
  std::size_t failed = 0;
  for (const auto& c : checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.suite << ": " << c.name << " (" << std::setprecision(3)
              << c.value << " vs " << c.tolerance << ")\n";
    failed += !c.passed;
  }
  std::cout << checks.size() - failed << "/" << checks.size() << " checks passed\n";
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image denoising with trainable patch-game priors"};
  app.require_subcommand(1);

  std::string config, data, out, ckpt, in, trace, curve, suite = "all", preset_name;
  std::string clean;
  double sigma = 25.0;
  std::uint64_t seed = 0;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data, "Directory of clean training images")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", out, "Checkpoint to write")->required();
  train_cmd->add_option("--curve", curve, "Loss curve CSV (step,loss,lr)");

  auto* denoise_sub = app.add_subcommand("denoise", "Restore one image");
  denoise_sub->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  denoise_sub->add_option("--in", in, "Noisy image")->required()->check(CLI::ExistingFile);
  denoise_sub->add_option("--out", out, "Output image")->required();
  denoise_sub->add_option("--trace", trace, "Solver trace CSV (t,residual,eta)");

  auto* eval_cmd = app.add_subcommand("eval", "PSNR table on noisy copies of clean images");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--clean", clean, "Directory of clean images")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--sigma", sigma, "Noise level")->required()->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--seed", seed, "Noise seed")->required();

  auto* verify_cmd = app.add_subcommand("verify", "Run self-checks");
  verify_cmd->add_option("--suite", suite, "Suite")->check(CLI::IsMember(verify_suites()));

  auto* init_cmd = app.add_subcommand("init-config", "Print a preset config");
  init_cmd->add_option("--preset", preset_name, "Preset")->required()->check(CLI::IsMember(preset_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return train(config, data, out, curve);
    if (*denoise_sub) return denoise_cmd(ckpt, in, out, trace);
    if (*eval_cmd) return eval(ckpt, clean, sigma, seed);
    if (*verify_cmd) return verify(suite);
    if (*init_cmd) {
      write_config(std::cout, preset(preset_name));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
