#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsm/config.hpp"
#include "dsm/data.hpp"
#include "dsm/log.hpp"
#include "dsm/plot.hpp"
#include "dsm/synth.hpp"
#include "dsm/training.hpp"

namespace fs = std::filesystem;

namespace {

fs::path run_dir(const std::string& out, const std::string& sub) {
  if (!out.empty()) {
    fs::create_directories(out);
    return out;
  }
  const char* root = std::getenv("DSMSEG_OUTPUT_ROOT");
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  fs::path dir = fs::path(root && *root ? root : "runs") / (sub + "-" + stamp);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw dsm::RuntimeFailure("cannot write " + path.string());
  f << text;
}

dsm::TrainingConfig make_config(const std::string& path, const std::vector<std::string>& sets) {
  dsm::TrainingConfig c = path.empty() ? dsm::TrainingConfig{} : dsm::load_config(path);
  for (const auto& s : sets) dsm::apply_override(c, s, fs::current_path());
  c.validate();
  return c;
}

std::vector<double> parse_sigmas(const std::string& text) {
  dsm::TrainingConfig c;
  dsm::apply_override(c, "sigmas=" + text);
  return c.sigmas;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch DSM segmentation toolkit"};
  app.require_subcommand(1);

  std::string manifest, out, config_path, checkpoint, resume, sigma_text, log_path, matrix = "loss";
  std::vector<std::string> sets, reports;
  int connectivity = 8;
  bool component_weighted = false;
  dsm::SynthSpec synth;
  int synth_height = 64, synth_width = 64;
  int alpha_epochs = 0;

  auto* stats = app.add_subcommand("stats", "Background/foreground ratio and component size percentiles");
  stats->add_option("--manifest", manifest, "Dataset manifest (TSV)")->required();
  stats->add_option("--connectivity", connectivity, "4 or 8")->check(CLI::IsMember({4, 8}));
  stats->add_flag("--component-weighted", component_weighted, "Weight percentiles by component, not pixel");

  auto* gen = app.add_subcommand("synth", "Generate a synthetic lesion dataset");
  gen->add_option("--out", out, "Output directory");
  gen->add_option("--count", synth.count, "Number of images");
  gen->add_option("--height", synth_height, "Image height");
  gen->add_option("--width", synth_width, "Image width");
  gen->add_option("--ratio", synth.imbalance_ratio, "Background/foreground pixel ratio");
  gen->add_option("--large-fraction", synth.large_fraction, "Share of large components");
  gen->add_option("--small-area", synth.small_area, "Pixels per small component");
  gen->add_option("--area-ratio", synth.area_ratio, "Large/small component area");
  gen->add_option("--seed", synth.seed, "Seed");
  gen->add_option("--split", synth.split, "Split name");

  auto* tr = app.add_subcommand("train", "Train a network");
  tr->add_option("--config", config_path, "Config file (key = value)");
  tr->add_option("--set", sets, "Override key=value")->take_all();
  tr->add_option("--out", out, "Run directory");
  tr->add_option("--resume", resume, "Checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--manifest", manifest, "Dataset manifest (TSV)")->required();
  ev->add_option("--config", config_path, "Config file for preprocessing and metric settings");
  ev->add_option("--set", sets, "Override key=value")->take_all();
  ev->add_option("--sigma", sigma_text, "Comma-separated region overlap thresholds");
  ev->add_option("--out", out, "Run directory");

  auto* ab = app.add_subcommand("ablate", "Train and compare a matrix of configurations");
  ab->add_option("--config", config_path, "Base config file");
  ab->add_option("--set", sets, "Override key=value")->take_all();
  ab->add_option("--matrix", matrix, "loss or rate")->check(CLI::IsMember({"loss", "rate"}));
  ab->add_option("--out", out, "Run directory");

  auto* pl = app.add_subcommand("plot", "Render loss curves, alpha schedule and PR curves");
  pl->add_option("--log", log_path, "Training log (JSON lines)");
  pl->add_option("--report", reports, "name=report.json (repeatable)");
  pl->add_option("--alpha-epochs", alpha_epochs, "Epoch horizon for the alpha schedule plot");
  pl->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*stats) {
      dsm::StatsOptions opt;
      opt.connectivity = connectivity;
      opt.weighting = component_weighted ? dsm::PercentileWeighting::kComponent : dsm::PercentileWeighting::kPixel;
      const auto s = dsm::dataset_stats(dsm::read_manifest(manifest), opt);
      std::cout << dsm::to_json(s) << '\n';
      if (!out.empty()) write_file(run_dir(out, "stats") / "stats.json", dsm::to_json(s) + "\n");
    } else if (*gen) {
      synth.extent = {synth_height, synth_width};
      const fs::path dir = run_dir(out, "synth");
      const auto m = dsm::synth_generate(synth, dir);
      const auto s = dsm::dataset_stats(m);
      std::cout << "manifest: " << (dir / (synth.split + ".tsv")).string() << '\n' << dsm::to_json(s) << '\n';
    } else if (*tr) {
      const auto config = make_config(config_path, sets);
      const fs::path dir = run_dir(out, "train");
      dsm::TrainOptions opt;
      opt.resume_from = resume;
      const auto result = dsm::train(config, dir, opt);
      std::cout << "run directory: " << dir.string() << '\n';
      if (!config.test_manifest.empty()) {
        const auto report = dsm::evaluate_checkpoint(result.last_checkpoint, dsm::read_manifest(config.test_manifest),
                                                     config, dir / "report.json");
        std::cout << "F_pixel " << report.scores.f << ", AUPR "
                  << report.aupr << '\n';
      }
    } else if (*ev) {
      auto config = make_config(config_path, sets);
      if (!sigma_text.empty()) config.sigmas = parse_sigmas(sigma_text);
      config.validate();
      const fs::path dir = run_dir(out, "eval");
      write_file(dir / "effective.cfg", dsm::dump_config(config));
      const auto report =
          dsm::evaluate_checkpoint(checkpoint, dsm::read_manifest(manifest), config, dir / "report.json");
      std::cout << dsm::to_json(report) << '\n';
    } else if (*ab) {
      const auto config = make_config(config_path, sets);
      if (config.train_manifest.empty() || config.test_manifest.empty()) {
        throw dsm::ValidationError("ablate needs train_manifest and test_manifest in the config");
      }
      const fs::path dir = run_dir(out, "ablate");
      write_file(dir / "effective.cfg", dsm::dump_config(config));
      const auto train_set = dsm::load_labeled_set(dsm::read_manifest(config.train_manifest), config);
      const auto test_set = dsm::load_labeled_set(dsm::read_manifest(config.test_manifest), config);
      const auto cells =
          matrix == "rate" ? dsm::rate_ablation_cells(config) : dsm::loss_ablation_cells(config);
      const auto result = dsm::ablation_run(cells, train_set, test_set, config.metric_config(), dir);
      std::cout << result.table;
    } else if (*pl) {
      if (log_path.empty() && reports.empty() && alpha_epochs <= 0) {
        throw dsm::ValidationError("plot needs --log, --report or --alpha-epochs");
      }
      const fs::path dir = run_dir(out, "plot");
      if (!log_path.empty()) {
        const auto log = dsm::read_training_log(log_path);
        dsm::plot_loss_curves(log, dir / "loss_curves.png");
        if (alpha_epochs <= 0 && !log.empty()) alpha_epochs = log.back().epoch + 1;
      }
      if (alpha_epochs > 0) dsm::plot_alpha_schedule({alpha_epochs, dsm::Orientation::kText}, dir / "alpha.png");
      if (!reports.empty()) {
        std::vector<std::pair<std::string, fs::path>> named;
        for (const auto& r : reports) {
          const auto eq = r.find('=');
          named.emplace_back(eq == std::string::npos ? fs::path(r).stem().string() : r.substr(0, eq),
                             eq == std::string::npos ? r : r.substr(eq + 1));
        }
        dsm::plot_pr_curves(named, dir / "pr_curves.png");
      }
      std::cout << "plots written to " << dir.string() << '\n';
    }
  } catch (const dsm::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const dsm::RuntimeFailure& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
