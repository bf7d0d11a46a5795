#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsm/checkpoint.hpp"
#include "dsm/config.hpp"
#include "dsm/metrics.hpp"
#include "dsm/model.hpp"

namespace dsm {

/// base_lr * (1 - iteration / max_iterations)^power.
double poly_lr(std::uint64_t iteration, std::uint64_t max_iterations, double base_lr, double power);

using MomentumBuffers = std::map<std::string, std::vector<double>>;

/// g = grad + weight_decay * w; v = momentum * v + g; w -= lr * v.
void sgd_step(DualBranchNet& net, MomentumBuffers& buffers, double lr, double momentum, double weight_decay);

/// Preprocessed images held in memory, in manifest order.
struct LabeledSet {
  std::vector<std::string> ids;
  std::vector<LabeledImage> items;

  std::size_t size() const { return items.size(); }
  Extent extent() const;
};

/// Reads every entry and applies the config's preprocessing. With
/// preprocess = none the images must already have the configured extent.
LabeledSet load_labeled_set(const DatasetManifest& manifest, const TrainingConfig& config);

/// Training view over a labeled set: with augmentation each image appears
/// once per isometry (index = image * 6 + variant).
class TrainingSet {
 public:
  TrainingSet(LabeledSet base, bool augment);

  std::size_t size() const;
  LabeledImage get(std::size_t index) const;
  std::string id(std::size_t index) const;
  Extent extent() const { return base_.extent(); }
  const LabeledSet& base() const { return base_; }

 private:
  LabeledSet base_;
  bool augment_;
};

struct LogRecord {
  std::uint64_t iteration = 0;
  int epoch = 0;
  std::optional<double> alpha;  // absent for single-branch runs
  double large = 0.0;
  double small = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::string image_large;
  std::string image_small;
};

std::string to_json_line(const LogRecord& record);

struct TrainOptions {
  std::filesystem::path resume_from;  // checkpoint to continue from
  int stop_after_epochs = 0;          // stop early once this many epochs are complete (0 = config.epochs)
  bool write_checkpoints = true;
};

struct TrainResult {
  DualBranchNet net;
  TrainingState state;
  std::vector<LogRecord> records;  // iterations run by this call
  std::filesystem::path log_path;
  std::filesystem::path last_checkpoint;
};

DualBranchNet build_network(const TrainingConfig& config, Extent input);
std::uint64_t iterations_per_epoch(const TrainingConfig& config, std::size_t training_images);

/// Writes effective.cfg, train_log.jsonl and checkpoints/epoch_<n>.ckpt under out_dir.
/// A non-finite loss aborts with RuntimeFailure naming the iteration and images.
TrainResult train(const TrainingConfig& config, const TrainingSet& data, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});
/// Loads config.train_manifest first.
TrainResult train(const TrainingConfig& config, const std::filesystem::path& out_dir, const TrainOptions& options = {});

std::vector<EvalItem> predict(const DualBranchNet& net, const LabeledSet& data);
MetricsReport evaluate_network(const DualBranchNet& net, const LabeledSet& data, const MetricConfig& metrics);

/// Loads the checkpoint, runs averaged inference over the manifest and, when
/// report_path is non-empty, writes the JSON report there.
MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                                  const TrainingConfig& config, const std::filesystem::path& report_path = {});

struct AblationCell {
  std::string name;
  TrainingConfig config;
};

struct AblationResult {
  std::vector<std::pair<std::string, MetricsReport>> reports;
  std::string table;  // markdown comparison
};

/// Single-branch CBCE, single-branch Dice and dual-branch DSM on top of base.
std::vector<AblationCell> loss_ablation_cells(const TrainingConfig& base);
/// Dual-branch DSM with sampler rates 0.25, 0.5, 0.75 and reverse class frequency.
std::vector<AblationCell> rate_ablation_cells(const TrainingConfig& base);

/// Trains and evaluates every cell; out_dir/<name>/ holds each run. Throws
/// ValidationError for an empty matrix.
AblationResult ablation_run(const std::vector<AblationCell>& cells, const LabeledSet& train_set,
                            const LabeledSet& test_set, const MetricConfig& metrics,
                            const std::filesystem::path& out_dir);

std::string comparison_table(const std::vector<std::pair<std::string, MetricsReport>>& reports);

}  // namespace dsm
