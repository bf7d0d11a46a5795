#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dsm/data.hpp"
#include "dsm/loss.hpp"
#include "dsm/metrics.hpp"
#include "dsm/sampling.hpp"

namespace dsm {

enum class ModelKind { kDual, kSingle };
enum class LossKind { kDsm, kDice, kCbce };
enum class UniformVariant { kDeterministic, kStochastic };
enum class InputPrep { kNone, kFovCropPadResize, kDirectResize };

struct TrainingConfig {
  double base_lr = 0.03;
  double lr_power = 0.9;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  int batch_size = 2;  // images per iteration; 2 means one (X_L, X_S) pair
  int epochs = 100;

  ModelKind model = ModelKind::kDual;
  LossKind loss = LossKind::kDsm;
  int share_depth = 4;

  SamplerConfig sampler;
  UniformVariant uniform = UniformVariant::kDeterministic;
  Orientation orientation = Orientation::kText;
  double dice_eps = kDefaultDiceEps;
  double cbce_clip = kDefaultCbceClip;

  std::uint64_t seed = 0;       // weight initialisation
  std::uint64_t data_seed = 0;  // epoch order, S-stream draws, re-balanced sampler

  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  InputPrep prep = InputPrep::kNone;
  Extent input{64, 64};
  bool augment = true;

  double threshold = 0.5;
  std::vector<double> sigmas{0.2, 0.35, 0.5, 0.65, 0.8};
  FnMode fn_mode = FnMode::kLiteral;
  AuprIntegration aupr = AuprIntegration::kStep;
  int small_max_area = 0;  // > 0 adds F_sigma on components up to this many pixels

  /// Throws ValidationError describing the first bad field.
  void validate() const;
  int pairs_per_iteration() const { return batch_size / 2; }
  MetricConfig metric_config() const;
  PreprocessSpec preprocess_spec() const;
};

/// One "key = value" per line; '#' starts a comment. Unknown keys and
/// unparsable values throw ValidationError. Relative manifest paths resolve
/// against base_dir.
TrainingConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
TrainingConfig load_config(const std::filesystem::path& path);

/// Applies a "key=value" override.
void apply_override(TrainingConfig& config, std::string_view assignment,
                    const std::filesystem::path& base_dir = {});

/// Every key in a fixed order; parse_config(dump_config(c)) == c.
std::string dump_config(const TrainingConfig& config);

std::vector<std::string> config_keys();

bool operator==(const TrainingConfig& a, const TrainingConfig& b);

}  // namespace dsm
