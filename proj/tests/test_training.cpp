#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dsm/log.hpp"
#include "dsm/synth.hpp"
#include "dsm/training.hpp"

using namespace dsm;
namespace fs = std::filesystem;

namespace {

struct QuietLog {
  LogSink previous = set_log_sink([](LogLevel, std::string_view) {});
  ~QuietLog() { set_log_sink(previous); }
};

LabeledSet tiny_set(int count, std::uint64_t seed) {
  SynthSpec spec;
  spec.count = count;
  spec.extent = {32, 32};
  spec.imbalance_ratio = 100.0;
  spec.seed = seed;
  LabeledSet set;
  for (auto& im : synth_images(spec)) {
    set.ids.push_back(im.id);
    set.items.push_back(std::move(im.pair));
  }
  return set;
}

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.epochs = 2;
  c.augment = false;
  c.input = {32, 32};
  c.seed = 5;
  c.data_seed = 6;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dsm_training_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("poly learning rate examples") {
  CHECK(poly_lr(0, 1000, 0.03, 0.9) == 0.03);
  CHECK(poly_lr(1000, 1000, 0.03, 0.9) == 0.0);
  CHECK(poly_lr(500, 1000, 0.03, 0.9) == doctest::Approx(0.016077).epsilon(1e-4));
  CHECK_THROWS_AS(poly_lr(1001, 1000, 0.03, 0.9), OutOfRange);
  double prev = 1.0;
  for (std::uint64_t i = 0; i <= 50; ++i) {
    const double lr = poly_lr(i, 50, 0.03, 0.9);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("weight decay adds lambda times w to the update") {
  BackboneSpec spec;
  spec.stages = {{2, 1, 1, 1}, {2, 1, 1, 1}};
  auto net = DualBranchNet::build_single(spec, 1);
  std::vector<std::vector<double>> before;
  for (auto& p : net.parameters()) before.push_back(p.param->value);
  net.zero_grad();
  MomentumBuffers m;
  sgd_step(net, m, 0.1, 0.9, 0.5);
  std::size_t k = 0;
  for (auto& p : net.parameters()) {
    for (std::size_t i = 0; i < p.param->size(); ++i) {
      CHECK(p.param->value[i] == doctest::Approx(before[k][i] * (1.0 - 0.1 * 0.5)).epsilon(1e-14));
    }
    ++k;
  }

  auto& w = net.parameters().front().param->value[0];
  const double w1 = w;
  sgd_step(net, m, 0.1, 0.9, 0.5);
  const double v1 = 0.5 * before[0][0];
  CHECK(w == doctest::Approx(w1 - 0.1 * (0.9 * v1 + 0.5 * w1)).epsilon(1e-14));
}

TEST_CASE("two epochs on four images log one record per iteration") {
  QuietLog quiet;
  const auto dir = scratch("log");
  const auto result = train(tiny_config(), TrainingSet(tiny_set(4, 1), false), dir);
  REQUIRE(result.records.size() == 8);
  std::ifstream log(result.log_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 8);
  CHECK(result.records.front().epoch == 0);
  CHECK(result.records.back().epoch == 1);
  CHECK(*result.records.front().alpha == 1.0);
  CHECK(*result.records.back().alpha < *result.records.front().alpha);
  CHECK(result.records.front().total == doctest::Approx(result.records.front().large));
  for (std::size_t i = 1; i < result.records.size(); ++i) CHECK(result.records[i].lr < result.records[i - 1].lr);
  CHECK(fs::exists(dir / "checkpoints" / "epoch_001.ckpt"));
  CHECK(fs::exists(dir / "checkpoints" / "epoch_002.ckpt"));
  CHECK(load_config(dir / "effective.cfg") == tiny_config());
}

TEST_CASE("augmentation multiplies the epoch length by six") {
  TrainingSet plain(tiny_set(2, 2), false);
  TrainingSet aug(tiny_set(2, 2), true);
  CHECK(plain.size() == 2);
  CHECK(aug.size() == 12);
  CHECK(aug.id(7) == plain.id(1) + "/rot90");
  CHECK(aug.get(6).mask == plain.get(1).mask);
  CHECK(iterations_per_epoch(tiny_config(), 12) == 12);
}

TEST_CASE("single-branch runs log no alpha") {
  QuietLog quiet;
  auto cfg = tiny_config();
  cfg.model = ModelKind::kSingle;
  cfg.loss = LossKind::kCbce;
  cfg.epochs = 1;
  const auto result = train(cfg, TrainingSet(tiny_set(4, 1), false), scratch("single"));
  REQUIRE(result.records.size() == 4);
  CHECK_FALSE(result.records.front().alpha.has_value());
  CHECK(to_json_line(result.records.front()).find("\"alpha\":null") != std::string::npos);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  QuietLog quiet;
  const TrainingSet data(tiny_set(4, 3), false);
  const auto full_dir = scratch("full");
  const auto full = train(tiny_config(), data, full_dir);

  const auto part_dir = scratch("part");
  TrainOptions first;
  first.stop_after_epochs = 1;
  train(tiny_config(), data, part_dir, first);
  TrainOptions rest;
  rest.resume_from = part_dir / "checkpoints" / "epoch_001.ckpt";
  const auto resumed = train(tiny_config(), data, part_dir, rest);

  CHECK(file_bytes(full_dir / "train_log.jsonl") == file_bytes(part_dir / "train_log.jsonl"));
  CHECK(file_bytes(full_dir / "checkpoints" / "epoch_002.ckpt") ==
        file_bytes(part_dir / "checkpoints" / "epoch_002.ckpt"));
  const auto a = full.net.parameters();
  const auto b = resumed.net.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].param->value == b[i].param->value);
}

TEST_CASE("config dump round-trips and rejects unknown keys") {
  TrainingConfig c;
  c.base_lr = 0.1 / 3.0;
  c.sampler.rate = 0.25;
  c.sampler.rate_mode = RateMode::kReverseClassFrequency;
  c.model = ModelKind::kSingle;
  c.loss = LossKind::kDice;
  c.sigmas = {0.3, 0.7};
  c.train_manifest = fs::temp_directory_path() / "x.tsv";
  CHECK(parse_config(dump_config(c)) == c);

  apply_override(c, "epochs=7");
  CHECK(c.epochs == 7);
  CHECK_THROWS_AS(apply_override(c, "bogus=1"), ValidationError);
  CHECK_THROWS_AS(apply_override(c, "epochs=seven"), ValidationError);
  CHECK_THROWS_AS(parse_config("model = dual\nloss = dice\n").validate(), ValidationError);
  CHECK(parse_config("# comment only\n") == TrainingConfig{});
}

TEST_CASE("ablation matrices") {
  const auto loss_cells = loss_ablation_cells(tiny_config());
  REQUIRE(loss_cells.size() == 3);
  CHECK(loss_cells[0].name == "single_cbce");
  CHECK(loss_cells[2].config.model == ModelKind::kDual);
  const auto rate_cells = rate_ablation_cells(tiny_config());
  REQUIRE(rate_cells.size() == 4);
  CHECK(rate_cells[3].config.sampler.rate_mode == RateMode::kReverseClassFrequency);

  const auto set = tiny_set(2, 4);
  CHECK_THROWS_AS(ablation_run({}, set, set, MetricConfig{}, scratch("empty")), ValidationError);
}

TEST_CASE("evaluating a corrupt checkpoint reports the version") {
  const auto dir = scratch("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << "DSMCKPT";
  CHECK_THROWS_AS(evaluate_checkpoint(dir / "bad.ckpt", DatasetManifest{}, tiny_config()), CheckpointError);
}
