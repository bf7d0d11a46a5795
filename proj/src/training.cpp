#include "dsm/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dsm/data.hpp"
#include "dsm/image_io.hpp"
#include "dsm/log.hpp"
#include "dsm/loss.hpp"
#include "json.hpp"

namespace dsm {

namespace {

void keep_freed_memory() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

using Engine = std::mt19937_64;

std::string save_engine(const Engine& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

void load_engine(Engine& e, const std::map<std::string, std::string>& states, const std::string& name) {
  const auto it = states.find(name);
  if (it == states.end()) throw CheckpointError("checkpoint lacks RNG state '" + name + "'");
  std::istringstream is(it->second);
  is >> e;
  if (!is) throw CheckpointError("checkpoint RNG state '" + name + "' is malformed");
}

Engine make_engine(std::uint64_t seed, std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), salt};
  return Engine(seq);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot write " + path.string());
  f << text;
  if (!f) throw RuntimeFailure("failed writing " + path.string());
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
  return buf;
}

struct Streams {
  Engine order;
  Engine pair;
  Engine sampler;
};

SampleWeights uniform_weights(const TrainingConfig& c, const BinaryMask& gt, Engine& rng) {
  return c.uniform == UniformVariant::kStochastic ? stochastic_uniform_sample(gt.extent(), rng) : uniform_sample(gt);
}

struct StepLoss {
  double large = 0.0;
  double small = 0.0;
  double total = 0.0;
  std::optional<double> alpha;
};

// Forward, loss and backward for one (X_L, X_S) pair; gradients are scaled
// by `scale` and accumulated into the network.
StepLoss pair_step(DualBranchNet& net, const TrainingConfig& c, const ModulationSchedule& schedule, int epoch,
                   const LabeledImage& a, const LabeledImage& b, Engine& sampler, double scale) {
  StepLoss out;
  if (c.model == ModelKind::kDual) {
    auto [pl, ps] = net.forward_train(a.image, b.image);
    const SampleWeights wl = uniform_weights(c, a.mask, sampler);
    const SampleWeights ws = rebalanced_sample(b.mask, c.sampler, sampler);
    auto g = dsm_loss_gradient({pl.prob, a.mask, wl}, {ps.prob, b.mask, ws}, epoch, schedule, c.dice_eps);
    require_finite(g.grad_large, "large-branch gradient");
    require_finite(g.grad_small, "small-branch gradient");
    if (scale != 1.0) {
      for (auto& v : g.grad_large.values()) v *= scale;
      for (auto& v : g.grad_small.values()) v *= scale;
    }
    net.backward_branch(pl, g.grad_large);
    net.backward_branch(ps, g.grad_small);
    out = {g.breakdown.large, g.breakdown.small, g.breakdown.total, g.breakdown.alpha};
    return out;
  }
  // Single branch: both fetched images go through the same network and the
  // loss is their mean.
  double values[2];
  const LabeledImage* imgs[2] = {&a, &b};
  for (int i = 0; i < 2; ++i) {
    auto pass = net.forward_branch(BranchId::kLarge, imgs[i]->image);
    LossGradient g = c.loss == LossKind::kCbce
                         ? cbce_loss_gradient(pass.prob, imgs[i]->mask, c.cbce_clip)
                         : dice_loss_gradient(pass.prob, imgs[i]->mask, uniform_weights(c, imgs[i]->mask, sampler),
                                              c.dice_eps);
    require_finite(g.grad, "branch gradient");
    for (auto& v : g.grad.values()) v *= 0.5 * scale;
    net.backward_branch(pass, g.grad);
    values[i] = g.value;
  }
  out.large = values[0];
  out.small = values[1];
  out.total = 0.5 * (values[0] + values[1]);
  return out;
}

}  // namespace

double poly_lr(std::uint64_t iteration, std::uint64_t max_iterations, double base_lr, double power) {
  if (max_iterations == 0) throw OutOfRange("poly_lr needs max_iterations > 0");
  if (iteration > max_iterations) {
    throw OutOfRange("iteration " + std::to_string(iteration) + " beyond max_iterations " +
                     std::to_string(max_iterations));
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iteration) / static_cast<double>(max_iterations), power);
}

void sgd_step(DualBranchNet& net, MomentumBuffers& buffers, double lr, double momentum, double weight_decay) {
  for (auto& [key, p] : net.parameters()) {
    auto& v = buffers[key];
    if (v.empty()) v.assign(p->size(), 0.0);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i] + weight_decay * p->value[i];
      v[i] = momentum * v[i] + g;
      p->value[i] -= lr * v[i];
    }
  }
}

Extent LabeledSet::extent() const {
  if (items.empty()) throw ValidationError("empty dataset");
  return items.front().image.extent();
}

LabeledSet load_labeled_set(const DatasetManifest& manifest, const TrainingConfig& config) {
  if (manifest.entries.empty()) throw ValidationError("manifest lists no images");
  LabeledSet set;
  for (const auto& e : manifest.entries) {
    LabeledImage pair = load_entry(e);
    const std::string id = e.image.stem().string();
    if (config.prep == InputPrep::kNone) {
      if (pair.image.extent() != config.input) {
        throw ExtentMismatch(id + " is " + to_string(pair.image.extent()) + " but the configured input is " +
                             to_string(config.input) + "; set preprocess or input_height/input_width");
      }
    } else {
      pair = preprocess(pair.image, pair.mask, config.preprocess_spec());
    }
    set.ids.push_back(id);
    set.items.push_back(std::move(pair));
  }
  return set;
}

TrainingSet::TrainingSet(LabeledSet base, bool augment) : base_(std::move(base)), augment_(augment) {
  if (base_.items.empty()) throw ValidationError("training set is empty");
  if (base_.ids.size() != base_.items.size()) throw ValidationError("training ids and images differ in count");
  const Extent e = base_.extent();
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (base_.items[i].image.extent() != e) throw ExtentMismatch(base_.ids[i] + " differs in extent");
    if (augment_ && e.height != e.width) {
      throw ExtentMismatch("rotation augmentation needs square images, got " + to_string(e));
    }
  }
}

std::size_t TrainingSet::size() const { return base_.size() * (augment_ ? kAllAugmentations.size() : 1); }

LabeledImage TrainingSet::get(std::size_t index) const {
  if (!augment_) return base_.items.at(index);
  const std::size_t n = kAllAugmentations.size();
  return apply_augmentation(base_.items.at(index / n), kAllAugmentations[index % n]);
}

std::string TrainingSet::id(std::size_t index) const {
  if (!augment_) return base_.ids.at(index);
  const std::size_t n = kAllAugmentations.size();
  return base_.ids.at(index / n) + "/" + std::string(to_string(kAllAugmentations[index % n]));
}

std::string to_json_line(const LogRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["epoch"] = r.epoch;
  j["alpha"] = r.alpha ? nlohmann::ordered_json(*r.alpha) : nlohmann::ordered_json(nullptr);
  j["L_L"] = r.large;
  j["L_S"] = r.small;
  j["total"] = r.total;
  j["lr"] = r.lr;
  j["image_L"] = r.image_large;
  j["image_S"] = r.image_small;
  return j.dump();
}

DualBranchNet build_network(const TrainingConfig& config, Extent input) {
  const BackboneSpec spec = BackboneSpec::tinyseg();
  DualBranchNet net = config.model == ModelKind::kDual ? DualBranchNet::build_dual(spec, config.share_depth, config.seed)
                                                       : DualBranchNet::build_single(spec, config.seed);
  net.set_input_extent(input);
  return net;
}

std::uint64_t iterations_per_epoch(const TrainingConfig& config, std::size_t training_images) {
  const auto pairs = static_cast<std::uint64_t>(config.pairs_per_iteration());
  return (training_images + pairs - 1) / pairs;
}

TrainResult train(const TrainingConfig& config, const TrainingSet& data, const std::filesystem::path& out_dir,
                  const TrainOptions& options) {
  config.validate();
  keep_freed_memory();
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "effective.cfg", dump_config(config));

  TrainResult result;
  Streams rng{make_engine(config.data_seed, 1), make_engine(config.data_seed, 2), make_engine(config.data_seed, 3)};
  MomentumBuffers momentum;
  int start_epoch = 0;
  std::uint64_t iteration = 0;
  if (!options.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(options.resume_from);
    if (ck.net.input_extent() != data.extent()) {
      throw ExtentMismatch("checkpoint expects " + to_string(ck.net.input_extent()) + " inputs, data is " +
                           to_string(data.extent()));
    }
    result.net = std::move(ck.net);
    start_epoch = ck.state.epochs_completed;
    iteration = ck.state.iterations_completed;
    momentum = std::move(ck.state.momentum);
    load_engine(rng.order, ck.state.rng_states, "order");
    load_engine(rng.pair, ck.state.rng_states, "pair");
    load_engine(rng.sampler, ck.state.rng_states, "sampler");
    if ((config.model == ModelKind::kDual) != result.net.is_dual()) {
      throw CheckpointError("checkpoint model kind does not match the config");
    }
  } else {
    result.net = build_network(config, data.extent());
  }

  const std::uint64_t per_epoch = iterations_per_epoch(config, data.size());
  const std::uint64_t max_iter = per_epoch * static_cast<std::uint64_t>(config.epochs);
  const ModulationSchedule schedule{config.epochs, config.orientation};
  const int last_epoch = options.stop_after_epochs > 0 ? std::min(options.stop_after_epochs, config.epochs) : config.epochs;
  const int pairs = config.pairs_per_iteration();

  result.log_path = out_dir / "train_log.jsonl";
  std::ofstream log(result.log_path, options.resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw RuntimeFailure("cannot write " + result.log_path.string());

  std::vector<std::size_t> order(data.size());
  std::uniform_int_distribution<std::size_t> draw(0, data.size() - 1);
  for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.order);
    for (std::uint64_t step = 0; step < per_epoch; ++step) {
      const double lr = poly_lr(iteration, max_iter, config.base_lr, config.lr_power);
      result.net.zero_grad();
      LogRecord rec;
      rec.iteration = iteration;
      rec.epoch = epoch;
      rec.lr = lr;
      for (int p = 0; p < pairs; ++p) {
        const std::size_t il = order[(step * pairs + static_cast<std::uint64_t>(p)) % order.size()];
        const std::size_t is = draw(rng.pair);
        const LabeledImage a = data.get(il);
        const LabeledImage b = data.get(is);
        StepLoss loss;
        try {
          loss = pair_step(result.net, config, schedule, epoch, a, b, rng.sampler, 1.0 / pairs);
        } catch (const NonFiniteValue& e) {
          throw RuntimeFailure("training diverged at iteration " + std::to_string(iteration) + " (epoch " +
                               std::to_string(epoch) + ", images " + data.id(il) + " / " + data.id(is) +
                               ", data_seed " + std::to_string(config.data_seed) + "): " + e.what());
        }
        if (!std::isfinite(loss.total)) {
          throw RuntimeFailure("non-finite loss at iteration " + std::to_string(iteration) + " (epoch " +
                               std::to_string(epoch) + ", images " + data.id(il) + " / " + data.id(is) +
                               ", data_seed " + std::to_string(config.data_seed) + ")");
        }
        rec.large += loss.large / pairs;
        rec.small += loss.small / pairs;
        rec.total += loss.total / pairs;
        rec.alpha = loss.alpha;
        rec.image_large += (p ? "," : "") + data.id(il);
        rec.image_small += (p ? "," : "") + data.id(is);
      }
      sgd_step(result.net, momentum, lr, config.momentum, config.weight_decay);
      log << to_json_line(rec) << '\n';
      result.records.push_back(std::move(rec));
      ++iteration;
    }
    log.flush();

    result.state.epochs_completed = epoch + 1;
    result.state.iterations_completed = iteration;
    result.state.momentum = momentum;
    result.state.rng_states = {{"order", save_engine(rng.order)},
                               {"pair", save_engine(rng.pair)},
                               {"sampler", save_engine(rng.sampler)}};
    result.state.config = dump_config(config);
    if (options.write_checkpoints) {
      result.last_checkpoint = out_dir / "checkpoints" / epoch_name(epoch + 1);
      std::filesystem::create_directories(result.last_checkpoint.parent_path());
      save_checkpoint(result.last_checkpoint, result.net, result.state);
    }
    log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " done, last loss " +
             (result.records.empty() ? std::string("n/a") : std::to_string(result.records.back().total)));
  }
  if (!log) throw RuntimeFailure("failed writing " + result.log_path.string());
  return result;
}

TrainResult train(const TrainingConfig& config, const std::filesystem::path& out_dir, const TrainOptions& options) {
  if (config.train_manifest.empty()) throw ValidationError("config has no train_manifest");
  const DatasetManifest manifest = read_manifest(config.train_manifest);
  return train(config, TrainingSet(load_labeled_set(manifest, config), config.augment), out_dir, options);
}

std::vector<EvalItem> predict(const DualBranchNet& net, const LabeledSet& data) {
  std::vector<EvalItem> items;
  items.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    items.push_back({data.ids[i], net.forward_infer(data.items[i].image), data.items[i].mask});
  }
  return items;
}

MetricsReport evaluate_network(const DualBranchNet& net, const LabeledSet& data, const MetricConfig& metrics) {
  const auto items = predict(net, data);
  return evaluate_dataset(items, metrics);
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                                  const TrainingConfig& config, const std::filesystem::path& report_path) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  TrainingConfig c = config;
  c.input = ck.net.input_extent();
  const LabeledSet data = load_labeled_set(manifest, c);
  const MetricsReport report = evaluate_network(ck.net, data, config.metric_config());
  if (!report_path.empty()) write_text(report_path, to_json(report) + "\n");
  return report;
}

std::vector<AblationCell> loss_ablation_cells(const TrainingConfig& base) {
  std::vector<AblationCell> cells;
  TrainingConfig c = base;
  c.model = ModelKind::kSingle;
  c.loss = LossKind::kCbce;
  cells.push_back({"single_cbce", c});
  c.loss = LossKind::kDice;
  cells.push_back({"single_dice", c});
  c = base;
  c.model = ModelKind::kDual;
  c.loss = LossKind::kDsm;
  cells.push_back({"dual_dsm", c});
  return cells;
}

std::vector<AblationCell> rate_ablation_cells(const TrainingConfig& base) {
  std::vector<AblationCell> cells;
  TrainingConfig c = base;
  c.model = ModelKind::kDual;
  c.loss = LossKind::kDsm;
  c.sampler.rate_mode = RateMode::kFixed;
  for (const auto& [name, rate] : {std::pair{"rate_0.25", 0.25}, {"rate_0.5", 0.5}, {"rate_0.75", 0.75}}) {
    c.sampler.rate = rate;
    cells.push_back({name, c});
  }
  c.sampler.rate = 0.5;
  c.sampler.rate_mode = RateMode::kReverseClassFrequency;
  cells.push_back({"rate_reverse_class_frequency", c});
  return cells;
}

AblationResult ablation_run(const std::vector<AblationCell>& cells, const LabeledSet& train_set,
                            const LabeledSet& test_set, const MetricConfig& metrics,
                            const std::filesystem::path& out_dir) {
  if (cells.empty()) throw ValidationError("ablation matrix is empty");
  for (const auto& cell : cells) cell.config.validate();
  AblationResult result;
  for (const auto& cell : cells) {
    log_info("ablation cell " + cell.name);
    const auto dir = out_dir / cell.name;
    const TrainResult run = train(cell.config, TrainingSet(train_set, cell.config.augment), dir);
    MetricsReport report = evaluate_network(run.net, test_set, metrics);
    write_text(dir / "report.json", to_json(report) + "\n");
    result.reports.emplace_back(cell.name, std::move(report));
  }
  result.table = comparison_table(result.reports);
  write_text(out_dir / "comparison.md", result.table);
  return result;
}

std::string comparison_table(const std::vector<std::pair<std::string, MetricsReport>>& reports) {
  std::vector<double> sigmas;
  bool small = false;
  for (const auto& [name, r] : reports) {
    for (const auto& [s, f] : r.f_sigma) {
      if (std::find(sigmas.begin(), sigmas.end(), s) == sigmas.end()) sigmas.push_back(s);
    }
    small = small || !r.f_sigma_small.empty();
  }
  std::sort(sigmas.begin(), sigmas.end());
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  std::string out = "| run | SN | PPV | F_pixel | IoU | AUPR |";
  std::string rule = "|---|---|---|---|---|---|";
  for (double s : sigmas) {
    out += " F_" + sigma_key(s) + " |";
    rule += "---|";
  }
  if (small) {
    for (double s : sigmas) {
      out += " F_" + sigma_key(s) + " small |";
      rule += "---|";
    }
  }
  out += "\n" + rule + "\n";
  for (const auto& [name, r] : reports) {
    out += "| " + name + " | " + num(r.scores.sn) + " | " + num(r.scores.ppv) + " | " + num(r.scores.f) + " | " +
           num(r.scores.iou) + " | " + num(r.aupr) + " |";
    for (double s : sigmas) out += " " + (r.f_sigma.count(s) ? num(r.f_sigma.at(s)) : std::string("-")) + " |";
    if (small) {
      for (double s : sigmas) {
        out += " " + (r.f_sigma_small.count(s) ? num(r.f_sigma_small.at(s)) : std::string("-")) + " |";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace dsm
