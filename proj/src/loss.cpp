#include "dsm/loss.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "dsm/log.hpp"

namespace dsm {

namespace {

void check_triple(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights* weights) {
  if (pred.extent() != gt.extent()) {
    throw ExtentMismatch("prediction is " + to_string(pred.extent()) + " but ground truth is " +
                         to_string(gt.extent()));
  }
  if (weights != nullptr && weights->extent() != gt.extent()) {
    throw ExtentMismatch("sample weights are " + to_string(weights->extent()) + " but ground truth is " +
                         to_string(gt.extent()));
  }
}

struct DiceSums {
  double overlap = 0.0;  // sum w p y
  double pred = 0.0;     // sum w p
  double truth = 0.0;    // sum w y
};

DiceSums dice_sums(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights) {
  check_triple(pred, gt, &weights);
  DiceSums s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const double p = pred[i];
    s.pred += w * p;
    if (gt[i]) {
      s.truth += w;
      s.overlap += w * p;
    }
  }
  return s;
}

void warn_single_class(std::size_t positives, std::size_t n) {
  static std::atomic<int> emitted{0};
  if (emitted.fetch_add(1) >= 10) return;
  log_warning(positives == 0 ? "CBCE: mask has no positive pixels, beta = 1"
                             : (positives == n ? "CBCE: mask has no negative pixels, beta = 0"
                                               : "CBCE: degenerate mask"));
}

double cbce_beta(const BinaryMask& gt) {
  const std::size_t pos = gt.count();
  if (pos == 0 || pos == gt.size()) warn_single_class(pos, gt.size());
  return static_cast<double>(gt.size() - pos) / static_cast<double>(gt.size());
}

void check_clip(double clip) {
  if (!(clip > 0.0 && clip < 0.5)) throw OutOfRange("CBCE clip must lie in (0,0.5), got " + std::to_string(clip));
}

}  // namespace

double modulation_alpha(int epoch, int epoch_max) {
  if (epoch_max < 1) throw OutOfRange("epoch_max must be >= 1, got " + std::to_string(epoch_max));
  if (epoch < 0 || epoch > epoch_max) {
    throw OutOfRange("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(epoch_max) + "]");
  }
  const double r = static_cast<double>(epoch) / static_cast<double>(epoch_max);
  return 1.0 - r * r;
}

std::pair<double, double> ModulationSchedule::branch_weights(int epoch) const {
  const double a = alpha(epoch);
  return orientation == Orientation::kText ? std::pair{a, 1.0 - a} : std::pair{1.0 - a, a};
}

double dice_coefficient(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights, double eps) {
  if (eps < 0.0) throw OutOfRange("dice eps must be >= 0");
  const DiceSums s = dice_sums(pred, gt, weights);
  const double denom = s.pred + s.truth + eps;
  if (denom == 0.0) throw OutOfRange("dice coefficient undefined: empty prediction and ground truth with eps = 0");
  return (2.0 * s.overlap + eps) / denom;
}

double dice_loss(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights, double eps) {
  return 1.0 - dice_coefficient(pred, gt, weights, eps);
}

LossGradient dice_loss_gradient(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights,
                                double eps) {
  if (eps < 0.0) throw OutOfRange("dice eps must be >= 0");
  const DiceSums s = dice_sums(pred, gt, weights);
  const double num = 2.0 * s.overlap + eps;
  const double den = s.pred + s.truth + eps;
  if (den == 0.0) throw OutOfRange("dice coefficient undefined: empty prediction and ground truth with eps = 0");

  LossGradient out{1.0 - num / den, Grid<double>(pred.height(), pred.width(), 0.0)};
  // dD/dp_n = w_n (2 y_n den - num) / den^2; the loss is 1 - D.
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const double y = gt[i] ? 1.0 : 0.0;
    out.grad[i] = -w * (2.0 * y * den - num) * inv_den2;
  }
  require_finite(out.grad, "dice loss gradient");
  return out;
}

double cbce_loss(const ProbabilityMask& pred, const BinaryMask& gt, double clip) {
  check_triple(pred, gt, nullptr);
  check_clip(clip);
  const double beta = cbce_beta(gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], clip, 1.0 - clip);
    acc += gt[i] ? beta * std::log(p) : (1.0 - beta) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(pred.size());
}

LossGradient cbce_loss_gradient(const ProbabilityMask& pred, const BinaryMask& gt, double clip) {
  LossGradient out{cbce_loss(pred, gt, clip), Grid<double>(pred.height(), pred.width(), 0.0)};
  const double beta = static_cast<double>(gt.size() - gt.count()) / static_cast<double>(gt.size());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    if (p < clip || p > 1.0 - clip) continue;  // clamp has zero slope outside the band
    out.grad[i] = gt[i] ? -beta * inv_n / p : (1.0 - beta) * inv_n / (1.0 - p);
  }
  require_finite(out.grad, "CBCE gradient");
  return out;
}

LossBreakdown combine_branch_losses(double large, double small, int epoch, const ModulationSchedule& schedule) {
  const auto [w_large, w_small] = schedule.branch_weights(epoch);
  return {large, small, schedule.alpha(epoch), w_large * large + w_small * small};
}

LossBreakdown dsm_loss(const BranchInput& large, const BranchInput& small, int epoch,
                       const ModulationSchedule& schedule, double eps) {
  check_triple(large.pred, large.gt, &large.weights);
  check_triple(small.pred, small.gt, &small.weights);
  return combine_branch_losses(dice_loss(large.pred, large.gt, large.weights, eps),
                               dice_loss(small.pred, small.gt, small.weights, eps), epoch, schedule);
}

DsmGradient dsm_loss_gradient(const BranchInput& large, const BranchInput& small, int epoch,
                              const ModulationSchedule& schedule, double eps) {
  auto gl = dice_loss_gradient(large.pred, large.gt, large.weights, eps);
  auto gs = dice_loss_gradient(small.pred, small.gt, small.weights, eps);
  const auto [w_large, w_small] = schedule.branch_weights(epoch);
  for (auto& g : gl.grad.values()) g *= w_large;
  for (auto& g : gs.grad.values()) g *= w_small;
  return {combine_branch_losses(gl.value, gs.value, epoch, schedule), std::move(gl.grad), std::move(gs.grad)};
}

void require_finite(const Grid<double>& grad, std::string_view what) {
  for (int y = 0; y < grad.height(); ++y) {
    for (int x = 0; x < grad.width(); ++x) {
      if (!std::isfinite(grad(y, x))) {
        std::ostringstream msg;
        msg << what << ": non-finite value " << grad(y, x) << " at pixel (" << y << "," << x << ")";
        throw NonFiniteValue(msg.str());
      }
    }
  }
}

}  // namespace dsm
