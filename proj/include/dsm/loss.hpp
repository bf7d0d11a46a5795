#pragma once

#include "dsm/core_types.hpp"
#include "dsm/sampling.hpp"

namespace dsm {

/// Which branch carries alpha in the combined loss.
enum class Orientation {
  kText,        // alpha * L_L + (1 - alpha) * L_S: large-lesion branch leads early
  kPrintedEq5,  // (1 - alpha) * L_L + alpha * L_S
};

/// alpha = 1 - (epoch / epoch_max)^2.
double modulation_alpha(int epoch, int epoch_max);

struct ModulationSchedule {
  int epoch_max = 1;
  Orientation orientation = Orientation::kText;

  double alpha(int epoch) const { return modulation_alpha(epoch, epoch_max); }
  /// Weights applied to (L_L, L_S) at this epoch.
  std::pair<double, double> branch_weights(int epoch) const;
};

struct LossBreakdown {
  double large = 0.0;
  double small = 0.0;
  double alpha = 1.0;
  double total = 0.0;
};

/// Loss value together with dLoss/dp at every pixel.
struct LossGradient {
  double value = 0.0;
  Grid<double> grad;
};

inline constexpr double kDefaultDiceEps = 1e-6;
inline constexpr double kDefaultCbceClip = 1e-7;

/// (2 sum w p y + eps) / (sum w p + sum w y + eps).
double dice_coefficient(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights,
                        double eps = kDefaultDiceEps);
double dice_loss(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights,
                 double eps = kDefaultDiceEps);
LossGradient dice_loss_gradient(const ProbabilityMask& pred, const BinaryMask& gt, const SampleWeights& weights,
                                double eps = kDefaultDiceEps);

/// Class-balanced cross-entropy with beta = #negatives / N of this image;
/// positives weighted by beta, negatives by 1 - beta, averaged over N.
/// Probabilities are clamped into [clip, 1 - clip] before the logs.
double cbce_loss(const ProbabilityMask& pred, const BinaryMask& gt, double clip = kDefaultCbceClip);
LossGradient cbce_loss_gradient(const ProbabilityMask& pred, const BinaryMask& gt, double clip = kDefaultCbceClip);

/// Combines two branch losses with the schedule's weights at `epoch`.
LossBreakdown combine_branch_losses(double large, double small, int epoch, const ModulationSchedule& schedule);

struct BranchInput {
  const ProbabilityMask& pred;
  const BinaryMask& gt;
  const SampleWeights& weights;
};

LossBreakdown dsm_loss(const BranchInput& large, const BranchInput& small, int epoch,
                       const ModulationSchedule& schedule, double eps = kDefaultDiceEps);

struct DsmGradient {
  LossBreakdown breakdown;
  Grid<double> grad_large;  // dTotal/dp for the large-branch prediction
  Grid<double> grad_small;
};

DsmGradient dsm_loss_gradient(const BranchInput& large, const BranchInput& small, int epoch,
                              const ModulationSchedule& schedule, double eps = kDefaultDiceEps);

/// Throws NonFiniteValue naming the first non-finite pixel.
void require_finite(const Grid<double>& grad, std::string_view what);

}  // namespace dsm
