#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dsm/core_types.hpp"

namespace dsm {

/// Sorted pixel indices (row-major) of one connected foreground region.
using Component = std::vector<std::size_t>;

/// Components are ordered by their first pixel in raster order.
std::vector<Component> connected_components(const BinaryMask& mask, int connectivity = 8);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts pixel_confusion(const BinaryMask& pred, const BinaryMask& gt);

struct PixelScores {
  double sn = 0.0;
  double ppv = 0.0;
  double f = 0.0;
  double iou = 0.0;
};

/// Harmonic mean; 0 when both inputs are 0.
double f_score(double sn, double ppv);
/// 0/0 evaluates to 0 for every ratio.
PixelScores pixel_scores(const ConfusionCounts& c);

// ---- precision-recall -------------------------------------------------------

enum class AuprIntegration {
  kStep,       // sum (R_k - R_{k-1}) * P_k, R_0 = 0
  kTrapezoid,  // trapezoids through (0, 1) and every defined point
};

/// n evenly spaced thresholds from 1 down to 0.
std::vector<double> default_thresholds(int n = 256);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Pools per-threshold counts over any number of images.
class PrAccumulator {
 public:
  /// thresholds must be strictly descending with at least 2 entries.
  explicit PrAccumulator(std::vector<double> thresholds);

  void add(const ProbabilityMask& prob, const BinaryMask& gt);
  std::uint64_t positives() const { return positives_; }

  /// Points where at least one pixel is predicted positive, in threshold order.
  std::vector<PrPoint> curve() const;
  /// Throws ValidationError when no positive pixel has been seen.
  double area(AuprIntegration method = AuprIntegration::kStep) const;

 private:
  std::vector<double> thresholds_;
  std::vector<std::uint64_t> pos_hist_;
  std::vector<std::uint64_t> neg_hist_;
  std::uint64_t positives_ = 0;
};

double aupr(const ProbabilityMask& prob, const BinaryMask& gt, const std::vector<double>& thresholds,
            AuprIntegration method = AuprIntegration::kStep);

// ---- region level -----------------------------------------------------------

enum class FnMode {
  kLiteral,    // C_i minus prediction, when |C_i \ P| / |C_i| <= sigma
  kCorrected,  // C_i minus prediction, when |P n C_i| / |C_i| <= sigma
};

struct RegionOptions {
  int connectivity = 8;
  FnMode fn_mode = FnMode::kLiteral;
};

struct RegionMatchResult {
  double sigma = 0.0;
  BinaryMask tp;
  BinaryMask fp;
  BinaryMask fn;
  std::vector<Component> predicted;
  std::vector<Component> truth;

  std::uint64_t tp_count() const { return tp.count(); }
  std::uint64_t fp_count() const { return fp.count(); }
  std::uint64_t fn_count() const { return fn.count(); }
};

/// Region-level TP/FP/FN pixel sets at overlap threshold sigma; where the
/// raw sets overlap, TP takes precedence over FP over FN.
RegionMatchResult region_confusion(const BinaryMask& pred, const BinaryMask& gt, double sigma,
                                   const RegionOptions& options = {});

struct RegionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  RegionCounts& operator+=(const RegionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct RegionScores {
  double sn = 0.0;
  double ppv = 0.0;
  double f = 0.0;
};

RegionScores region_f_score(const RegionCounts& counts);
RegionScores region_f_score(const RegionMatchResult& result);

struct MaskPair {
  BinaryMask pred;
  BinaryMask gt;
};

/// Removes ground-truth components larger than max_area together with every
/// predicted component that touches one of them.
MaskPair restrict_to_small_components(const BinaryMask& pred, const BinaryMask& gt, std::size_t max_area,
                                      int connectivity = 8);

// ---- dataset evaluation ----------------------------------------------------------

enum class RegionPooling { kPooled, kPerImageMean };

struct MetricConfig {
  double threshold = 0.5;
  std::vector<double> sigmas{0.2, 0.35, 0.5, 0.65, 0.8};
  std::vector<double> pr_thresholds = default_thresholds();
  RegionOptions region;
  AuprIntegration aupr_method = AuprIntegration::kStep;
  RegionPooling region_pooling = RegionPooling::kPooled;
  /// When positive, F_sigma is also reported on the small-component view
  /// (see restrict_to_small_components).
  std::size_t small_max_area = 0;
};

struct ImageMetrics {
  std::string id;
  ConfusionCounts pixel;
  PixelScores scores;
  std::map<double, RegionCounts> region;
  std::map<double, double> f_sigma;
};

struct MetricsReport {
  ConfusionCounts pixel;
  PixelScores scores;
  double aupr = 0.0;
  std::map<double, double> f_sigma;
  std::map<double, double> f_sigma_small;
  std::vector<PrPoint> pr_curve;
  std::vector<ImageMetrics> per_image;
};

struct EvalItem {
  std::string id;
  ProbabilityMask prob;
  BinaryMask gt;
};

/// Pixel confusion, AUPR and region F_sigma pooled over the items.
MetricsReport evaluate_dataset(std::span<const EvalItem> items, const MetricConfig& config);

/// Report document: SN_pixel, PPV_pixel, F_pixel, IoU, AUPR, F_sigma {sigma: value},
/// F_sigma_small when enabled, pr_curve and a per_image array.
std::string to_json(const MetricsReport& report, int indent = 2);

/// Formats sigma the way report keys spell it ("0.2", "0.35").
std::string sigma_key(double sigma);

}  // namespace dsm
