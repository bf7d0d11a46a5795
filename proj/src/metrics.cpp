#include "dsm/metrics.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace dsm {

namespace {

void check_extents(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.extent() != gt.extent()) {
    throw ExtentMismatch("prediction is " + to_string(pred.extent()) + " but ground truth is " +
                         to_string(gt.extent()));
  }
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<Component> connected_components(const BinaryMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw OutOfRange("connectivity must be 4 or 8, got " + std::to_string(connectivity));
  }
  const int h = mask.height();
  const int w = mask.width();
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<Component> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    Component comp;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      comp.push_back(idx);
      const int y = static_cast<int>(idx / static_cast<std::size_t>(w));
      const int x = static_cast<int>(idx % static_cast<std::size_t>(w));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (connectivity == 4 && dy != 0 && dx != 0) continue;
          const int ny = y + dy;
          const int nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * static_cast<std::size_t>(w) + static_cast<std::size_t>(nx);
          if (mask[n] && !seen[n]) {
            seen[n] = 1;
            stack.push_back(n);
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

ConfusionCounts pixel_confusion(const BinaryMask& pred, const BinaryMask& gt) {
  check_extents(pred, gt);
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i];
    const bool g = gt[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f_score(double sn, double ppv) { return sn + ppv == 0.0 ? 0.0 : 2.0 * sn * ppv / (sn + ppv); }

PixelScores pixel_scores(const ConfusionCounts& c) {
  PixelScores s;
  s.sn = ratio(c.tp, c.tp + c.fn);
  s.ppv = ratio(c.tp, c.tp + c.fp);
  s.f = f_score(s.sn, s.ppv);
  s.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  return s;
}

std::vector<double> default_thresholds(int n) {
  if (n < 2) throw OutOfRange("need at least 2 thresholds");
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(n - 1 - i) / (n - 1);
  return t;
}

PrAccumulator::PrAccumulator(std::vector<double> thresholds)
    : thresholds_(std::move(thresholds)), pos_hist_(thresholds_.size() + 1, 0), neg_hist_(thresholds_.size() + 1, 0) {
  if (thresholds_.size() < 2) throw OutOfRange("AUPR needs at least 2 thresholds");
  for (std::size_t i = 1; i < thresholds_.size(); ++i) {
    if (!(thresholds_[i] < thresholds_[i - 1])) throw OutOfRange("AUPR thresholds must be strictly descending");
  }
}

void PrAccumulator::add(const ProbabilityMask& prob, const BinaryMask& gt) {
  if (prob.extent() != gt.extent()) {
    throw ExtentMismatch("prediction is " + to_string(prob.extent()) + " but ground truth is " +
                         to_string(gt.extent()));
  }
  for (std::size_t i = 0; i < prob.size(); ++i) {
    // First threshold index k with thresholds_[k] <= p; the pixel counts as
    // positive for that threshold and every lower one.
    const double p = prob[i];
    const auto it = std::lower_bound(thresholds_.begin(), thresholds_.end(), p, std::greater<>());
    const auto k = static_cast<std::size_t>(it - thresholds_.begin());
    if (gt[i]) {
      ++pos_hist_[k];
      ++positives_;
    } else {
      ++neg_hist_[k];
    }
  }
}

std::vector<PrPoint> PrAccumulator::curve() const {
  std::vector<PrPoint> pts;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  for (std::size_t k = 0; k < thresholds_.size(); ++k) {
    tp += pos_hist_[k];
    fp += neg_hist_[k];
    if (tp + fp == 0) continue;
    pts.push_back({thresholds_[k], ratio(tp, tp + fp), ratio(tp, positives_)});
  }
  return pts;
}

double PrAccumulator::area(AuprIntegration method) const {
  if (positives_ == 0) throw ValidationError("AUPR undefined: ground truth has no positive pixels");
  const auto pts = curve();
  double area = 0.0;
  double prev_recall = 0.0;
  double prev_precision = 1.0;
  for (const auto& pt : pts) {
    const double dr = pt.recall - prev_recall;
    area += method == AuprIntegration::kStep ? dr * pt.precision : 0.5 * dr * (pt.precision + prev_precision);
    prev_recall = pt.recall;
    prev_precision = pt.precision;
  }
  return area;
}

double aupr(const ProbabilityMask& prob, const BinaryMask& gt, const std::vector<double>& thresholds,
            AuprIntegration method) {
  PrAccumulator acc(thresholds);
  acc.add(prob, gt);
  return acc.area(method);
}

RegionMatchResult region_confusion(const BinaryMask& pred, const BinaryMask& gt, double sigma,
                                   const RegionOptions& options) {
  check_extents(pred, gt);
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw OutOfRange("sigma must lie in [0,1], got " + std::to_string(sigma));

  RegionMatchResult r;
  r.sigma = sigma;
  r.predicted = connected_components(pred, options.connectivity);
  r.truth = connected_components(gt, options.connectivity);
  r.tp = BinaryMask(gt.height(), gt.width());
  BinaryMask fp_raw(gt.height(), gt.width());
  BinaryMask fn_raw(gt.height(), gt.width());

  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i] && gt[i]) r.tp.set(i, true);
  }
  for (const auto& comp : r.predicted) {
    std::size_t hit = 0;
    for (auto idx : comp) hit += gt[idx] ? 1 : 0;
    const double overlap = static_cast<double>(hit) / static_cast<double>(comp.size());
    if (overlap > sigma) {
      for (auto idx : comp) r.tp.set(idx, true);
    } else {
      // Covers the fully disjoint components too (hit == 0).
      for (auto idx : comp) {
        if (!gt[idx]) fp_raw.set(idx, true);
      }
    }
  }
  for (const auto& comp : r.truth) {
    std::size_t hit = 0;
    for (auto idx : comp) hit += pred[idx] ? 1 : 0;
    const double size = static_cast<double>(comp.size());
    const double covered = static_cast<double>(hit) / size;
    if (covered > sigma) {
      for (auto idx : comp) r.tp.set(idx, true);
    }
    bool add_missed = hit == 0;
    if (!add_missed) {
      add_missed = options.fn_mode == FnMode::kLiteral ? static_cast<double>(comp.size() - hit) / size <= sigma
                                                       : covered <= sigma;
    }
    if (add_missed) {
      for (auto idx : comp) {
        if (!pred[idx]) fn_raw.set(idx, true);
      }
    }
  }

  r.fp = BinaryMask(gt.height(), gt.width());
  r.fn = BinaryMask(gt.height(), gt.width());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (r.tp[i]) continue;
    if (fp_raw[i]) {
      r.fp.set(i, true);
    } else if (fn_raw[i]) {
      r.fn.set(i, true);
    }
  }
  return r;
}

RegionScores region_f_score(const RegionCounts& c) {
  RegionScores s;
  s.sn = ratio(c.tp, c.tp + c.fn);
  s.ppv = ratio(c.tp, c.tp + c.fp);
  s.f = f_score(s.sn, s.ppv);
  return s;
}

RegionScores region_f_score(const RegionMatchResult& result) {
  return region_f_score(RegionCounts{result.tp_count(), result.fp_count(), result.fn_count()});
}

MaskPair restrict_to_small_components(const BinaryMask& pred, const BinaryMask& gt, std::size_t max_area,
                                      int connectivity) {
  check_extents(pred, gt);
  MaskPair out{pred, gt};
  BinaryMask large(gt.height(), gt.width());
  for (const auto& comp : connected_components(gt, connectivity)) {
    if (comp.size() <= max_area) continue;
    for (auto idx : comp) {
      large.set(idx, true);
      out.gt.set(idx, false);
    }
  }
  for (const auto& comp : connected_components(pred, connectivity)) {
    const bool touches = std::any_of(comp.begin(), comp.end(), [&](std::size_t idx) { return large[idx]; });
    if (!touches) continue;
    for (auto idx : comp) out.pred.set(idx, false);
  }
  return out;
}

MetricsReport evaluate_dataset(std::span<const EvalItem> items, const MetricConfig& config) {
  if (items.empty()) throw ValidationError("evaluation needs at least one image");
  MetricsReport report;
  PrAccumulator pr(config.pr_thresholds);
  std::map<double, RegionCounts> pooled_region;
  std::map<double, double> mean_f;
  std::map<double, RegionCounts> pooled_small;
  std::map<double, double> mean_small;

  for (const auto& item : items) {
    if (item.prob.extent() != item.gt.extent()) {
      throw ExtentMismatch(item.id + ": prediction is " + to_string(item.prob.extent()) + " but ground truth is " +
                           to_string(item.gt.extent()));
    }
    const BinaryMask pred = binarize(item.prob, config.threshold);
    ImageMetrics im;
    im.id = item.id;
    im.pixel = pixel_confusion(pred, item.gt);
    im.scores = pixel_scores(im.pixel);
    for (double sigma : config.sigmas) {
      const auto match = region_confusion(pred, item.gt, sigma, config.region);
      const RegionCounts counts{match.tp_count(), match.fp_count(), match.fn_count()};
      im.region[sigma] = counts;
      im.f_sigma[sigma] = region_f_score(counts).f;
      pooled_region[sigma] += counts;
      mean_f[sigma] += im.f_sigma[sigma];
    }
    if (config.small_max_area > 0) {
      const auto view = restrict_to_small_components(pred, item.gt, config.small_max_area, config.region.connectivity);
      for (double sigma : config.sigmas) {
        const auto match = region_confusion(view.pred, view.gt, sigma, config.region);
        const RegionCounts counts{match.tp_count(), match.fp_count(), match.fn_count()};
        pooled_small[sigma] += counts;
        mean_small[sigma] += region_f_score(counts).f;
      }
    }
    report.pixel += im.pixel;
    pr.add(item.prob, item.gt);
    report.per_image.push_back(std::move(im));
  }

  report.scores = pixel_scores(report.pixel);
  report.aupr = pr.area(config.aupr_method);
  report.pr_curve = pr.curve();
  for (double sigma : config.sigmas) {
    report.f_sigma[sigma] = config.region_pooling == RegionPooling::kPooled
                                ? region_f_score(pooled_region[sigma]).f
                                : mean_f[sigma] / static_cast<double>(items.size());
    if (config.small_max_area > 0) {
      report.f_sigma_small[sigma] = config.region_pooling == RegionPooling::kPooled
                                        ? region_f_score(pooled_small[sigma]).f
                                        : mean_small[sigma] / static_cast<double>(items.size());
    }
  }
  return report;
}

std::string sigma_key(double sigma) {
  std::ostringstream os;
  os << sigma;
  return os.str();
}

std::string to_json(const MetricsReport& report, int indent) {
  using nlohmann::json;
  json j;
  j["SN_pixel"] = report.scores.sn;
  j["PPV_pixel"] = report.scores.ppv;
  j["F_pixel"] = report.scores.f;
  j["IoU"] = report.scores.iou;
  j["AUPR"] = report.aupr;
  json fs = json::object();
  for (const auto& [sigma, f] : report.f_sigma) fs[sigma_key(sigma)] = f;
  j["F_sigma"] = fs;
  if (!report.f_sigma_small.empty()) {
    json small = json::object();
    for (const auto& [sigma, f] : report.f_sigma_small) small[sigma_key(sigma)] = f;
    j["F_sigma_small"] = small;
  }
  j["confusion"] = {{"TP", report.pixel.tp}, {"FP", report.pixel.fp}, {"FN", report.pixel.fn}, {"TN", report.pixel.tn}};
  json curve = json::array();
  for (const auto& p : report.pr_curve) {
    curve.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
  }
  j["pr_curve"] = curve;
  json per = json::array();
  for (const auto& im : report.per_image) {
    json e;
    e["id"] = im.id;
    e["SN_pixel"] = im.scores.sn;
    e["PPV_pixel"] = im.scores.ppv;
    e["F_pixel"] = im.scores.f;
    e["IoU"] = im.scores.iou;
    json f = json::object();
    for (const auto& [sigma, v] : im.f_sigma) f[sigma_key(sigma)] = v;
    e["F_sigma"] = f;
    e["confusion"] = {{"TP", im.pixel.tp}, {"FP", im.pixel.fp}, {"FN", im.pixel.fn}, {"TN", im.pixel.tn}};
    per.push_back(std::move(e));
  }
  j["per_image"] = per;
  return j.dump(indent);
}

}  // namespace dsm
