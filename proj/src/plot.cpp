#include "dsm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace dsm {

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127}};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

void render_line_chart(const std::vector<Series>& series, const ChartSpec& spec, const std::filesystem::path& path) {
  if (series.empty()) throw ValidationError("nothing to plot for " + path.string());
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ValidationError("series '" + s.name + "' has mismatched x/y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (spec.fixed_unit_range || !std::isfinite(x0)) {
    x0 = y0 = 0.0;
    x1 = y1 = 1.0;
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;

  const int left = 80, right = 30, top = 50, bottom = 60;
  cv::Mat img(spec.height, spec.width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pw = spec.width - left - right;
  const int ph = spec.height - top - bottom;
  auto px = [&](double x, double y) {
    return cv::Point(left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)),
                     top + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)));
  };

  const int font = cv::FONT_HERSHEY_SIMPLEX;
  for (int i = 0; i <= 5; ++i) {
    const double fx = x0 + (x1 - x0) * i / 5.0;
    const double fy = y0 + (y1 - y0) * i / 5.0;
    const cv::Point gx = px(fx, y0);
    const cv::Point gy = px(x0, fy);
    cv::line(img, {gx.x, top}, {gx.x, top + ph}, cv::Scalar(230, 230, 230), 1);
    cv::line(img, {left, gy.y}, {left + pw, gy.y}, cv::Scalar(230, 230, 230), 1);
    cv::putText(img, tick_label(fx), {gx.x - 15, top + ph + 20}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(img, tick_label(fy), {8, gy.y + 4}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, cv::Scalar(0, 0, 0), 1);
  cv::putText(img, spec.title, {left, 30}, font, 0.6, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, spec.x_label, {left + pw / 2 - 30, spec.height - 15}, font, 0.5, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);
  cv::putText(img, spec.y_label, {8, top - 10}, font, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar colour = kPalette[k % std::size(kPalette)];
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.push_back(px(s.x[i], s.y[i]));
    }
    if (pts.size() == 1) cv::circle(img, pts.front(), 3, colour, cv::FILLED, cv::LINE_AA);
    if (pts.size() > 1) cv::polylines(img, pts, false, colour, 2, cv::LINE_AA);
    const int ly = top + 18 + static_cast<int>(k) * 18;
    cv::line(img, {left + pw - 170, ly - 4}, {left + pw - 145, ly - 4}, colour, 2);
    cv::putText(img, s.name, {left + pw - 140, ly}, font, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw RuntimeFailure("cannot write plot " + path.string());
}

std::vector<LogRecord> read_training_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read training log " + path.string());
  std::vector<LogRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LogRecord r;
      r.iteration = j.at("iteration").get<std::uint64_t>();
      r.epoch = j.at("epoch").get<int>();
      if (!j.at("alpha").is_null()) r.alpha = j.at("alpha").get<double>();
      r.large = j.at("L_L").get<double>();
      r.small = j.at("L_S").get<double>();
      r.total = j.at("total").get<double>();
      r.lr = j.value("lr", 0.0);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void plot_loss_curves(const std::vector<LogRecord>& log, const std::filesystem::path& path) {
  Series large{"L_L", {}, {}}, small{"L_S", {}, {}}, total{"total", {}, {}};
  for (const auto& r : log) {
    const double x = static_cast<double>(r.iteration);
    large.x.push_back(x);
    large.y.push_back(r.large);
    small.x.push_back(x);
    small.y.push_back(r.small);
    total.x.push_back(x);
    total.y.push_back(r.total);
  }
  render_line_chart({large, small, total}, {"training loss", "iteration", "loss"}, path);
}

void plot_alpha_schedule(const ModulationSchedule& schedule, const std::filesystem::path& path) {
  Series alpha{"alpha", {}, {}}, wl{"weight L_L", {}, {}}, ws{"weight L_S", {}, {}};
  const int steps = std::max(100, schedule.epoch_max);
  for (int i = 0; i <= steps; ++i) {
    const double e = schedule.epoch_max * static_cast<double>(i) / steps;
    const double a = 1.0 - (e / schedule.epoch_max) * (e / schedule.epoch_max);
    const double w_large = schedule.orientation == Orientation::kText ? a : 1.0 - a;
    alpha.x.push_back(e);
    alpha.y.push_back(a);
    wl.x.push_back(e);
    wl.y.push_back(w_large);
    ws.x.push_back(e);
    ws.y.push_back(1.0 - w_large);
  }
  render_line_chart({alpha, wl, ws}, {"alpha schedule", "epoch", "weight"}, path);
}

void plot_pr_curves(const std::vector<std::pair<std::string, std::filesystem::path>>& reports,
                    const std::filesystem::path& path) {
  std::vector<Series> series;
  for (const auto& [name, file] : reports) {
    std::ifstream f(file);
    if (!f) throw ValidationError("cannot read report " + file.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(file.string() + ": " + e.what());
    }
    Series s{name, {}, {}};
    for (const auto& p : j.at("pr_curve")) {
      s.x.push_back(p.at("recall").get<double>());
      s.y.push_back(p.at("precision").get<double>());
    }
    if (j.contains("AUPR")) s.name += " (AUPR " + tick_label(j.at("AUPR").get<double>()) + ")";
    series.push_back(std::move(s));
  }
  ChartSpec spec{"precision-recall", "recall", "precision"};
  spec.fixed_unit_range = true;
  render_line_chart(series, spec, path);
}

}  // namespace dsm
