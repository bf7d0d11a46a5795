#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dsm/loss.hpp"
#include "dsm/training.hpp"

namespace dsm {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 800;
  int height = 500;
  bool fixed_unit_range = false;  // both axes span [0,1]
};

/// Static PNG line chart with axes, ticks and a legend.
void render_line_chart(const std::vector<Series>& series, const ChartSpec& spec, const std::filesystem::path& path);

std::vector<LogRecord> read_training_log(const std::filesystem::path& path);

void plot_loss_curves(const std::vector<LogRecord>& log, const std::filesystem::path& path);
void plot_alpha_schedule(const ModulationSchedule& schedule, const std::filesystem::path& path);
/// Each report is a JSON document as written by to_json(MetricsReport).
void plot_pr_curves(const std::vector<std::pair<std::string, std::filesystem::path>>& reports,
                    const std::filesystem::path& path);

}  // namespace dsm
