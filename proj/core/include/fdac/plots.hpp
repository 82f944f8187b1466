#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fdac {

struct Curve {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;
};

// Both writers render SVG into a temporary file and rename it into place.
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      std::span<const Curve> curves);
void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::string& y_label, std::span<const Bar> bars);

struct PlotOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

// One accuracy-vs-round chart with a curve per metrics file, named
// accuracy_vs_round.svg. Metrics files are only read. No input files, or files
// without rows, give a warning and no figure.
PlotOutput emit_accuracy_plot(std::span<const std::filesystem::path> metrics_files,
                              const std::filesystem::path& out_dir);

// Bar chart of a comparison table written by the sweep runners
// (columns label,mean,std).
PlotOutput emit_table_plot(const std::filesystem::path& table_file, const std::filesystem::path& out_dir);

}  // namespace fdac
