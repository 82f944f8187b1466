#include "fdac/plots.hpp"

#include "fdac/error.hpp"
#include "fdac/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fdac {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 56.0;

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo, hi;
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return {lo, hi};
}

void open_svg(std::ostringstream& svg, const std::string& title) {
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& svg, const Range& y, const std::string& y_label) {
  const double x0 = kLeft;
  const double x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom;
  const double y1 = kTop;
  svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.map(v, y0, y1);
    svg << "<line x1=\"" << x0 - 4 << "\" y1=\"" << num(py) << "\" x2=\"" << x0 << "\" y2=\"" << num(py)
        << "\" stroke=\"black\"/>\n<text x=\"" << x0 - 6 << "\" y=\"" << num(py + 4)
        << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  svg << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";
}

void commit(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write figure " + path.string());
    out << content;
    if (!out) throw Error("cannot write figure " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      std::span<const Curve> curves) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& c : curves) {
    if (c.x.size() != c.y.size()) throw InputError("curve '" + c.label + "' has mismatched x and y");
    for (double v : c.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : c.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!std::isfinite(xmin)) throw InputError("nothing to plot");
  const Range xr = padded(xmin, xmax);
  const Range yr = padded(ymin, ymax);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

  std::ostringstream svg;
  open_svg(svg, title);
  axes(svg, yr, y_label);
  for (int i = 0; i <= 4; ++i) {
    const double v = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    svg << "<text x=\"" << num(xr.map(v, x0, x1)) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
        << num(v) << "</text>\n";
  }
  svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 16 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const char* color = kPalette[i % kPalette.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < c.x.size(); ++j) {
      svg << (j ? " " : "") << num(xr.map(c.x[j], x0, x1)) << ',' << num(yr.map(c.y[j], y0, y1));
    }
    svg << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    svg << "<line x1=\"" << x1 + 12 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\"" << x1 + 38 << "\" y=\"" << ly + 4
        << "\">" << escape(c.label) << "</text>\n";
  }
  svg << "</svg>\n";
  commit(path, svg.str());
}

void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::string& y_label, std::span<const Bar> bars) {
  if (bars.empty()) throw InputError("nothing to plot");
  double ymax = 0.0;
  for (const auto& b : bars) ymax = std::max(ymax, b.value + b.error);
  const Range yr = padded(0.0, ymax);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double slot = (x1 - x0) / static_cast<double>(bars.size());

  std::ostringstream svg;
  open_svg(svg, title);
  axes(svg, yr, y_label);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double left = x0 + slot * (static_cast<double>(i) + 0.15);
    const double top = yr.map(b.value, y0, y1);
    svg << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(slot * 0.7)
        << "\" height=\"" << num(y0 - top) << "\" fill=\"" << kPalette[i % kPalette.size()] << "\"/>\n";
    if (b.error > 0.0) {
      const double cx = left + slot * 0.35;
      svg << "<line x1=\"" << num(cx) << "\" y1=\"" << num(yr.map(b.value - b.error, y0, y1)) << "\" x2=\""
          << num(cx) << "\" y2=\"" << num(yr.map(b.value + b.error, y0, y1)) << "\" stroke=\"black\"/>\n";
    }
    svg << "<text x=\"" << num(left + slot * 0.35) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
        << escape(b.label) << "</text>\n";
  }
  svg << "</svg>\n";
  commit(path, svg.str());
}

PlotOutput emit_accuracy_plot(std::span<const std::filesystem::path> metrics_files,
                              const std::filesystem::path& out_dir) {
  PlotOutput out;
  std::vector<Curve> curves;
  for (const auto& file : metrics_files) {
    const auto reports = read_metrics_file(file);
    if (reports.empty()) {
      out.warnings.push_back("metrics file " + file.string() + " has no rows");
      continue;
    }
    Curve c;
    c.label = file.parent_path().filename().string();
    if (c.label.empty()) c.label = file.stem().string();
    for (const auto& r : reports) {
      c.x.push_back(r.round);
      c.y.push_back(r.target_accuracy);
    }
    curves.push_back(std::move(c));
  }
  if (curves.empty()) {
    out.warnings.push_back("no metrics to plot");
    return out;
  }
  const auto path = out_dir / "accuracy_vs_round.svg";
  write_line_chart(path, "Target accuracy", "round", "accuracy", curves);
  out.files.push_back(path);
  return out;
}

PlotOutput emit_table_plot(const std::filesystem::path& table_file, const std::filesystem::path& out_dir) {
  PlotOutput out;
  std::ifstream in(table_file);
  if (!in) throw Error("cannot read table " + table_file.string());
  std::string line;
  if (!std::getline(in, line)) {
    out.warnings.push_back("table " + table_file.string() + " is empty");
    return out;
  }
  if (line.rfind("label,mean,std", 0) != 0) {
    throw SchemaError("table " + table_file.string() + " must start with columns label,mean,std");
  }
  std::vector<Bar> bars;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string label, mean, sd;
    if (!std::getline(ss, label, ',') || !std::getline(ss, mean, ',') || !std::getline(ss, sd, ',')) {
      throw SchemaError("malformed table row '" + line + "'");
    }
    try {
      bars.push_back({label, std::stod(mean), std::stod(sd)});
    } catch (const std::exception&) {
      throw SchemaError("malformed table row '" + line + "'");
    }
  }
  if (bars.empty()) {
    out.warnings.push_back("table " + table_file.string() + " has no rows");
    return out;
  }
  const auto path = out_dir / (table_file.stem().string() + ".svg");
  write_bar_chart(path, table_file.stem().string(), "accuracy", bars);
  out.files.push_back(path);
  return out;
}

}  // namespace fdac
