#include "fdac/metrics.hpp"

#include "fdac/error.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fdac {

namespace {

constexpr std::array<const char*, 8> kColumns = {
    "round",           "l_da", "l_sm", "l_t", "total_loss", "target_accuracy",
    "pseudo_coverage", "cumulative_bytes"};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("metrics line " + std::to_string(line_no) + ": '" + s + "' is not a number");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics(std::ostream& out, std::span<const RoundReport> reports) {
  for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
  out << '\n';
  for (const auto& r : reports) {
    out << r.round << ',' << format_double(r.l_da) << ',' << format_double(r.l_sm) << ','
        << format_double(r.l_t) << ',' << format_double(r.total_loss) << ','
        << format_double(r.target_accuracy) << ',' << format_double(r.pseudo_coverage) << ','
        << r.cumulative_bytes << '\n';
  }
}

void write_metrics_file(const std::filesystem::path& path, std::span<const RoundReport> reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write metrics file " + path.string());
  write_metrics(out, reports);
}

std::vector<RoundReport> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  std::map<std::string, std::size_t> column;
  const auto header = split(line);
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* name : kColumns) {
    if (!column.contains(name)) throw SchemaError(std::string("metrics file is missing column '") + name + "'");
  }
  std::vector<RoundReport> reports;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw SchemaError("metrics line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(header.size()));
    }
    auto at = [&](const char* name) { return parse_double(cells[column[name]], line_no); };
    RoundReport r;
    r.round = static_cast<int>(at("round"));
    r.l_da = at("l_da");
    r.l_sm = at("l_sm");
    r.l_t = at("l_t");
    r.total_loss = at("total_loss");
    r.target_accuracy = at("target_accuracy");
    r.pseudo_coverage = at("pseudo_coverage");
    r.cumulative_bytes = static_cast<std::uint64_t>(at("cumulative_bytes"));
    reports.push_back(r);
  }
  return reports;
}

std::vector<RoundReport> read_metrics_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read metrics file " + path.string());
  return read_metrics(in);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace fdac
