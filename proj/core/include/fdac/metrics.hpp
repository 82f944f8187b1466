#pragma once

#include "fdac/federation.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fdac {

// CSV with header
//   round,l_da,l_sm,l_t,total_loss,target_accuracy,pseudo_coverage,cumulative_bytes
// Doubles are written with 17 significant digits so a reread is exact.
void write_metrics(std::ostream& out, std::span<const RoundReport> reports);
void write_metrics_file(const std::filesystem::path& path, std::span<const RoundReport> reports);

// Throws SchemaError when a required column is missing or a row is malformed.
std::vector<RoundReport> read_metrics(std::istream& in);
std::vector<RoundReport> read_metrics_file(const std::filesystem::path& path);

// Mean and sample standard deviation (n - 1); stddev is 0 for one value.
struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};
Summary summarize(std::span<const double> values);

std::string format_double(double v);

}  // namespace fdac
