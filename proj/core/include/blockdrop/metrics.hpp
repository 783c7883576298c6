#pragma once

#include <string>
#include <vector>

#include "blockdrop/common.hpp"

namespace blockdrop {

// One reporting row; every table in the project shares this schema so
// phases and strategies can be concatenated and diffed.
struct MetricsRow {
  std::string run_id;
  std::string phase;
  int epoch = 0;
  std::string strategy;
  double gamma = 0.0;
  double accuracy = 0.0;
  double blocks_mean = 0.0;
  double blocks_std = 0.0;
  double flops_mean = 0.0;
  double flops_std = 0.0;
  uint64_t seed = 0;
};

extern const char* kMetricsHeader;  // run_id,phase,epoch,...

// Fixed decimal notation, 6 places, never scientific.
std::string format_fixed(double v);

std::string metrics_line(const MetricsRow& row);

// Writes header + rows atomically (temp file, then rename).
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);

// Appends rows to an existing CSV, creating it with a header first.
void append_metrics_csv(const std::string& path,
                        const std::vector<MetricsRow>& rows);

std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace blockdrop
