#include "blockdrop/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace blockdrop {

const char* kMetricsHeader =
    "run_id,phase,epoch,strategy,gamma,accuracy,blocks_mean,blocks_std,"
    "flops_mean,flops_std,seed";

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string metrics_line(const MetricsRow& r) {
  if (r.run_id.empty() || r.phase.empty() || r.strategy.empty())
    throw ValueError("metrics row has an empty field");
  std::string out = r.run_id;
  out += ',';
  out += r.phase;
  out += ',';
  out += std::to_string(r.epoch);
  out += ',';
  out += r.strategy;
  out += ',';
  out += format_fixed(r.gamma);
  out += ',';
  out += format_fixed(r.accuracy);
  out += ',';
  out += format_fixed(r.blocks_mean);
  out += ',';
  out += format_fixed(r.blocks_std);
  out += ',';
  out += format_fixed(r.flops_mean);
  out += ',';
  out += format_fixed(r.flops_std);
  out += ',';
  out += std::to_string(r.seed);
  return out;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << kMetricsHeader << '\n';
    for (const MetricsRow& r : rows) out << metrics_line(r) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void append_metrics_csv(const std::string& path,
                        const std::vector<MetricsRow>& rows) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot write " + path);
  if (fresh) out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) out << metrics_line(r) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty metrics file: " + path);
  if (line != kMetricsHeader)
    throw IoError("unexpected metrics header in " + path + ": " + line);
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f[11];
    for (int i = 0; i < 11; ++i) {
      if (!std::getline(ss, f[i], ','))
        throw IoError(path + ":" + std::to_string(lineno) +
                      ": expected 11 fields");
    }
    MetricsRow r;
    r.run_id = f[0];
    r.phase = f[1];
    r.epoch = std::stoi(f[2]);
    r.strategy = f[3];
    r.gamma = std::stod(f[4]);
    r.accuracy = std::stod(f[5]);
    r.blocks_mean = std::stod(f[6]);
    r.blocks_std = std::stod(f[7]);
    r.flops_mean = std::stod(f[8]);
    r.flops_std = std::stod(f[9]);
    r.seed = std::stoull(f[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace blockdrop
