#pragma once

// Results persistence. CSV columns:
//
//   L,trial,seed,T,e,final_S,total_work,node_iters,e_theta,error
//
// node_iters is ';'-separated, e_theta is ';'-separated "time:value" pairs.
// Reals are printed with 17 significant digits so parse(emit(rows)) == rows.

#include "pdual/experiment/config.hpp"
#include "pdual/experiment/sweep.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdual {

inline constexpr const char* kCsvHeader = "L,trial,seed,T,e,final_S,total_work,node_iters,e_theta,error";

namespace detail {

inline std::string real(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

inline double parse_real(const std::string& s) {
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return d;
}

inline std::uint64_t parse_uint(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("bad integer '" + s + "'");
  }
  return std::stoull(s);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (s.back() == sep) out.emplace_back();
  return out;
}

// Keeps free text inside one CSV field.
inline std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace detail

inline std::string format_row(const MetricsRow& r) {
  std::string out = std::to_string(r.L) + "," + std::to_string(r.trial) + "," + std::to_string(r.seed) +
                    "," + detail::real(r.T) + "," + detail::real(r.e) + "," + detail::real(r.final_S) +
                    "," + std::to_string(r.total_work) + ",";
  for (std::size_t i = 0; i < r.node_iters.size(); ++i) {
    out += (i ? ";" : "") + std::to_string(r.node_iters[i]);
  }
  out += ",";
  for (std::size_t i = 0; i < r.e_theta.size(); ++i) {
    out += (i ? ";" : "") + detail::real(r.e_theta[i].first) + ":" + detail::real(r.e_theta[i].second);
  }
  out += "," + detail::sanitize(r.error);
  return out;
}

inline MetricsRow parse_row(const std::string& line) {
  const auto f = detail::split(line, ',');
  if (f.size() != 10) throw std::invalid_argument("CSV row must have 10 fields");
  MetricsRow r;
  r.L = detail::parse_uint(f[0]);
  r.trial = detail::parse_uint(f[1]);
  r.seed = detail::parse_uint(f[2]);
  r.T = detail::parse_real(f[3]);
  r.e = detail::parse_real(f[4]);
  r.final_S = detail::parse_real(f[5]);
  r.total_work = detail::parse_uint(f[6]);
  for (const auto& s : detail::split(f[7], ';')) r.node_iters.push_back(detail::parse_uint(s));
  for (const auto& s : detail::split(f[8], ';')) {
    const auto p = s.find(':');
    if (p == std::string::npos) throw std::invalid_argument("bad e_theta entry '" + s + "'");
    r.e_theta.emplace_back(detail::parse_real(s.substr(0, p)), detail::parse_real(s.substr(p + 1)));
  }
  r.error = f[9];
  return r;
}

inline std::string format_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) out += format_row(r) + "\n";
  return out;
}

inline std::vector<MetricsRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::invalid_argument("missing CSV header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_row(line));
  }
  return rows;
}

inline nlohmann::ordered_json summary_json(const SweepSummary& s) {
  nlohmann::ordered_json j;
  j["levels"] = nlohmann::ordered_json::array();
  for (const auto& lv : s.levels) {
    j["levels"].push_back({{"L", lv.L},
                           {"trials", lv.trials},
                           {"failures", lv.failures},
                           {"T_mean", lv.T_mean},
                           {"T_p25", lv.T_p25},
                           {"T_p50", lv.T_p50},
                           {"T_p75", lv.T_p75},
                           {"e_mean", lv.e_mean},
                           {"e_ci95", lv.e_ci95},
                           {"work_mean", lv.work_mean}});
  }
  j["spearman_T_vs_L"] = s.spearman_T_vs_L;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

/// Writes metrics.csv, summary.json and config.json into `dir`.
inline void emit_results(const std::vector<MetricsRow>& rows, const ExperimentConfig& config,
                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "metrics.csv", format_csv(rows));
  write_text(dir / "summary.json", summary_json(summarize(rows)).dump(2) + "\n");
  write_text(dir / "config.json", config_echo(config).dump(2) + "\n");
}

}  // namespace pdual
