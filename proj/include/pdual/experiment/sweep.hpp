#pragma once

// L-range x trials experiment loop and its summary statistics.

#include "pdual/experiment/config.hpp"
#include "pdual/experiment/dataset.hpp"
#include "pdual/pipeline/topology.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace pdual {

struct MetricsRow {
  std::size_t L = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double T = 0.0;        // convergence time
  double e = 0.0;        // ||theta*_L - theta_true||
  double final_S = 0.0;  // cost of the final estimate on all data
  std::size_t total_work = 0;
  std::vector<std::size_t> node_iters;  // per node; the server's baseline for L = 0
  std::vector<std::pair<double, double>> e_theta;  // (time, ||theta - theta*_L||)
  std::string error;

  bool operator==(const MetricsRow&) const = default;
};

inline MetricsRow make_row(const ExperimentTrace& trace, const EstimationProblem& problem,
                           const MeasurementBatch& data, const ParameterVector& truth,
                           std::size_t trial, std::uint64_t seed) {
  MetricsRow row;
  row.L = trace.nodes;
  row.trial = trial;
  row.seed = seed;
  row.T = trace.convergence_time();
  row.e = (trace.final_theta() - truth).norm();
  row.total_work = trace.total_work();
  if (trace.nodes == 0) {
    row.node_iters.push_back(trace.server.baseline ? trace.server.baseline->report.iterations : 0);
  }
  for (const auto& n : trace.node_traces) {
    std::size_t it = 0;
    for (const auto& p : n.passes) it += p.report.iterations;
    row.node_iters.push_back(it);
  }
  for (const auto& ev : trace.server.thetas) {
    row.e_theta.emplace_back(ev.time, (ev.theta - trace.final_theta()).norm());
  }
  for (const auto& err : trace.errors) row.error += (row.error.empty() ? "" : " | ") + err;
  try {
    row.final_S = cost_S(problem, trace.final_theta(), data, data.size());
  } catch (const std::exception& ex) {
    row.final_S = std::nan("");
    row.error += (row.error.empty() ? "" : " | ") + std::string("final cost: ") + ex.what();
  }
  return row;
}

/// Rows ordered by (L, trial). Every L sees the same dataset for a given trial.
/// jobs > 1 runs trials concurrently; in wall timing that perturbs T.
inline std::vector<MetricsRow> run_sweep(const ExperimentConfig& config, std::size_t jobs = 1,
                                         const std::function<void(const MetricsRow&)>& progress = {}) {
  config.validate();
  auto problem = std::make_shared<const EstimationProblem>(make_problem(config));
  const ParameterVector truth = theta_true(config);
  const std::size_t levels = config.nodes_max - config.nodes_min + 1;
  std::vector<MetricsRow> rows(levels * config.trials);

  std::vector<MeasurementBatch> datasets(config.trials);
  for (std::size_t t = 0; t < config.trials; ++t) {
    datasets[t] = synthesize_dataset(config, trial_seed(config.seed, t));
  }

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      const std::size_t L = config.nodes_min + i / config.trials;
      const std::size_t t = i % config.trials;
      const std::uint64_t seed = trial_seed(config.seed, t);
      try {
        const ExperimentTrace trace = run_topology(make_topology(config, L), problem, datasets[t]);
        rows[i] = make_row(trace, *problem, datasets[t], truth, t, seed);
      } catch (const std::exception& e) {
        rows[i] = MetricsRow{};
        rows[i].L = L;
        rows[i].trial = t;
        rows[i].seed = seed;
        rows[i].T = std::nan("");
        rows[i].e = std::nan("");
        rows[i].final_S = std::nan("");
        rows[i].error = e.what();
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(rows[i]);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < std::max<std::size_t>(jobs, 1); ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return rows;
}

// ------------------------------------------------------------------- stats

/// Linear interpolation between order statistics (p in [0, 1]).
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Average ranks, ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson on average ranks).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nan("");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

struct LevelSummary {
  std::size_t L = 0;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double T_mean = 0.0, T_p25 = 0.0, T_p50 = 0.0, T_p75 = 0.0;
  double e_mean = 0.0;
  double e_ci95 = 0.0;  // half-width, normal approximation
  double work_mean = 0.0;
};

struct SweepSummary {
  std::vector<LevelSummary> levels;
  double spearman_T_vs_L = 0.0;
};

/// Failed rows are counted but excluded from the statistics.
inline SweepSummary summarize(const std::vector<MetricsRow>& rows) {
  std::map<std::size_t, std::vector<const MetricsRow*>> by_level;
  for (const auto& r : rows) by_level[r.L].push_back(&r);
  SweepSummary s;
  std::vector<double> ls, ts;
  for (const auto& [L, group] : by_level) {
    LevelSummary lv;
    lv.L = L;
    std::vector<double> T, e, w;
    for (const auto* r : group) {
      ++lv.trials;
      if (!r->error.empty()) {
        ++lv.failures;
        continue;
      }
      T.push_back(r->T);
      e.push_back(r->e);
      w.push_back(static_cast<double>(r->total_work));
    }
    lv.T_mean = mean(T);
    lv.T_p25 = percentile(T, 0.25);
    lv.T_p50 = percentile(T, 0.50);
    lv.T_p75 = percentile(T, 0.75);
    lv.e_mean = mean(e);
    lv.e_ci95 = e.empty() ? std::nan("") : 1.96 * sample_sd(e) / std::sqrt(static_cast<double>(e.size()));
    lv.work_mean = mean(w);
    s.levels.push_back(lv);
    if (!T.empty()) {
      ls.push_back(static_cast<double>(L));
      ts.push_back(lv.T_mean);
    }
  }
  s.spearman_T_vs_L = spearman(ls, ts);
  return s;
}

inline const LevelSummary* find_level(const SweepSummary& s, std::size_t L) {
  for (const auto& lv : s.levels) {
    if (lv.L == L) return &lv;
  }
  return nullptr;
}

}  // namespace pdual
