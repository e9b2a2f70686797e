#pragma once

// Intermediate parameter-estimation node: a router that forwards every
// measurement and parameter update downstream as soon as it arrives, and a
// compute worker that runs the greedy node optimisation once its data
// threshold is reached.
//
// Timing: in logical mode every decision is derived from message timestamps
// (sampling time of measurements, emission time of updates) plus a fixed
// per-hop latency, and a cost evaluation over K samples advances the node's
// clock by K * step_cost. Results then do not depend on thread scheduling or
// on the transport. In wall mode the same logic runs on the steady clock.

#include "pdual/experiment/config.hpp"
#include "pdual/param_estimator.hpp"
#include "pdual/pipeline/transport.hpp"
#include "pdual/pipeline/wire.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pdual {

class PipelineClock {
 public:
  explicit PipelineClock(TimingMode mode = TimingMode::Logical,
                         std::chrono::steady_clock::time_point origin = std::chrono::steady_clock::now())
      : mode_(mode), origin_(origin) {}

  bool logical() const { return mode_ == TimingMode::Logical; }
  double wall_now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
  }
  std::chrono::steady_clock::time_point origin() const { return origin_; }

 private:
  TimingMode mode_;
  std::chrono::steady_clock::time_point origin_;
};

struct NodeSettings {
  std::size_t index = 1;  // 1..L
  std::size_t total = 1;  // L
  std::size_t alpha = 20;
  std::size_t beta1 = 30;
  OptimizerConfig optimizer;
  double step_cost = 1e-4;
  double hop_latency = 0.0;

  bool is_last() const { return index == total; }
};

struct PassRecord {
  std::size_t K = 0;
  double start = 0.0;
  double finish = 0.0;
  ParameterVector theta_init;
  ParameterVector theta;
  TerminationReport report;
};

class ParameterNode {
 public:
  ParameterNode(NodeSettings settings, std::shared_ptr<const EstimationProblem> problem,
                PipelineClock clock)
      : s_(std::move(settings)), problem_(std::move(problem)), clock_(clock) {
    if (s_.index < 1 || s_.index > s_.total) throw std::invalid_argument("node index out of range");
  }

  /// Runs until the upstream Shutdown has been handled and forwarded.
  void run(Inbound& in, Outbound& out) {
    std::thread router([&] { route(in, out); });
    try {
      compute(out);
    } catch (const std::exception& e) {
      fail(std::string("node ") + std::to_string(s_.index) + ": " + e.what());
    }
    {
      std::unique_lock lock(m_);
      cv_.wait(lock, [&] { return shutdown_; });
    }
    router.join();
    try {
      out.send(ShutdownMsg{});
      out.close();
    } catch (const std::exception& e) {
      fail(std::string("node ") + std::to_string(s_.index) + ": " + e.what());
    }
  }

  const std::vector<PassRecord>& passes() const { return passes_; }
  const std::string& error() const { return error_; }
  std::size_t received_measurements() const { return data_.size(); }
  /// beta_l this node waited for; empty if no threshold ever reached it.
  std::optional<std::size_t> activation_threshold() const { return beta_; }
  const NodeSettings& settings() const { return s_; }

 private:
  bool logical() const { return clock_.logical(); }

  void fail(const std::string& what) {
    std::lock_guard lock(m_);
    if (error_.empty()) error_ = what;
  }

  void route(Inbound& in, Outbound& out) {
    try {
      while (auto msg = in.receive()) {
        if (std::holds_alternative<ShutdownMsg>(*msg)) {
          std::lock_guard lock(m_);
          shutdown_ = true;
          cv_.notify_all();
          return;
        }
        bool forward = true;
        {
          std::lock_guard lock(m_);
          if (auto* meas = std::get_if<MeasurementMsg>(&*msg)) {
            if (!data_.empty() && meas->k <= data_.back().k) {
              if (error_.empty()) {
                error_ = "protocol error at node " + std::to_string(s_.index) +
                         ": measurement index " + std::to_string(meas->k) + " after " +
                         std::to_string(data_.back().k);
              }
              forward = false;
            } else {
              arrival_.push_back(logical() ? meas->timestamp + s_.index * s_.hop_latency
                                           : clock_.wall_now());
              data_.push_back({meas->k, meas->timestamp, meas->y});
            }
          } else if (auto* upd = std::get_if<ParamUpdateMsg>(&*msg)) {
            const double hops = static_cast<double>(s_.index - std::min<std::size_t>(upd->source, s_.index));
            updates_.push_back({*upd, logical() ? upd->timestamp + hops * s_.hop_latency
                                                : clock_.wall_now()});
          } else if (auto* thr = std::get_if<ThresholdMsg>(&*msg)) {
            threshold_ = {static_cast<std::size_t>(thr->beta),
                          logical() ? thr->timestamp + s_.hop_latency : clock_.wall_now()};
            forward = false;
          }
        }
        cv_.notify_all();
        if (forward) out.send(*msg);
      }
      fail("node " + std::to_string(s_.index) + ": upstream link closed before shutdown");
    } catch (const std::exception& e) {
      fail(std::string("node ") + std::to_string(s_.index) + " router: " + e.what());
    }
    std::lock_guard lock(m_);
    shutdown_ = true;
    cv_.notify_all();
  }

  // Arrival time of the k-th measurement, or nullopt if the stream ended first.
  std::optional<double> wait_kth_arrival(std::size_t k) {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return data_.size() >= k || shutdown_; });
    if (data_.size() >= k) return arrival_[k - 1];
    return std::nullopt;
  }

  // Number of measurements available at time t.
  std::size_t count_at(double t) {
    std::unique_lock lock(m_);
    if (!logical()) return data_.size();
    cv_.wait(lock, [&] { return (!arrival_.empty() && arrival_.back() > t) || shutdown_; });
    return static_cast<std::size_t>(std::upper_bound(arrival_.begin(), arrival_.end(), t) -
                                    arrival_.begin());
  }

  // Most recent upstream estimate available at time t, preferring the given source.
  ParameterVector seed_theta(double t, std::optional<std::size_t> source) {
    std::lock_guard lock(m_);
    const Update* best = nullptr;
    for (const auto& u : updates_) {
      if (logical() && u.arrival > t) continue;
      if (source && u.msg.source != *source) continue;
      if (best == nullptr || u.arrival > best->arrival ||
          (u.arrival == best->arrival && u.msg.source >= best->msg.source)) {
        best = &u;
      }
    }
    return best != nullptr ? best->msg.theta : problem_->prior.theta0();
  }

  double now_or(double t) const { return logical() ? t : clock_.wall_now(); }

  PassRecord run_pass(std::size_t K, const ParameterVector& theta_init, double t_start,
                      bool final_node, Outbound& out) {
    MeasurementBatch prefix;
    {
      std::lock_guard lock(m_);
      prefix.assign(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(K));
    }
    NodeResult r = optimize_on_node(*problem_, theta_init, prefix, K, s_.optimizer, final_node);
    PassRecord pass;
    pass.K = K;
    pass.start = t_start;
    pass.finish = logical() ? t_start + static_cast<double>(r.report.work.filter_steps) * s_.step_cost
                            : clock_.wall_now();
    pass.theta_init = theta_init;
    pass.theta = r.theta;
    pass.report = r.report;
    out.send(ParamUpdateMsg{s_.index, K, pass.finish, pass.theta});
    if (!s_.is_last()) out.send(ThresholdMsg{K + s_.alpha, pass.finish});
    passes_.push_back(pass);
    return pass;
  }

  void compute(Outbound& out) {
    std::optional<std::pair<std::size_t, double>> threshold;
    if (s_.index == 1) {
      threshold = {s_.beta1, 0.0};
    } else {
      std::unique_lock lock(m_);
      cv_.wait(lock, [&] { return threshold_.has_value() || shutdown_; });
      threshold = threshold_;
    }
    if (threshold) beta_ = threshold->first;

    std::optional<double> t_start;
    if (threshold) {
      if (auto t_kth = wait_kth_arrival(threshold->first)) {
        t_start = logical() ? std::max(threshold->second, *t_kth) : clock_.wall_now();
      }
    }

    if (!s_.is_last()) {
      if (!t_start) return;  // threshold never reached: router only
      const std::size_t K = count_at(*t_start);
      const auto theta = seed_theta(*t_start, s_.index > 1 ? std::optional(s_.index - 1) : std::nullopt);
      run_pass(K, theta, *t_start, false, out);
      return;
    }

    // Last node: activated by its threshold or, failing that, by end of stream.
    if (!t_start) {
      std::unique_lock lock(m_);
      cv_.wait(lock, [&] { return shutdown_; });
      double t = threshold ? threshold->second : 0.0;
      if (!arrival_.empty()) t = std::max(t, arrival_.back());
      for (const auto& u : updates_) t = std::max(t, u.arrival);
      t_start = now_or(t);
    }
    std::size_t K = count_at(*t_start);
    if (K == 0) throw std::runtime_error("no measurements reached the final node");
    ParameterVector theta = seed_theta(*t_start, std::nullopt);
    for (;;) {
      const PassRecord pass = run_pass(K, theta, *t_start, true, out);
      theta = pass.theta;
      std::optional<double> t_next;
      {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return data_.size() > K || shutdown_; });
        if (data_.size() > K) t_next = logical() ? std::max(pass.finish, arrival_[K]) : clock_.wall_now();
      }
      if (!t_next) break;
      t_start = t_next;
      K = count_at(*t_start);
    }
  }

  struct Update {
    ParamUpdateMsg msg;
    double arrival;
  };

  NodeSettings s_;
  std::shared_ptr<const EstimationProblem> problem_;
  PipelineClock clock_;

  std::mutex m_;
  std::condition_variable cv_;
  MeasurementBatch data_;
  std::vector<double> arrival_;
  std::vector<Update> updates_;
  std::optional<std::pair<std::size_t, double>> threshold_;
  bool shutdown_ = false;
  std::string error_;

  std::vector<PassRecord> passes_;
  std::optional<std::size_t> beta_;
};

}  // namespace pdual
