#pragma once

// Server end of the pipeline: one filter step per measurement with the most
// recent parameters. With no intermediate nodes the server also runs the
// full parameter optimisation on all data (the non-networked baseline).

#include "pdual/param_estimator.hpp"
#include "pdual/pipeline/node.hpp"
#include "pdual/pipeline/transport.hpp"
#include "pdual/state_filter.hpp"

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pdual {

struct ServerSettings {
  std::size_t nodes = 0;  // L
  OptimizerConfig optimizer;
  double step_cost = 1e-4;
  double hop_latency = 0.0;
};

/// A parameter estimate as seen by the server. Entry 0 of a timeline is the
/// prior (source 0, K 0, time 0).
struct ThetaEvent {
  double time = 0.0;
  std::size_t source = 0;
  std::size_t K = 0;
  ParameterVector theta;
};

struct ServerStep {
  std::size_t k = 0;
  std::size_t theta_index = 0;  // into ServerReport::thetas
  VecX xhat;
};

struct ServerReport {
  std::vector<ThetaEvent> thetas;
  std::vector<ServerStep> steps;
  std::size_t received = 0;
  double convergence_time = 0.0;  // arrival of the final estimate
  ParameterVector final_theta;
  std::optional<PassRecord> baseline;
  std::string error;
};

class Server {
 public:
  Server(ServerSettings settings, std::shared_ptr<const EstimationProblem> problem, PipelineClock clock)
      : s_(std::move(settings)), problem_(std::move(problem)), clock_(clock) {}

  ServerReport run(Inbound& in) {
    report_ = {};
    report_.thetas.push_back({0.0, 0, 0, problem_->prior.theta0()});
    belief_ = initial_belief(problem_->x0, problem_->P0, problem_->t0);
    const bool logical = clock_.logical();
    const double hops = static_cast<double>(s_.nodes + 1);

    // Logical mode buffers everything and replays by logical arrival once the
    // stream ends: physical interleaving of updates and forwarded samples
    // depends on scheduling, the logical one does not.
    std::vector<double> arrivals;
    std::vector<ThetaEvent> updates;
    try {
      bool clean = false;
      while (auto msg = in.receive()) {
        if (std::holds_alternative<ShutdownMsg>(*msg)) {
          clean = true;
          break;
        }
        if (auto* m = std::get_if<MeasurementMsg>(&*msg)) {
          if (!data_.empty() && m->k <= data_.back().k) {
            throw ProtocolError("server: measurement index " + std::to_string(m->k) + " after " +
                                std::to_string(data_.back().k));
          }
          data_.push_back({m->k, m->timestamp, m->y});
          arrivals.push_back(logical ? m->timestamp + hops * s_.hop_latency : clock_.wall_now());
          ++report_.received;
          if (!logical) step(data_.back());
        } else if (auto* u = std::get_if<ParamUpdateMsg>(&*msg)) {
          const double from = static_cast<double>(s_.nodes + 1 - std::min<std::size_t>(u->source, s_.nodes));
          ThetaEvent ev{logical ? u->timestamp + from * s_.hop_latency : clock_.wall_now(),
                        static_cast<std::size_t>(u->source), static_cast<std::size_t>(u->K), u->theta};
          if (logical) {
            updates.push_back(std::move(ev));
          } else {
            report_.thetas.push_back(std::move(ev));
          }
        }
      }
      if (!clean) throw TransportError("server: link closed before shutdown");
    } catch (const std::exception& e) {
      report_.error = e.what();
    }

    if (logical) {
      std::stable_sort(updates.begin(), updates.end(),
                       [](const ThetaEvent& a, const ThetaEvent& b) { return a.time < b.time; });
      std::size_t u = 0;
      for (std::size_t i = 0; i < data_.size(); ++i) {
        // a sample arriving together with an update is still filtered with the old theta
        while (u < updates.size() && updates[u].time < arrivals[i]) report_.thetas.push_back(updates[u++]);
        step(data_[i]);
      }
      while (u < updates.size()) report_.thetas.push_back(updates[u++]);
    }

    if (s_.nodes == 0 && !data_.empty() && report_.error.empty()) {
      try {
        const double t_start = logical ? arrivals.back() : clock_.wall_now();
        NodeResult r = optimize_on_node(*problem_, problem_->prior.theta0(), data_, data_.size(),
                                        s_.optimizer, true);
        PassRecord pass;
        pass.K = data_.size();
        pass.start = t_start;
        pass.finish = logical ? t_start + static_cast<double>(r.report.work.filter_steps) * s_.step_cost
                              : clock_.wall_now();
        pass.theta_init = problem_->prior.theta0();
        pass.theta = r.theta;
        pass.report = r.report;
        report_.thetas.push_back({pass.finish, 0, pass.K, pass.theta});
        report_.baseline = pass;
      } catch (const std::exception& e) {
        report_.error = std::string("server baseline: ") + e.what();
      }
    }

    const ThetaEvent& last = report_.thetas.back();
    report_.final_theta = last.theta;
    report_.convergence_time = last.time;
    return report_;
  }

  const MeasurementBatch& data() const { return data_; }

 private:
  void step(const MeasurementVector& m) {
    if (filter_failed_) return;
    try {
      const TransitionModel model =
          build_transition(problem_->chain.dof(), m.timestamp - belief_.time, problem_->filter.jerk_variance);
      auto [next, rec] = filter_step(belief_, m.y, report_.thetas.back().theta, problem_->chain, model,
                                     problem_->filter);
      next.time = m.timestamp;
      belief_ = std::move(next);
      report_.steps.push_back({m.k, report_.thetas.size() - 1, belief_.xhat});
    } catch (const FilterError& e) {
      filter_failed_ = true;
      if (report_.error.empty()) report_.error = std::string("server filter: ") + e.what();
    }
  }

  ServerSettings s_;
  std::shared_ptr<const EstimationProblem> problem_;
  PipelineClock clock_;
  MeasurementBatch data_;
  FilterBelief belief_;
  bool filter_failed_ = false;
  ServerReport report_;
};

}  // namespace pdual
