#include "driftcomp/scheduler.hpp"

#include <cmath>
#include <cstdio>

#include "driftcomp/errors.hpp"
#include "driftcomp/evaluation.hpp"
#include "driftcomp/parallel.hpp"
#include "driftcomp/random.hpp"

namespace driftcomp {

void SchedulerConfig::validate() const {
  if (!(a_thr > 0 && a_thr < 1)) throw ConfigError("scheduler: a_thr must be in (0, 1)");
  if (!(multiplier > 1)) throw ConfigError("scheduler: multiplier must be > 1");
  if (!(t_max >= 1)) throw ConfigError("scheduler: t_max must be >= 1");
  if (n_eval < 2) throw ConfigError("scheduler: n_eval must be >= 2");
  if (!(confidence_k >= 0)) throw ConfigError("scheduler: confidence_k must be >= 0");
  if (threads < 1) throw ConfigError("scheduler: threads must be >= 1");
}

EvalStats summarize(double t, std::span<const double> acc) {
  if (acc.size() < 2) throw ConfigError("summarize: need at least two samples");
  // Welford: exact zero spread for constant samples.
  double mu = 0, ss = 0;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    const double delta = acc[k] - mu;
    mu += delta / static_cast<double>(k + 1);
    ss += delta * (acc[k] - mu);
  }
  return {t, mu, std::sqrt(ss / static_cast<double>(acc.size() - 1)), static_cast<int>(acc.size())};
}

bool should_trigger(const EvalStats& s, double a_thr, double k) { return s.mu - k * s.sigma < a_thr; }

std::uint64_t eval_drift_seed(std::uint64_t seed, double t, std::uint64_t i) {
  return derive_seed(seed, {tag(Stream::kEvalDrift), time_tag(t), i});
}

std::vector<double> eval_accuracies(double t, const Backbone& bb, const ScalingVectorSet* active,
                                    const SharedProjections& proj, const LabeledDataset& eval, int n_eval,
                                    std::uint64_t seed, const DriftSetup& drift, int threads) {
  if (eval.empty()) throw ConfigError("eval_stats: empty dataset");
  if (n_eval < 1) throw ConfigError("eval_stats: n_eval must be >= 1");
  CompensationPlan<float> plan;
  if (active) plan = make_plan<float>(bb.spec, proj, *active);
  std::vector<double> acc(n_eval);
  const auto opts = bb.forward_options();
  parallel_for(static_cast<std::size_t>(n_eval), threads, [&](std::size_t i) {
    const auto drifted = drift.sample(bb, t, eval_drift_seed(seed, t, i));
    const auto w = convert_weights<float>(bb.with_drift(drifted));
    acc[i] = evaluate_accuracy<float>(bb.spec, w, active ? &plan : nullptr, opts, eval, 1);
  });
  return acc;
}

EvalStats eval_stats(double t, const Backbone& bb, const ScalingVectorSet* active, const SharedProjections& proj,
                     const LabeledDataset& eval, int n_eval, std::uint64_t seed, const DriftSetup& drift,
                     int threads) {
  if (n_eval < 2) throw ConfigError("eval_stats: n_eval must be >= 2");
  const auto acc = eval_accuracies(t, bb, active, proj, eval, n_eval, seed, drift, threads);
  return summarize(t, acc);
}

std::vector<double> Schedule::drift_points() const {
  std::vector<double> out;
  for (const auto& e : entries) out.push_back(e.t);
  return out;
}

std::vector<double> visited_times(double multiplier, double t_max) {
  if (!(multiplier > 1)) throw ConfigError("multiplier must be > 1");
  std::vector<double> out;
  for (int j = 0;; ++j) {
    const double t = std::pow(multiplier, j);
    if (!(t < t_max)) break;
    out.push_back(t);
  }
  return out;
}

Schedule run_schedule(const SchedulerConfig& cfg, const ScheduleHooks& hooks, const ScalingVectorSet& initial) {
  cfg.validate();
  if (!hooks.evaluate || !hooks.train) throw ConfigError("run_schedule: missing hooks");
  Schedule s;
  s.config = cfg;
  ScalingVectorSet first = initial;
  first.drift_time = 1.0;
  s.entries.push_back({1.0, first.set_id, first.rank(), {}, {}});
  s.sets.push_back(first);
  for (double t : visited_times(cfg.multiplier, cfg.t_max)) {
    const EvalStats before = hooks.evaluate(t, s.sets.back());
    s.visited.push_back(before);
    if (t == 1.0) {
      s.entries.front().before = s.entries.front().after = before;
    }
    if (!should_trigger(before, cfg.a_thr, cfg.confidence_k)) continue;
    int rank = std::max(1, s.sets.back().rank());
    const int id = t == 1.0 ? s.entries.front().set_id : s.sets.back().set_id + 1;
    ScalingVectorSet set;
    EvalStats after;
    while (true) {
      try {
        set = hooks.train(t, id, rank, s.sets.back());
      } catch (const Error& e) {
        throw Error("training failed at t=" + std::to_string(t) + ": " + e.what());
      }
      set.drift_time = t;
      set.set_id = id;
      after = hooks.evaluate(t, set);
      if (!cfg.strict || !should_trigger(after, cfg.a_thr, cfg.confidence_k) || rank >= hooks.max_rank) break;
      ++rank;
    }
    if (t == 1.0) {
      // The initial set is replaced in place so drift points stay strictly increasing.
      s.sets.front() = set;
      s.entries.front() = {1.0, id, set.rank(), before, after};
    } else {
      s.sets.push_back(set);
      s.entries.push_back({t, id, set.rank(), before, after});
    }
  }
  return s;
}

Schedule run_schedule(const Backbone& backbone, const SharedProjections& proj, const LabeledDataset& train,
                      const LabeledDataset& eval, const SchedulerConfig& cfg, const TrainConfig& train_cfg,
                      const DriftSetup& drift, int rank, std::vector<TrainLogRow>* log) {
  if (rank < 1 || rank > proj.rank) throw ConfigError("run_schedule: rank must be in [1, projection rank]");
  ScheduleHooks hooks;
  hooks.max_rank = proj.rank;
  hooks.evaluate = [&](double t, const ScalingVectorSet& active) {
    return eval_stats(t, backbone, &active, proj, eval, cfg.n_eval, cfg.seed, drift, cfg.threads);
  };
  hooks.train = [&](double t, int id, int r, const ScalingVectorSet& prev) {
    ScalingVectorSet init;
    if (train_cfg.warm_start && prev.rank() == r) {
      init = prev;
      init.set_id = id;
    } else {
      init = make_initial_set(backbone.spec, r, id, t);
    }
    return train_set_at_time(t, backbone, proj, train, train_cfg, drift, init, log);
  };
  return run_schedule(cfg, hooks, make_initial_set(backbone.spec, rank, 0, 1.0));
}

std::vector<ToleranceRow> sets_vs_tolerance(std::span<const double> tolerance_pct, double reference,
                                            const std::function<Schedule(double)>& run) {
  if (tolerance_pct.empty()) throw ConfigError("sets_vs_tolerance: empty tolerance grid");
  std::vector<ToleranceRow> rows;
  for (double tol : tolerance_pct) {
    if (tol < 0 || tol > 100) throw ConfigError("sets_vs_tolerance: tolerance must be in [0, 100]");
    const double a_thr = (1.0 - tol / 100.0) * reference;
    int n = 1;
    // A floor of zero can never be undercut.
    if (a_thr > 0) n = static_cast<int>(run(a_thr).entries.size());
    rows.push_back({tol, a_thr, n});
  }
  return rows;
}

std::string format_tolerance_csv(std::span<const ToleranceRow> rows) {
  std::string out = "tolerance_pct,a_thr,num_sets\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", r.tolerance_pct, r.a_thr, r.num_sets);
    out += buf;
  }
  return out;
}

}  // namespace driftcomp
