#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "driftcomp/training.hpp"

namespace driftcomp {

inline constexpr double kTenYearsSeconds = 10.0 * 365 * 24 * 3600;

struct SchedulerConfig {
  double a_thr = 0.8;  // absolute accuracy floor
  double t_max = kTenYearsSeconds;
  double multiplier = 1.5;
  int n_eval = 100;
  double confidence_k = 3.0;
  // Retrain with a larger rank prefix while the new set still violates the
  // bound (up to the projection rank).
  bool strict = false;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct EvalStats {
  double t = 1.0;
  double mu = 0.0;
  double sigma = 0.0;
  int n = 0;
};

// Sample mean and unbiased standard deviation.
EvalStats summarize(double t, std::span<const double> accuracies);

bool should_trigger(const EvalStats& stats, double a_thr, double confidence_k);

// Seed of drift instance i at time t. Compensated and uncompensated
// evaluations with the same base seed see the same drift instances.
std::uint64_t eval_drift_seed(std::uint64_t seed, double t, std::uint64_t i);

// Accuracy over `n_eval` drift instances on `eval` (32-bit forward).
std::vector<double> eval_accuracies(double t, const Backbone& backbone, const ScalingVectorSet* active,
                                    const SharedProjections& proj, const LabeledDataset& eval, int n_eval,
                                    std::uint64_t seed, const DriftSetup& drift, int threads = 1);

EvalStats eval_stats(double t, const Backbone& backbone, const ScalingVectorSet* active,
                     const SharedProjections& proj, const LabeledDataset& eval, int n_eval, std::uint64_t seed,
                     const DriftSetup& drift, int threads = 1);

struct ScheduleEntry {
  double t = 1.0;
  int set_id = 0;
  int rank = 0;
  EvalStats before;
  EvalStats after;
};

struct Schedule {
  SchedulerConfig config;
  std::vector<ScheduleEntry> entries;  // drift points, t strictly increasing, first t = 1
  std::vector<ScalingVectorSet> sets;  // parallel to entries
  std::vector<EvalStats> visited;      // stats at every visited time

  std::vector<double> drift_points() const;
};

// Pluggable evaluation and training so the loop can run against stubs.
struct ScheduleHooks {
  std::function<EvalStats(double t, const ScalingVectorSet& active)> evaluate;
  // Returns a set for time t with the given id and rank. `previous` is the
  // currently active set.
  std::function<ScalingVectorSet(double t, int set_id, int rank, const ScalingVectorSet& previous)> train;
  int max_rank = 1;
};

// Visits t = 1, m, m^2, ... while t < t_max. At each visited time evaluates
// with the active set; when mu - k sigma < a_thr a new set is trained at t
// and becomes active. `initial` is attached to t = 1.
Schedule run_schedule(const SchedulerConfig& cfg, const ScheduleHooks& hooks, const ScalingVectorSet& initial);

Schedule run_schedule(const Backbone& backbone, const SharedProjections& proj, const LabeledDataset& train,
                      const LabeledDataset& eval, const SchedulerConfig& cfg, const TrainConfig& train_cfg,
                      const DriftSetup& drift, int rank, std::vector<TrainLogRow>* log = nullptr);

// Visited times: multiplier^j for j = 0, 1, ... while below t_max.
std::vector<double> visited_times(double multiplier, double t_max);

struct ToleranceRow {
  double tolerance_pct = 0.0;
  double a_thr = 0.0;
  int num_sets = 0;
};

// a_thr = (1 - tolerance/100) * reference; `run` maps a_thr to a schedule.
std::vector<ToleranceRow> sets_vs_tolerance(std::span<const double> tolerance_pct, double reference,
                                            const std::function<Schedule(double a_thr)>& run);

std::string format_tolerance_csv(std::span<const ToleranceRow> rows);

}  // namespace driftcomp
