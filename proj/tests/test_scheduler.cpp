#include <cmath>

#include <gtest/gtest.h>

#include "driftcomp/errors.hpp"
#include "driftcomp/evaluation.hpp"
#include "driftcomp/pretrain.hpp"
#include "driftcomp/scheduler.hpp"

using namespace driftcomp;

namespace {

const double kLn15 = std::log(1.5);

ScalingVectorSet stub_set(int id, double t, int rank = 1) {
  ScalingVectorSet s;
  s.set_id = id;
  s.drift_time = t;
  LayerScaling l;
  l.layer = 0;
  l.d_vec.assign(rank, 0.1);
  l.b_vec.assign(2, 0.0);
  s.layers.push_back(l);
  return s;
}

ScheduleHooks stub_hooks(std::function<double(double t, const ScalingVectorSet&)> mu) {
  ScheduleHooks h;
  h.evaluate = [mu](double t, const ScalingVectorSet& active) { return EvalStats{t, mu(t, active), 0.0, 100}; };
  h.train = [](double t, int id, int rank, const ScalingVectorSet&) { return stub_set(id, t, rank); };
  return h;
}

// Accuracy decays from the time the active set was trained.
ScheduleHooks resetting_stub() {
  return stub_hooks([](double t, const ScalingVectorSet& a) { return 1.0 - 0.05 * std::log(t / a.drift_time); });
}

SchedulerConfig stub_config(double a_thr) {
  SchedulerConfig c;
  c.a_thr = a_thr;
  return c;
}

int last_visited_step(double t_max) {
  int j = 0;
  while (std::pow(1.5, j + 1) < t_max) ++j;
  return j;
}

struct MlpTask {
  Backbone backbone;
  SharedProjections proj;
  LabeledDataset train;
  LabeledDataset eval;
};

const MlpTask& mlp_task() {
  static const MlpTask task = [] {
    MlpTask t;
    SyntheticConfig sc;
    sc.classes = 4;
    sc.n = 600;
    sc.shape = {1, 4, 4};
    sc.eval_fraction = 0.33;
    auto split = make_synthetic_dataset(sc);
    t.train = split.train;
    t.eval = split.eval;
    auto spec = build_mlp(16, 12, 4);
    spec.input = {1, 4, 4};
    PretrainConfig pc;
    pc.epochs = 15;
    pc.qat_epochs = 0;
    t.backbone = pretrain_backbone(spec, QuantScheme{}, t.train, pc);
    t.proj = init_shared_projections(spec, 2, 3);
    return t;
  }();
  return task;
}

}  // namespace

TEST(Summarize, TwoPoint) {
  const std::vector<double> acc{0.8, 0.9};
  const auto s = summarize(5.0, acc);
  EXPECT_DOUBLE_EQ(s.mu, 0.85);
  EXPECT_NEAR(s.sigma, 0.070710678118654752, 1e-15);
  EXPECT_EQ(s.n, 2);
  EXPECT_EQ(s.t, 5.0);
  const std::vector<double> one{0.5};
  EXPECT_THROW(summarize(1.0, one), ConfigError);
}

TEST(ShouldTrigger, Examples) {
  EXPECT_TRUE(should_trigger({1, 0.90, 0.01, 100}, 0.88, 3));
  EXPECT_FALSE(should_trigger({1, 0.88, 0.0, 100}, 0.88, 3));
  EXPECT_FALSE(should_trigger({1, 0.95, 0.01, 100}, 0.88, 3));
  EXPECT_TRUE(should_trigger({1, 0.95, 0.01, 100}, 0.88, 8));
}

TEST(VisitedTimes, Geometric) {
  const auto t = visited_times(1.5, kTenYearsSeconds);
  ASSERT_GE(t.size(), 4u);
  EXPECT_EQ(t[0], 1.0);
  EXPECT_EQ(t[1], 1.5);
  EXPECT_EQ(t[2], 2.25);
  EXPECT_EQ(t[3], 3.375);
  for (std::size_t j = 0; j < t.size(); ++j) EXPECT_EQ(t[j], std::pow(1.5, static_cast<int>(j)));
  EXPECT_LT(t.back(), kTenYearsSeconds);
  EXPECT_GE(t.back() * 1.5, kTenYearsSeconds);
  EXPECT_EQ(static_cast<int>(t.size()) - 1, last_visited_step(kTenYearsSeconds));
  EXPECT_EQ(kTenYearsSeconds, 3.1536e8);
  EXPECT_TRUE(visited_times(2.0, 1.0).empty());
  EXPECT_THROW(visited_times(1.0, 10.0), ConfigError);
}

TEST(SchedulerConfig, Validation) {
  SchedulerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.a_thr = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.multiplier = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.n_eval = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunSchedule, NeverTriggers) {
  const auto s = run_schedule(stub_config(0.5), stub_hooks([](double, const ScalingVectorSet&) { return 0.9; }),
                              stub_set(0, 1.0));
  ASSERT_EQ(s.entries.size(), 1u);
  EXPECT_EQ(s.entries[0].t, 1.0);
  EXPECT_EQ(s.entries[0].set_id, 0);
  EXPECT_EQ(s.visited.size(), visited_times(1.5, kTenYearsSeconds).size());
}

TEST(RunSchedule, PlainDecayClosedForm) {
  // mu = 1 - 0.05 ln t ignores compensation: every step past the crossing triggers.
  for (double a_thr = 0.50; a_thr < 0.96; a_thr += 0.05) {
    const double steps = (1 - a_thr) / 0.05 / kLn15;
    ASSERT_GT(std::fabs(steps - std::round(steps)), 1e-6);
    const int first = static_cast<int>(std::floor(steps)) + 1;
    std::vector<double> expected{1.0};
    for (int j = first; j <= last_visited_step(kTenYearsSeconds); ++j) expected.push_back(std::pow(1.5, j));
    const auto s = run_schedule(stub_config(a_thr),
                                stub_hooks([](double t, const ScalingVectorSet&) { return 1 - 0.05 * std::log(t); }),
                                stub_set(0, 1.0));
    EXPECT_EQ(s.drift_points(), expected) << "a_thr=" << a_thr;
  }
}

TEST(RunSchedule, ResettingDecayClosedForm) {
  for (double a_thr = 0.50; a_thr < 0.96; a_thr += 0.05) {
    const double steps = (1 - a_thr) / 0.05 / kLn15;
    ASSERT_GT(std::fabs(steps - std::round(steps)), 1e-6);
    const int gap = static_cast<int>(std::floor(steps)) + 1;
    std::vector<double> expected{1.0};
    for (int j = gap; j <= last_visited_step(kTenYearsSeconds); j += gap) expected.push_back(std::pow(1.5, j));
    const auto s = run_schedule(stub_config(a_thr), resetting_stub(), stub_set(0, 1.0));
    EXPECT_EQ(s.drift_points(), expected) << "a_thr=" << a_thr;
    for (std::size_t k = 0; k < s.entries.size(); ++k) {
      EXPECT_EQ(s.entries[k].set_id, static_cast<int>(k));
      EXPECT_EQ(s.sets[k].drift_time, s.entries[k].t);
    }
  }
}

TEST(RunSchedule, CountMonotoneInThreshold) {
  std::size_t prev = SIZE_MAX;
  for (int i = 0; i < 10; ++i) {
    const double a_thr = 0.95 - 0.05 * i;  // loosening
    const auto n = run_schedule(stub_config(a_thr), resetting_stub(), stub_set(0, 1.0)).entries.size();
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(RunSchedule, HandoffUsesNewSet) {
  std::vector<std::pair<double, int>> seen;
  auto hooks = resetting_stub();
  auto inner = hooks.evaluate;
  hooks.evaluate = [&](double t, const ScalingVectorSet& a) {
    seen.emplace_back(t, a.set_id);
    return inner(t, a);
  };
  const auto s = run_schedule(stub_config(0.9), hooks, stub_set(0, 1.0));
  ASSERT_GE(s.entries.size(), 2u);
  const double t1 = s.entries[1].t;
  for (std::size_t i = 0; i + 1 < seen.size(); ++i)
    if (seen[i].first == t1 && seen[i].second == 1) {
      // the post-training check at t1, then the next visited time with the new set
      EXPECT_EQ(seen[i + 1].second, 1);
      EXPECT_GT(seen[i + 1].first, t1);
      return;
    }
  FAIL() << "new set never evaluated";
}

TEST(RunSchedule, TriggerAtOneReplacesInitialSet) {
  int trained = 0;
  auto hooks = stub_hooks([](double, const ScalingVectorSet& a) { return a.layers[0].b_vec[0] > 0 ? 0.99 : 0.5; });
  hooks.train = [&](double t, int id, int rank, const ScalingVectorSet&) {
    ++trained;
    auto s = stub_set(id, t, rank);
    s.layers[0].b_vec[0] = 1.0;
    return s;
  };
  const auto s = run_schedule(stub_config(0.9), hooks, stub_set(0, 1.0));
  EXPECT_EQ(trained, 1);
  ASSERT_EQ(s.entries.size(), 1u);
  EXPECT_EQ(s.entries[0].t, 1.0);
  EXPECT_EQ(s.entries[0].before.mu, 0.5);
  EXPECT_EQ(s.entries[0].after.mu, 0.99);
  EXPECT_EQ(s.sets[0].layers[0].b_vec[0], 1.0);
}

TEST(RunSchedule, StrictModeRaisesRank) {
  auto hooks = stub_hooks([](double t, const ScalingVectorSet& a) {
    return t < 2 ? 0.99 : (a.rank() >= 3 ? 0.99 : 0.5);
  });
  hooks.max_rank = 4;
  auto cfg = stub_config(0.9);
  cfg.strict = true;
  const auto s = run_schedule(cfg, hooks, stub_set(0, 1.0));
  ASSERT_EQ(s.entries.size(), 2u);
  EXPECT_EQ(s.entries[1].t, 2.25);
  EXPECT_EQ(s.entries[1].rank, 3);
  cfg.strict = false;
  const auto relaxed = run_schedule(cfg, hooks, stub_set(0, 1.0));
  EXPECT_EQ(relaxed.entries[1].rank, 1);
  EXPECT_GT(relaxed.entries.size(), 2u);
}

TEST(RunSchedule, TrainingFailureNamesTime) {
  auto hooks = stub_hooks([](double, const ScalingVectorSet&) { return 0.1; });
  hooks.train = [](double, int, int, const ScalingVectorSet&) -> ScalingVectorSet { throw Error("boom"); };
  try {
    run_schedule(stub_config(0.9), hooks, stub_set(0, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("t=1"), std::string::npos) << e.what();
  }
}

TEST(SetsVsTolerance, MonotoneAndFullTolerance) {
  const std::vector<double> tol{1, 2.5, 5, 10, 20, 50, 100};
  const auto rows = sets_vs_tolerance(tol, 1.0, [](double a_thr) {
    return run_schedule(stub_config(a_thr), resetting_stub(), stub_set(0, 1.0));
  });
  ASSERT_EQ(rows.size(), tol.size());
  EXPECT_EQ(rows.back().num_sets, 1);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i].num_sets, rows[i - 1].num_sets);
  EXPECT_DOUBLE_EQ(rows[2].a_thr, 0.95);
  const auto csv = format_tolerance_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "tolerance_pct,a_thr,num_sets");
  const std::vector<double> empty;
  EXPECT_THROW(sets_vs_tolerance(empty, 1.0, {}), ConfigError);
}

TEST(EvalStats, NoiseOffIsDeterministic) {
  const auto& t = mlp_task();
  DriftSetup drift;
  drift.model.source = AnalyticDriftParams{0.089, 0.0, 0.0, 0.0};
  const auto s = eval_stats(3600.0, t.backbone, nullptr, t.proj, t.eval, 10, 1, drift);
  EXPECT_EQ(s.sigma, 0.0);
  const auto w = convert_weights<float>(t.backbone.with_drift(drift.sample(t.backbone, 3600.0, 99)));
  EXPECT_EQ(s.mu, evaluate_accuracy<float>(t.backbone.spec, w, nullptr, t.backbone.forward_options(), t.eval));
}

TEST(EvalStats, DoublingInstancesIsConsistent) {
  const auto& t = mlp_task();
  const DriftSetup drift;
  const auto a = eval_stats(1e6, t.backbone, nullptr, t.proj, t.eval, 100, 4, drift);
  const auto b = eval_stats(1e6, t.backbone, nullptr, t.proj, t.eval, 200, 4, drift);
  EXPECT_GT(a.sigma, 0.0);
  EXPECT_LE(std::fabs(b.mu - a.mu), 3 * a.sigma / std::sqrt(100.0));
}

TEST(EvalStats, ThreadsAndPairing) {
  const auto& t = mlp_task();
  const DriftSetup drift;
  const auto a = eval_accuracies(1e4, t.backbone, nullptr, t.proj, t.eval, 12, 7, drift, 1);
  const auto b = eval_accuracies(1e4, t.backbone, nullptr, t.proj, t.eval, 12, 7, drift, 3);
  EXPECT_EQ(a, b);
  const auto set = make_initial_set(t.backbone.spec, 1, 0, 1.0);
  const auto c = eval_accuracies(1e4, t.backbone, &set, t.proj, t.eval, 12, 7, drift, 2);
  EXPECT_EQ(a, c);  // zero b_vec compensation sees the same drift instances
  LabeledDataset empty = t.eval;
  empty.labels.clear();
  empty.pixels.clear();
  EXPECT_THROW(eval_stats(1.0, t.backbone, nullptr, t.proj, empty, 4, 1, drift), ConfigError);
}

TEST(RunSchedule, RealBackboneDeterministic) {
  const auto& t = mlp_task();
  SchedulerConfig cfg;
  cfg.a_thr = 0.6;
  cfg.n_eval = 6;
  cfg.t_max = 1e4;
  cfg.seed = 2;
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 5;
  const DriftSetup drift;
  const auto a = run_schedule(t.backbone, t.proj, t.train, t.eval, cfg, tc, drift, 1);
  const auto b = run_schedule(t.backbone, t.proj, t.train, t.eval, cfg, tc, drift, 1);
  ASSERT_EQ(a.drift_points(), b.drift_points());
  EXPECT_EQ(a.drift_points().front(), 1.0);
  for (std::size_t k = 1; k < a.entries.size(); ++k) EXPECT_GT(a.entries[k].t, a.entries[k - 1].t);
  for (std::size_t k = 0; k < a.sets.size(); ++k) EXPECT_EQ(a.sets[k].layers[0].b_vec, b.sets[k].layers[0].b_vec);
  EXPECT_THROW(run_schedule(t.backbone, t.proj, t.train, t.eval, cfg, tc, drift, 3), ConfigError);
}
