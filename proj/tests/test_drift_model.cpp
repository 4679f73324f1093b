#include <cmath>

#include <gtest/gtest.h>

#include "driftcomp/drift_model.hpp"
#include "driftcomp/errors.hpp"

using namespace driftcomp;

namespace {

AnalyticDriftParams noiseless() {
  AnalyticDriftParams p;
  p.a_sigma = 0;
  p.b_sigma = 0;
  p.sigma_eps = 0;
  return p;
}

MeasuredDriftTable two_level() {
  MeasuredDriftTable t;
  t.reference_time = 3600;
  t.entries = {{10, 0.5, 0}, {20, 1.0, 0}};
  return t;
}

QuantizedTensor single_weight(std::int8_t code, double scale) {
  QuantizedTensor q;
  q.codes = {code};
  q.scales = {scale};
  q.shape = {1};
  return q;
}

}  // namespace

TEST(DriftMean, Anchors) {
  const AnalyticDriftParams p;
  EXPECT_EQ(drift_mean(1.0, p), 0.0);
  EXPECT_NEAR(drift_mean(std::exp(1.0), p), 0.089, 1e-15);
  EXPECT_NEAR(drift_mean(std::exp(10.0), p), 0.89, 1e-12);
}

TEST(DriftStd, Anchors) {
  const AnalyticDriftParams p;
  EXPECT_EQ(drift_std(1.0, p), 0.4118);
  EXPECT_NEAR(drift_std(std::exp(1.0), p), 0.4538, 1e-15);
  EXPECT_NEAR(drift_std(std::exp(10.0), p), 0.8318, 1e-12);
}

TEST(DriftMean, RejectsTimeBeforeOneSecond) {
  const AnalyticDriftParams p;
  EXPECT_THROW(drift_mean(0.5, p), DomainError);
  EXPECT_THROW(drift_std(0.999, p), DomainError);
}

TEST(DriftMean, StrictlyIncreasing) {
  const AnalyticDriftParams p;
  double prev_m = drift_mean(1.0, p), prev_s = drift_std(1.0, p);
  for (double t = 1.5; t < 1e9; t *= 1.5) {
    EXPECT_GT(drift_mean(t, p), prev_m);
    EXPECT_GT(drift_std(t, p), prev_s);
    prev_m = drift_mean(t, p);
    prev_s = drift_std(t, p);
  }
}

TEST(DriftParams, RejectNegative) {
  AnalyticDriftParams p;
  p.a_sigma = -0.1;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(SampleDrifted, DegenerateNoise) {
  Rng rng(1);
  EXPECT_NEAR(sample_drifted_conductance(10.0, std::exp(1.0), noiseless(), rng), 10.089, 1e-12);
  EXPECT_EQ(sample_drifted_conductance(0.0, 1.0, noiseless(), rng), 0.0);
}

TEST(SampleDrifted, MonteCarloMoments) {
  // Independent moments of (g + D)(1 + e), D ~ N(m, s^2), e ~ N(0, se^2):
  // mean = g + m, var = s^2 (1 + se^2) + (g + m)^2 se^2.
  const AnalyticDriftParams p;
  const double g = 20.0, t = std::exp(5.0);
  const double m = 0.089 * 5, s = 0.042 * 5 + 0.4118, se = 0.05;
  const double want_mean = g + m;
  const double want_sd = std::sqrt(s * s * (1 + se * se) + want_mean * want_mean * se * se);
  const int n = 100000;
  Rng rng(7);
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_drifted_conductance(g, t, p, rng);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sq - n * mean * mean) / (n - 1));
  EXPECT_NEAR(mean, 20.445, 4 * want_sd / std::sqrt(n));
  EXPECT_NEAR(sd, want_sd, 0.05 * want_sd);
  EXPECT_NEAR(sd / want_sd, 1.0, 4 / std::sqrt(n));
}

TEST(MeasuredDrift, MidpointInterpolation) {
  Rng rng(1);
  EXPECT_DOUBLE_EQ(sample_measured_drift(15.0, two_level(), rng), 15.75);
}

TEST(MeasuredDrift, ListedLevelIsExact) {
  Rng rng(1);
  EXPECT_EQ(sample_measured_drift(10.0, two_level(), rng), 10.5);
  EXPECT_EQ(sample_measured_drift(20.0, two_level(), rng), 21.0);
}

TEST(MeasuredDrift, ClampsOutsideRange) {
  Rng rng(1);
  EXPECT_EQ(sample_measured_drift(5.0, two_level(), rng), 5.5);
  EXPECT_EQ(sample_measured_drift(35.0, two_level(), rng), 36.0);
}

TEST(MeasuredDrift, RejectsShortOrUnsortedTables) {
  MeasuredDriftTable t;
  t.entries = {{10, 0.5, 0}};
  EXPECT_THROW(t.validate(), ConfigError);
  t.entries = {{10, 0.5, 0}, {10, 0.5, 0}};
  EXPECT_THROW(t.validate(), ConfigError);
  t.entries = {{10, 0.5, -1}, {20, 0.5, 0}};
  EXPECT_THROW(t.validate(), ConfigError);
  Rng rng(1);
  EXPECT_THROW(sample_measured_drift(10.0, MeasuredDriftTable{}, rng), ConfigError);
}

TEST(MeasuredDriftFile, ParsesAndRoundTrips) {
  const std::string text =
      "# reference_time_s=86400\n"
      "g_level_uS,mu_uS,sigma_uS\n"
      "5,0.1,0.2\n"
      "10,0.3,0.4\n";
  const auto t = parse_measured_drift_table(text);
  EXPECT_EQ(t.reference_time, 86400.0);
  ASSERT_EQ(t.entries.size(), 2u);
  EXPECT_EQ(t.entries[1].sigma, 0.4);
  const auto again = parse_measured_drift_table(format_measured_drift_table(t));
  EXPECT_EQ(again.entries[0].mu, 0.1);
}

TEST(MeasuredDriftFile, RejectsUnknownColumnsAndMissingReference) {
  EXPECT_THROW(parse_measured_drift_table("# reference_time_s=1\ng_level_uS,mu_uS,sigma_uS,extra\n1,2,3,4\n"),
               FormatError);
  EXPECT_THROW(parse_measured_drift_table("g_level_uS,mu_uS,sigma_uS\n1,0,0\n2,0,0\n"), FormatError);
  EXPECT_THROW(parse_measured_drift_table("# reference_time_s=1\ng_level_uS,mu_uS,sigma_uS\n1,0,0\n2,x,0\n"),
               FormatError);
}

TEST(ConductanceMap, AffineEndpoints) {
  const ConductanceMap map;
  EXPECT_EQ(weight_to_conductance(0.0, map).g_pos, 22.5);
  EXPECT_EQ(weight_to_conductance(1.0, map).g_pos, 40.0);
  EXPECT_EQ(weight_to_conductance(-1.0, map).g_pos, 5.0);
  EXPECT_EQ(conductance_to_weight({22.5, 0}, map), 0.0);
  EXPECT_NEAR(conductance_to_weight({41.75, 0}, map), 1.1, 1e-12);
}

TEST(ConductanceMap, DifferentialSymmetry) {
  ConductanceMap map;
  map.encoding = ConductanceEncoding::kDifferentialPair;
  const auto g = weight_to_conductance(0.0, map);
  EXPECT_EQ(g.g_pos, g.g_neg);
  const auto h = weight_to_conductance(0.5, map);
  EXPECT_GT(h.g_pos, h.g_neg);
  EXPECT_GE(h.g_neg, map.g_min);
  EXPECT_LE(h.g_pos, map.g_max);
}

TEST(ConductanceMap, RoundTripBothEncodings) {
  for (auto enc : {ConductanceEncoding::kSingleDeviceAffine, ConductanceEncoding::kDifferentialPair}) {
    ConductanceMap map;
    map.encoding = enc;
    map.w_absmax = 0.3;
    for (double w = -0.3; w <= 0.3; w += 0.01)
      EXPECT_NEAR(conductance_to_weight(weight_to_conductance(w, map), map), w, 1e-12 * std::max(1.0, std::fabs(w)));
  }
}

TEST(ConductanceMap, OutOfRangeWeight) {
  const ConductanceMap map;
  EXPECT_THROW(weight_to_conductance(1.1, map), RangeError);
}

TEST(InjectDrift, NoiseOffAtOneSecondIsIdentity) {
  QuantizedTensor q;
  q.codes = {-7, -3, 0, 2, 7};
  q.scales = {0.25};
  q.shape = {5};
  DriftModel model;
  model.source = noiseless();
  const std::vector<QuantizedTensor> bb{q};
  for (auto enc : {ConductanceEncoding::kSingleDeviceAffine, ConductanceEncoding::kDifferentialPair}) {
    ConductanceMap map;
    map.encoding = enc;
    const auto d = inject_drift(bb, 1.0, model, map, 3);
    const auto w = dequantize(q);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(d.values[0][i], w[i], 1e-15);
  }
}

TEST(InjectDrift, DeterministicUnderSeed) {
  QuantizedTensor q;
  q.codes = {-7, -3, 0, 2, 7, 1, 1, 1};
  q.scales = {0.1};
  q.shape = {8};
  const std::vector<QuantizedTensor> bb{q};
  const auto a = inject_drift(bb, 1e6, DriftModel{}, ConductanceMap{}, 42);
  const auto b = inject_drift(bb, 1e6, DriftModel{}, ConductanceMap{}, 42);
  const auto c = inject_drift(bb, 1e6, DriftModel{}, ConductanceMap{}, 43);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(InjectDrift, MeanShiftThroughAffineMap) {
  // w = 0 with w_absmax = 1: expected drifted weight 2 * 0.89 / 35.
  const std::vector<QuantizedTensor> bb{single_weight(0, 1.0 / 7)};
  const int n = 10000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double w = inject_drift(bb, std::exp(10.0), DriftModel{}, ConductanceMap{}, 1000 + i).values[0][0];
    sum += w;
    sq += w * w;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, 2 * 0.89 / 35, 3 * se);
}

TEST(InjectDrift, ClampsNegativeConductance) {
  AnalyticDriftParams p = noiseless();
  p.b_sigma = 50;  // huge spread forces negative samples
  DriftModel clamp, raw;
  clamp.source = raw.source = p;
  raw.clamp_negative = false;
  Rng a(5), b(5);
  double min_clamped = 1e9, min_raw = 1e9;
  for (int i = 0; i < 1000; ++i) {
    min_clamped = std::min(min_clamped, clamp.sample(5.0, 1.0, a));
    min_raw = std::min(min_raw, raw.sample(5.0, 1.0, b));
  }
  EXPECT_EQ(min_clamped, 0.0);
  EXPECT_LT(min_raw, 0.0);
}

TEST(InjectDrift, RejectsEarlyTime) {
  const std::vector<QuantizedTensor> bb{single_weight(1, 0.1)};
  EXPECT_THROW(inject_drift(bb, 0.5, DriftModel{}, ConductanceMap{}, 1), DomainError);
  DriftModel measured;
  measured.source = two_level();
  EXPECT_THROW(inject_drift(bb, 0.5, measured, ConductanceMap{}, 1), DomainError);
}

TEST(InjectDrift, MeasuredTableDrivesInjection) {
  // Zero-sigma table: every device shifts by the interpolated mu exactly.
  MeasuredDriftTable t;
  t.reference_time = 3600;
  t.entries = {{5, 1.0, 0}, {40, 1.0, 0}};
  DriftModel model;
  model.source = t;
  const std::vector<QuantizedTensor> bb{single_weight(0, 1.0 / 7)};
  const auto d = inject_drift(bb, t.reference_time, model, ConductanceMap{}, 9);
  EXPECT_NEAR(d.values[0][0], 2.0 / 35, 1e-15);
}
