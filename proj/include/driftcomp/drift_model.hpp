#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "driftcomp/quantizer.hpp"
#include "driftcomp/random.hpp"

namespace driftcomp {

// Log-time Gaussian conductance drift. Time is in seconds, conductances in
// microsiemens, logarithms are natural.
//   mean(t) = a_mu * ln t
//   std(t)  = a_sigma * ln t + b_sigma
//   g_real  = (g_target + N(mean, std^2)) * (1 + N(0, sigma_eps^2))
struct AnalyticDriftParams {
  double a_mu = 0.089;
  double a_sigma = 0.042;
  double b_sigma = 0.4118;
  double sigma_eps = 0.05;

  void validate() const;
};

struct MeasuredDriftEntry {
  double g_level;  // uS
  double mu;       // uS
  double sigma;    // uS
};

// State-dependent Gaussian drift measured at one reference time. Entries are
// strictly increasing in g_level.
struct MeasuredDriftTable {
  double reference_time = 0.0;
  std::vector<MeasuredDriftEntry> entries;

  void validate() const;
  // Linear interpolation of (mu, sigma) in g_level, clamped to the end entries.
  MeasuredDriftEntry interpolate(double g_target) const;
};

// CSV with header `g_level_uS,mu_uS,sigma_uS` and a `# reference_time_s=<x>`
// comment line.
MeasuredDriftTable parse_measured_drift_table(const std::string& text);
MeasuredDriftTable load_measured_drift_table(const std::string& path);
std::string format_measured_drift_table(const MeasuredDriftTable& table);

double drift_mean(double t, const AnalyticDriftParams& params);
double drift_std(double t, const AnalyticDriftParams& params);

double sample_drifted_conductance(double g_target, double t, const AnalyticDriftParams& params,
                                  Rng& rng);
double sample_measured_drift(double g_target, const MeasuredDriftTable& table, Rng& rng);

// Either drift source, plus the nonnegativity policy. The measured table is a
// snapshot at its reference time and is applied as-is for any t >= 1.
struct DriftModel {
  std::variant<AnalyticDriftParams, MeasuredDriftTable> source = AnalyticDriftParams{};
  bool clamp_negative = true;

  bool is_measured() const { return std::holds_alternative<MeasuredDriftTable>(source); }
  double sample(double g_target, double t, Rng& rng) const;
};

enum class ConductanceEncoding { kSingleDeviceAffine, kDifferentialPair };

struct ConductanceMap {
  double g_min = 5.0;
  double g_max = 40.0;
  ConductanceEncoding encoding = ConductanceEncoding::kSingleDeviceAffine;
  double w_absmax = 1.0;

  void validate() const;
};

// One programmed weight. g_neg is only meaningful for the differential pair.
struct Conductance {
  double g_pos = 0.0;
  double g_neg = 0.0;
};

Conductance weight_to_conductance(double w, const ConductanceMap& map);
double conductance_to_weight(Conductance g, const ConductanceMap& map);

// Tensor forms. The per-element w_absmax comes from the quantized tensor
// (max_code * scale of the element's unit); `map.w_absmax` is ignored.
std::vector<Conductance> weights_to_conductance(const QuantizedTensor& w, const ConductanceMap& map);
std::vector<double> conductance_to_weights(std::span<const Conductance> g, const QuantizedTensor& ref,
                                           const ConductanceMap& map);

struct DriftedWeights {
  std::vector<std::vector<double>> values;  // one dense tensor per weight layer
  double drift_time = 1.0;
  std::uint64_t seed = 0;
};

// dequantize -> conductance -> per-device drifted sample -> weights.
DriftedWeights inject_drift(std::span<const QuantizedTensor> backbone, double t,
                            const DriftModel& model, const ConductanceMap& map, std::uint64_t seed);

std::string to_string(ConductanceEncoding e);
ConductanceEncoding parse_encoding(const std::string& s);

}  // namespace driftcomp
