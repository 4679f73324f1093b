#include "driftcomp/drift_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "driftcomp/errors.hpp"

namespace driftcomp {

void AnalyticDriftParams::validate() const {
  if (a_mu < 0 || a_sigma < 0 || b_sigma < 0 || sigma_eps < 0)
    throw ConfigError("analytic drift parameters must be nonnegative");
}

void MeasuredDriftTable::validate() const {
  if (entries.size() < 2) throw ConfigError("measured drift table needs at least 2 entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!(entries[i].sigma >= 0)) throw ConfigError("measured drift table: sigma must be >= 0");
    if (i > 0 && !(entries[i].g_level > entries[i - 1].g_level))
      throw ConfigError("measured drift table: g_level must be strictly increasing");
  }
}

MeasuredDriftEntry MeasuredDriftTable::interpolate(double g_target) const {
  validate();
  if (g_target <= entries.front().g_level) return {g_target, entries.front().mu, entries.front().sigma};
  if (g_target >= entries.back().g_level) return {g_target, entries.back().mu, entries.back().sigma};
  auto hi = std::upper_bound(entries.begin(), entries.end(), g_target,
                             [](double g, const MeasuredDriftEntry& e) { return g < e.g_level; });
  auto lo = hi - 1;
  if (lo->g_level == g_target) return {g_target, lo->mu, lo->sigma};
  const double f = (g_target - lo->g_level) / (hi->g_level - lo->g_level);
  return {g_target, lo->mu + f * (hi->mu - lo->mu), lo->sigma + f * (hi->sigma - lo->sigma)};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, long long offset) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("measured drift table: not a number: '" + s + "'", offset);
  }
  if (used != s.size()) throw FormatError("measured drift table: trailing characters in '" + s + "'", offset);
  return v;
}

}  // namespace

MeasuredDriftTable parse_measured_drift_table(const std::string& text) {
  MeasuredDriftTable table;
  bool have_header = false;
  bool have_ref = false;
  std::istringstream in(text);
  std::string raw;
  long long offset = 0;
  while (std::getline(in, raw)) {
    const long long line_offset = offset;
    offset += static_cast<long long>(raw.size()) + 1;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const std::string key = "reference_time_s=";
      if (body.rfind(key, 0) == 0) {
        table.reference_time = parse_double(trim(body.substr(key.size())), line_offset);
        have_ref = true;
      }
      continue;
    }
    if (!have_header) {
      if (line != "g_level_uS,mu_uS,sigma_uS")
        throw FormatError("measured drift table: expected header 'g_level_uS,mu_uS,sigma_uS', got '" +
                              line + "'",
                          line_offset);
      have_header = true;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(trim(c));
    if (cols.size() != 3) throw FormatError("measured drift table: expected 3 columns", line_offset);
    table.entries.push_back({parse_double(cols[0], line_offset), parse_double(cols[1], line_offset),
                             parse_double(cols[2], line_offset)});
  }
  if (!have_header) throw FormatError("measured drift table: missing header");
  if (!have_ref) throw FormatError("measured drift table: missing '# reference_time_s=' line");
  if (!(table.reference_time >= 1.0)) throw ConfigError("measured drift table: reference_time_s must be >= 1");
  table.validate();
  return table;
}

MeasuredDriftTable load_measured_drift_table(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open measured drift table: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_measured_drift_table(ss.str());
}

std::string format_measured_drift_table(const MeasuredDriftTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "# reference_time_s=" << table.reference_time << "\n";
  out << "g_level_uS,mu_uS,sigma_uS\n";
  for (const auto& e : table.entries) out << e.g_level << "," << e.mu << "," << e.sigma << "\n";
  return out.str();
}

namespace {
void require_time(double t) {
  if (!(t >= 1.0)) throw DomainError("drift time must be >= 1 s (got " + std::to_string(t) + ")");
}
}  // namespace

double drift_mean(double t, const AnalyticDriftParams& params) {
  require_time(t);
  return params.a_mu * std::log(t);
}

double drift_std(double t, const AnalyticDriftParams& params) {
  require_time(t);
  return params.a_sigma * std::log(t) + params.b_sigma;
}

double sample_drifted_conductance(double g_target, double t, const AnalyticDriftParams& params,
                                  Rng& rng) {
  if (g_target < 0) throw DomainError("target conductance must be >= 0");
  std::normal_distribution<double> unit(0.0, 1.0);
  const double g_drift = drift_mean(t, params) + drift_std(t, params) * unit(rng);
  const double eps = params.sigma_eps * unit(rng);
  return (g_target + g_drift) * (1.0 + eps);
}

double sample_measured_drift(double g_target, const MeasuredDriftTable& table, Rng& rng) {
  const auto p = table.interpolate(g_target);
  std::normal_distribution<double> unit(0.0, 1.0);
  return g_target + p.mu + p.sigma * unit(rng);
}

double DriftModel::sample(double g_target, double t, Rng& rng) const {
  double g = 0;
  if (const auto* a = std::get_if<AnalyticDriftParams>(&source)) {
    g = sample_drifted_conductance(g_target, t, *a, rng);
  } else {
    require_time(t);
    g = sample_measured_drift(g_target, std::get<MeasuredDriftTable>(source), rng);
  }
  return clamp_negative ? std::max(g, 0.0) : g;
}

void ConductanceMap::validate() const {
  if (!(g_min < g_max)) throw ConfigError("conductance map requires g_min < g_max");
  if (!(g_min >= 0)) throw ConfigError("conductance map requires g_min >= 0");
  if (!(w_absmax > 0)) throw ConfigError("conductance map requires w_absmax > 0");
}

Conductance weight_to_conductance(double w, const ConductanceMap& map) {
  // A small relative slack absorbs the rounding of codes * scale at the grid ends.
  if (std::abs(w) > map.w_absmax * (1 + 1e-12))
    throw RangeError("weight " + std::to_string(w) + " outside [-w_absmax, +w_absmax]");
  const double span = map.g_max - map.g_min;
  if (map.encoding == ConductanceEncoding::kSingleDeviceAffine)
    return {map.g_min + (w + map.w_absmax) / (2 * map.w_absmax) * span, 0.0};
  const double pos = std::max(w, 0.0) / map.w_absmax * span;
  const double neg = std::max(-w, 0.0) / map.w_absmax * span;
  return {map.g_min + pos, map.g_min + neg};
}

double conductance_to_weight(Conductance g, const ConductanceMap& map) {
  const double span = map.g_max - map.g_min;
  if (map.encoding == ConductanceEncoding::kSingleDeviceAffine)
    return (g.g_pos - map.g_min) / span * (2 * map.w_absmax) - map.w_absmax;
  return (g.g_pos - g.g_neg) / span * map.w_absmax;
}

std::vector<Conductance> weights_to_conductance(const QuantizedTensor& w, const ConductanceMap& map) {
  const auto deq = dequantize(w);
  std::vector<Conductance> g(deq.size());
  ConductanceMap m = map;
  for (std::size_t i = 0; i < deq.size(); ++i) {
    m.w_absmax = w.absmax_of(i);
    g[i] = weight_to_conductance(deq[i], m);
  }
  return g;
}

std::vector<double> conductance_to_weights(std::span<const Conductance> g, const QuantizedTensor& ref,
                                           const ConductanceMap& map) {
  if (g.size() != ref.size()) throw ContractError("conductance_to_weights: size mismatch");
  std::vector<double> w(g.size());
  ConductanceMap m = map;
  for (std::size_t i = 0; i < g.size(); ++i) {
    m.w_absmax = ref.absmax_of(i);
    w[i] = conductance_to_weight(g[i], m);
  }
  return w;
}

DriftedWeights inject_drift(std::span<const QuantizedTensor> backbone, double t,
                            const DriftModel& model, const ConductanceMap& map, std::uint64_t seed) {
  require_time(t);
  if (!(map.g_min < map.g_max)) throw ConfigError("conductance map requires g_min < g_max");
  DriftedWeights out;
  out.drift_time = t;
  out.seed = seed;
  out.values.reserve(backbone.size());
  Rng rng(seed);
  const bool differential = map.encoding == ConductanceEncoding::kDifferentialPair;
  for (const auto& layer : backbone) {
    auto g = weights_to_conductance(layer, map);
    for (auto& c : g) {
      c.g_pos = model.sample(c.g_pos, t, rng);
      if (differential) c.g_neg = model.sample(c.g_neg, t, rng);
    }
    out.values.push_back(conductance_to_weights(g, layer, map));
  }
  return out;
}

std::string to_string(ConductanceEncoding e) {
  return e == ConductanceEncoding::kSingleDeviceAffine ? "single-device-affine" : "differential-pair";
}

ConductanceEncoding parse_encoding(const std::string& s) {
  if (s == "single-device-affine") return ConductanceEncoding::kSingleDeviceAffine;
  if (s == "differential-pair") return ConductanceEncoding::kDifferentialPair;
  throw ConfigError("unknown conductance encoding: " + s);
}

}  // namespace driftcomp
