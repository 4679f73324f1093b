#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "driftcomp/cli/commands.hpp"
#include "driftcomp/errors.hpp"
#include "driftcomp/gradcheck.hpp"
#include "driftcomp/serialization.hpp"

namespace driftcomp::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ValidationCheck drift_anchors() {
  const AnalyticDriftParams p;
  const double m1 = drift_mean(1.0, p), s1 = drift_std(1.0, p), m10 = drift_mean(std::exp(10.0), p);
  const bool ok = m1 == 0.0 && s1 == 0.4118 && std::fabs(m10 - 0.89) <= 1e-12;
  return {"drift anchors", ok, "mean(1)=" + num(m1) + " std(1)=" + num(s1) + " mean(e^10)=" + num(m10)};
}

ValidationCheck drift_statistics(std::uint64_t seed) {
  AnalyticDriftParams p;
  p.sigma_eps = 0.0;
  const double t = std::exp(5.0), g = 20.0;
  const int n = 100000;
  Rng rng(derive_seed(seed, {tag(Stream::kValidation), 1}));
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double d = sample_drifted_conductance(g, t, p, rng) - g;
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sq - n * mean * mean) / (n - 1));
  const double want_sd = drift_std(t, p);
  const bool ok = std::fabs(mean - 0.445) <= 0.01 && std::fabs(sd - want_sd) <= 0.02 * want_sd;
  return {"drift statistics (N=1e5)", ok, "mean drift " + num(mean) + " uS, std " + num(sd) + " uS (want " + num(want_sd) + ")"};
}

ValidationCheck gradients(std::uint64_t seed) {
  const auto r = gradient_check(derive_seed(seed, {tag(Stream::kValidation), 2}), 20);
  return {"scaling-vector gradients", r.max_rel_error < 1e-5,
          "max rel error " + num(r.max_rel_error) + " over " + std::to_string(r.entries) + " entries"};
}

ValidationCheck quantizer_grid() {
  for (int bits = 2; bits <= 8; ++bits) {
    QuantScheme s;
    s.weight_bits = bits;
    const int m = max_code(bits);
    std::vector<double> w;
    for (int c = -m; c <= m; ++c) w.push_back(c * 0.37);
    const std::vector<std::size_t> shape{w.size()};
    const std::vector<double> scale{0.37};
    const auto q = quantize(w, shape, scale, s);
    const auto back = quantize(dequantize(q), shape, scale, s);
    if (back.codes != q.codes) return {"quantizer grid idempotence", false, std::to_string(bits) + "-bit grid moved"};
  }
  return {"quantizer grid idempotence", true, "2..8 bits"};
}

ValidationCheck conductance_round_trip(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {tag(Stream::kValidation), 3}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0;
  for (auto enc : {ConductanceEncoding::kSingleDeviceAffine, ConductanceEncoding::kDifferentialPair}) {
    ConductanceMap map;
    map.encoding = enc;
    for (int i = 0; i < 1000; ++i) {
      const double w = u(rng);
      worst = std::max(worst, std::fabs(conductance_to_weight(weight_to_conductance(w, map), map) - w));
    }
  }
  return {"conductance round trip", worst <= 1e-12, "max error " + num(worst)};
}

ValidationCheck hand_instance() {
  const std::vector<double> a{1, 2}, b{3, 4}, x{1, 1}, d{2}, bv{1, -1};
  const ProjectionSlice slice{{a.data(), 1, 2, 2}, {b.data(), 2, 1, 1}};
  const auto y = vera_plus_forward(x, slice, d, bv);
  return {"compensation hand instance", y == std::vector<double>{18, -24}, "[" + num(y[0]) + ", " + num(y[1]) + "]"};
}

ValidationCheck container_round_trips(std::uint64_t seed) {
  const auto spec = build_mlp(4, 5, 3);
  NetworkWeights<double> w(2);
  Rng rng(derive_seed(seed, {tag(Stream::kValidation), 4}));
  std::normal_distribution<double> n(0.0, 0.5);
  const auto wl = spec.weight_layers();
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const auto& l = spec.layers[wl[k]];
    w[k].weight.resize(static_cast<std::size_t>(l.c_in) * l.c_out);
    w[k].bias.resize(l.c_out);
    for (auto& v : w[k].weight) v = n(rng);
    for (auto& v : w[k].bias) v = n(rng);
  }
  const auto bb = quantize_backbone(spec, w, QuantScheme{});
  const auto bytes = encode_backbone(bb);
  if (encode_backbone(decode_backbone(bytes)) != bytes) return {"container round trips", false, "checkpoint changed"};
  CompensationArchive ar{init_shared_projections(spec, 2, seed), {make_initial_set(spec, 2, 0, 1.0)}};
  const auto abytes = encode_archive(ar);
  if (encode_archive(decode_archive(abytes)) != abytes) return {"container round trips", false, "archive changed"};
  return {"container round trips", true, "checkpoint and archive"};
}

template <typename Fn>
ValidationCheck file_check(const std::string& what, const std::string& path, Fn&& load) {
  if (!fs::exists(path)) return {what + " file", true, path + ": not present, skipped"};
  try {
    load(path);
    return {what + " file", true, path};
  } catch (const std::exception& e) {
    return {what + " file", false, std::string("failing file ") + path + ": " + e.what()};
  }
}

}  // namespace

std::vector<ValidationCheck> run_validation(const RunConfig& cfg) {
  std::vector<ValidationCheck> checks;
  checks.push_back(drift_anchors());
  checks.push_back(drift_statistics(cfg.seed));
  checks.push_back(gradients(cfg.seed));
  checks.push_back(quantizer_grid());
  checks.push_back(conductance_round_trip(cfg.seed));
  checks.push_back(hand_instance());
  checks.push_back(container_round_trips(cfg.seed));
  checks.push_back(file_check("backbone checkpoint", cfg.backbone_path(), [](const std::string& p) { load_backbone(p); }));
  checks.push_back(file_check("compensation archive", cfg.archive_path(), [](const std::string& p) { load_archive(p); }));
  if (cfg.drift.model != "analytic")
    checks.push_back(file_check("measured drift table", cfg.input_path(cfg.drift.model.substr(9)),
                                [](const std::string& p) { load_measured_drift_table(p); }));
  return checks;
}

int cmd_validate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto checks = run_validation(cfg);
  bool all = true;
  for (const auto& c : checks) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-30s %-5s ", c.name.c_str(), c.passed ? "PASS" : "FAIL");
    out << buf << c.detail << "\n";
    all = all && c.passed;
  }
  out << (all ? "all checks passed\n" : "validation FAILED\n");
  return all ? kExitOk : kExitFailure;
}

}  // namespace driftcomp::cli
