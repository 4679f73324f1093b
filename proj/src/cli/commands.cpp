#include "driftcomp/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include <json.hpp>

#include "driftcomp/errors.hpp"
#include "driftcomp/evaluation.hpp"
#include "driftcomp/serialization.hpp"

namespace driftcomp::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json provenance(const RunConfig& cfg, const std::string& command) {
  ordered_json p;
  p["tool"] = "driftcomp";
  p["version"] = DRIFTCOMP_VERSION;
  p["command"] = command;
  p["seed"] = cfg.seed;
  p["config"] = ordered_json::parse(config_echo(cfg));
  return p;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void prepare_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
}

Backbone load_checkpoint(const RunConfig& cfg) {
  const auto path = cfg.backbone_path();
  if (!fs::is_regular_file(path)) throw ConfigError("backbone checkpoint '" + path + "' not found; run pretrain first");
  return load_backbone(path);
}

DatasetSplit load_data_for(const RunConfig& cfg, const ModelSpec& spec) {
  auto d = resolve_datasets(cfg);
  if (!(d.train.shape == spec.input) || d.train.classes != spec.classes)
    throw ConfigError("dataset shape or class count does not match the model");
  return d;
}

ordered_json stats_json(const EvalStats& s) { return {{"t", s.t}, {"mu", s.mu}, {"sigma", s.sigma}, {"n", s.n}}; }

}  // namespace

double drift_free_accuracy(const Backbone& bb, const LabeledDataset& eval, int threads) {
  const auto w = convert_weights<float>(bb.dequantized());
  return evaluate_accuracy<float>(bb.spec, w, nullptr, bb.forward_options(), eval, threads);
}

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  prepare_out_dir(cfg);
  const auto spec = resolve_model(cfg);
  const auto data = load_data_for(cfg, spec);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.seed;
  pc.threads = cfg.threads;
  PretrainReport report;
  const Backbone bb = pretrain_backbone(spec, cfg.quant, data.train, pc, &report);
  const double a0 = drift_free_accuracy(bb, data.eval, cfg.threads);

  auto prov = provenance(cfg, "pretrain");
  prov["drift_free_accuracy"] = a0;
  prov["eval_samples"] = data.eval.size();
  prov["epoch_loss"] = report.epoch_loss;
  save_backbone(cfg.backbone_path(), bb, prov.dump());
  prov["checkpoint"] = cfg.paths.backbone;
  write_text_file(cfg.out_path("pretrain.json"), prov.dump(2) + "\n");

  out << "checkpoint: " << cfg.backbone_path() << "\n";
  out << "drift-free accuracy: " << fmt("%.6f", a0) << " (" << data.eval.size() << " eval samples)\n";
  if (a0 < cfg.pretrain_min_accuracy) {
    out << "pretraining did not converge: accuracy " << fmt("%.6f", a0) << " below floor "
        << fmt("%.6f", cfg.pretrain_min_accuracy) << "\nepoch losses:";
    for (double l : report.epoch_loss) out << " " << fmt("%.6f", l);
    out << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_schedule(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  if (cfg.compensation.variant != CompensationVariant::kVeraPlus)
    throw ConfigError("schedule: only the vera_plus variant can be trained");
  prepare_out_dir(cfg);
  const Backbone bb = load_checkpoint(cfg);
  const auto data = load_data_for(cfg, bb.spec);
  const auto drift = resolve_drift(cfg);
  const double a0 = drift_free_accuracy(bb, data.eval, cfg.threads);

  SchedulerConfig sc = cfg.schedule.scheduler;
  if (cfg.schedule.a_thr_drop_points) sc.a_thr = a0 - *cfg.schedule.a_thr_drop_points / 100.0;
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  sc.validate();
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.threads = cfg.threads;
  const auto proj = init_shared_projections(bb.spec, cfg.compensation.max_rank, cfg.seed);

  std::vector<TrainLogRow> log;
  const Schedule schedule =
      run_schedule(bb, proj, data.train, data.eval, sc, tc, drift, cfg.compensation.rank, &log);
  save_archive(cfg.archive_path(), {proj, schedule.sets});

  auto prov = provenance(cfg, "schedule");
  ordered_json doc = prov;
  doc["drift_free_accuracy"] = a0;
  doc["a_thr"] = sc.a_thr;
  doc["backbone"] = cfg.paths.backbone;
  doc["archive"] = cfg.paths.archive;
  doc["entries"] = ordered_json::array();
  for (const auto& e : schedule.entries)
    doc["entries"].push_back(
        {{"t", e.t}, {"set_id", e.set_id}, {"rank", e.rank}, {"before", stats_json(e.before)}, {"after", stats_json(e.after)}});
  doc["visited"] = ordered_json::array();
  for (const auto& v : schedule.visited) doc["visited"].push_back(stats_json(v));
  write_text_file(cfg.out_path("schedule.json"), doc.dump(2) + "\n");

  std::string csv = train_log_header() + "\n";
  for (const auto& r : log) csv += format_train_log_row(r) + "\n";
  write_text_file(cfg.out_path("train_log.csv"), csv);
  write_text_file(cfg.out_path("train_log.json"), prov.dump(2) + "\n");

  if (!cfg.schedule.tolerances_pct.empty()) {
    const auto rows = sets_vs_tolerance(cfg.schedule.tolerances_pct, a0, [&](double a_thr) {
      SchedulerConfig s = sc;
      s.a_thr = a_thr;
      return run_schedule(bb, proj, data.train, data.eval, s, tc, drift, cfg.compensation.rank);
    });
    write_text_file(cfg.out_path("tolerance.csv"), format_tolerance_csv(rows));
    out << "sets vs tolerance:\n" << format_tolerance_csv(rows);
  }

  out << "drift-free accuracy " << fmt("%.4f", a0) << ", a_thr " << fmt("%.4f", sc.a_thr) << "\n";
  out << "drift points (" << schedule.entries.size() << "):";
  for (double t : schedule.drift_points()) out << " " << fmt("%.6g", t);
  out << "\n";
  out << "         t_s  set  rank  mu_before  sigma_before  mu_after  sigma_after\n";
  for (const auto& e : schedule.entries) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%12.6g %4d %5d %10.4f %13.4f %9.4f %12.4f\n", e.t, e.set_id, e.rank, e.before.mu,
                  e.before.sigma, e.after.mu, e.after.sigma);
    out << buf;
  }
  out << "archive: " << cfg.archive_path() << "\n";
  return kExitOk;
}

std::string sweep_csv_header() { return "t_seconds,mu_acc,sigma_acc,normalized_acc,active_set_id,compensated"; }

std::string format_sweep_row(const SweepRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d,%d", r.t, r.mu, r.sigma, r.normalized, r.active_set_id,
                r.compensated ? 1 : 0);
  return buf;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  prepare_out_dir(cfg);
  const Backbone bb = load_checkpoint(cfg);
  const auto data = load_data_for(cfg, bb.spec);
  const auto drift = resolve_drift(cfg);
  const double a0 = drift_free_accuracy(bb, data.eval, cfg.threads);

  const bool use_archive =
      cfg.compensation.variant != CompensationVariant::kNone && fs::is_regular_file(cfg.archive_path());
  CompensationArchive archive;
  if (use_archive) {
    archive = load_archive(cfg.archive_path());
    if (archive.sets.empty()) throw FormatError(cfg.archive_path() + ": archive holds no sets");
    for (const auto& s : archive.sets) check_set_matches(bb.spec, archive.projections, s);
  } else {
    archive.projections = init_shared_projections(bb.spec, 1, cfg.seed);
  }
  std::vector<double> times = cfg.sweep.times;
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  const int n_eval = cfg.schedule.scheduler.n_eval;
  std::vector<SweepRow> rows;
  for (double t : times) {
    const auto u = eval_stats(t, bb, nullptr, archive.projections, data.eval, n_eval, cfg.seed, drift, cfg.threads);
    rows.push_back({t, u.mu, u.sigma, normalized_accuracy(u.mu, a0), -1, false});
    if (!use_archive) continue;
    const int id = select_active_set(t, archive.sets);
    const auto it = std::find_if(archive.sets.begin(), archive.sets.end(),
                                 [id](const ScalingVectorSet& s) { return s.set_id == id; });
    const auto c = eval_stats(t, bb, &*it, archive.projections, data.eval, n_eval, cfg.seed, drift, cfg.threads);
    rows.push_back({t, c.mu, c.sigma, normalized_accuracy(c.mu, a0), id, true});
  }

  std::string csv = sweep_csv_header() + "\n";
  std::string dat_u = "# t_seconds mu_acc (uncompensated)\n", dat_c = "# t_seconds mu_acc (compensated)\n";
  for (const auto& r : rows) {
    csv += format_sweep_row(r) + "\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", r.t, r.mu);
    (r.compensated ? dat_c : dat_u) += buf;
  }
  write_text_file(cfg.out_path("sweep.csv"), csv);
  write_text_file(cfg.out_path("sweep_uncompensated.dat"), dat_u);
  if (use_archive) write_text_file(cfg.out_path("sweep_compensated.dat"), dat_c);
  std::string gp =
      "# gnuplot -persist plot_sweep.gp\n"
      "set logscale x\n"
      "set xlabel 'elapsed time (s)'\n"
      "set ylabel 'top-1 accuracy'\n"
      "set key bottom left\n"
      "plot 'sweep_uncompensated.dat' using 1:2 with linespoints title 'uncompensated'";
  if (use_archive) gp += ", \\\n     'sweep_compensated.dat' using 1:2 with linespoints title 'compensated'";
  write_text_file(cfg.out_path("plot_sweep.gp"), gp + "\n");
  auto prov = provenance(cfg, "sweep");
  prov["drift_free_accuracy"] = a0;
  prov["backbone"] = cfg.paths.backbone;
  prov["archive"] = use_archive ? ordered_json(cfg.paths.archive) : ordered_json(nullptr);
  write_text_file(cfg.out_path("sweep.json"), prov.dump(2) + "\n");

  out << "drift-free accuracy " << fmt("%.4f", a0) << "\n";
  out << "         t_s  comp  set      mu   sigma  normalized\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%12.6g %5s %4d %7.4f %7.4f %11.4f\n", r.t, r.compensated ? "yes" : "no",
                  r.active_set_id, r.mu, r.sigma, r.normalized);
    out << buf;
  }
  return kExitOk;
}

int cmd_cost(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  prepare_out_dir(cfg);
  const auto spec = resolve_model(cfg);
  std::vector<CostReport> reports;
  for (int n : cfg.cost.num_sets)
    for (int r : cfg.cost.ranks)
      for (auto v : cfg.cost.variants) reports.push_back(cost_report(spec, v, r, n, cfg.cost.bits, cfg.hardware));

  std::string csv = cost_csv_header() + "\n";
  std::string params = "variant,r,num_sets,params,params_overhead_pct,ops,ops_overhead_pct\n";
  auto prov = provenance(cfg, "cost");
  prov["conventions"] = {
      {"ops", "2 ops per MAC; 1 op per Hadamard element; backbone ops on RRAM, compensation ops on SRAM"},
      {"energy", "E = ops_rram / (tops_per_w_rram * 1e12) + ops_sram / (tops_per_w_sram * 1e12)"},
      {"params_overhead", "compensation parameters / backbone conv and linear weights"},
      {"storage", "(shared elements + num_sets * per-set elements) * bits / 8"},
      {"movement", "(shared elements + one set) * bits / 8"},
      {"kb", 1024},
      {"area", "approximate: storage bits / (density_sram * 1e6)"},
      {"lora", "per set sum r K^2 (C_in + C_out)"},
      {"vera", "shared r K^2 (C_in + C_out) per distinct layer shape; per set sum (r K + C_out K)"},
      {"vera_plus", "shared r (d_max_in + d_max_out); per set sum (r + C_out)"}};
  prov["backbone_weights"] = spec.weight_count();
  prov["rows"] = ordered_json::array();
  for (const auto& r : reports) {
    csv += format_cost_row(r) + "\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%llu,%.17g,%llu,%.17g\n", to_string(r.variant).c_str(), r.rank, r.num_sets,
                  static_cast<unsigned long long>(r.params_comp), r.params_overhead_pct,
                  static_cast<unsigned long long>(r.ops_sram), r.ops_overhead_pct);
    params += buf;
    prov["rows"].push_back({{"variant", to_string(r.variant)},
                            {"r", r.rank},
                            {"num_sets", r.num_sets},
                            {"bits_comp", r.bits_comp},
                            {"ops_rram", r.ops_rram},
                            {"ops_sram", r.ops_sram},
                            {"energy_j", r.energy_j},
                            {"params_backbone", r.params_backbone},
                            {"params_comp", r.params_comp},
                            {"params_overhead_pct", r.params_overhead_pct},
                            {"ops_overhead_pct", r.ops_overhead_pct},
                            {"energy_overhead_pct", r.energy_overhead_pct},
                            {"storage_comp_bytes", r.storage_comp_bytes},
                            {"weight_movement_bytes", r.weight_movement_bytes},
                            {"area_mm2", r.area_mm2}});
  }
  write_text_file(cfg.out_path("cost.csv"), csv);
  write_text_file(cfg.out_path("params.csv"), params);
  write_text_file(cfg.out_path("cost.json"), prov.dump(2) + "\n");

  out << "backbone weights: " << spec.weight_count() << ", compensation storage at " << cfg.cost.bits << " bits\n";
  out << "variant     r  sets      params  params%    ops%  storage_kb  movement_kb  energy_j\n";
  for (const auto& r : reports) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-9s %3d %5d %11llu %8.1f %7.1f %11.2f %12.2f %9.4g\n", to_string(r.variant).c_str(),
                  r.rank, r.num_sets, static_cast<unsigned long long>(r.params_comp), r.params_overhead_pct,
                  r.ops_overhead_pct, r.storage_comp_bytes / kBytesPerKB, r.weight_movement_bytes / kBytesPerKB,
                  r.energy_j);
    out << buf;
  }
  return kExitOk;
}

}  // namespace driftcomp::cli
