#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "driftcomp/cli/commands.hpp"

using namespace driftcomp::cli;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out-dir", f.out_dir, "output directory");
}

RunConfig load(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.threads) cfg.threads = *f.threads;
  if (f.out_dir) cfg.out_dir = *f.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drift-resilient RRAM in-memory computing simulator"};
  app.set_version_flag("--version", DRIFTCOMP_VERSION);
  app.require_subcommand(1);

  CommonFlags flags;
  std::optional<int> epochs;
  std::optional<double> a_thr;
  std::vector<double> times;

  auto* pretrain = app.add_subcommand("pretrain", "train, quantize and checkpoint the backbone");
  add_common(pretrain, flags);
  pretrain->add_option("--epochs", epochs, "full-precision epochs (0 keeps the random init)");
  auto* schedule = app.add_subcommand("schedule", "run drift-aware scheduling and training");
  add_common(schedule, flags);
  schedule->add_option("--a-thr", a_thr, "absolute accuracy floor");
  auto* sweep = app.add_subcommand("sweep", "accuracy over a drift-time grid");
  add_common(sweep, flags);
  sweep->add_option("--times", times, "drift times in seconds");
  auto* cost = app.add_subcommand("cost", "parameter, storage, ops and energy report");
  add_common(cost, flags);
  auto* validate = app.add_subcommand("validate", "fast invariant suite");
  add_common(validate, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitBadInput;
  }

  try {
    RunConfig cfg = load(flags);
    if (pretrain->parsed()) {
      if (epochs) {
        cfg.pretrain.epochs = *epochs;
        if (*epochs == 0) cfg.pretrain.qat_epochs = 0;
      }
      return cmd_pretrain(cfg, std::cout);
    }
    if (schedule->parsed()) {
      if (a_thr) {
        cfg.schedule.scheduler.a_thr = *a_thr;
        cfg.schedule.a_thr_drop_points.reset();
      }
      return cmd_schedule(cfg, std::cout);
    }
    if (sweep->parsed()) {
      if (!times.empty()) cfg.sweep.times = times;
      return cmd_sweep(cfg, std::cout);
    }
    if (cost->parsed()) return cmd_cost(cfg, std::cout);
    return cmd_validate(cfg, std::cout);
  } catch (...) {
    return report_exception(std::cerr);
  }
}
