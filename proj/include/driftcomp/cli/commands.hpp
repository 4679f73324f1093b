#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "driftcomp/cli/config.hpp"

namespace driftcomp::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation or contract failure
inline constexpr int kExitBadInput = 2;  // bad configuration or file format

// Each command writes its artifacts under cfg.out_dir and a human-readable
// summary to `out`. Errors propagate as driftcomp exceptions.
int cmd_pretrain(const RunConfig& cfg, std::ostream& out);
int cmd_schedule(const RunConfig& cfg, std::ostream& out);
int cmd_sweep(const RunConfig& cfg, std::ostream& out);
int cmd_cost(const RunConfig& cfg, std::ostream& out);
int cmd_validate(const RunConfig& cfg, std::ostream& out);

// Maps an in-flight exception to an exit code and prints it to `err`.
int report_exception(std::ostream& err);

struct SweepRow {
  double t = 1.0;
  double mu = 0.0;
  double sigma = 0.0;
  double normalized = 0.0;
  int active_set_id = -1;
  bool compensated = false;
};

std::string sweep_csv_header();
std::string format_sweep_row(const SweepRow& r);

// Quantized drift-free accuracy on `eval` (t = 1 s, no noise), 32-bit path.
double drift_free_accuracy(const Backbone& backbone, const LabeledDataset& eval, int threads = 1);

struct ValidationCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// The fast invariant suite behind cmd_validate. Artifact files named by the
// config are checked when they exist.
std::vector<ValidationCheck> run_validation(const RunConfig& cfg);

}  // namespace driftcomp::cli
