#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "driftcomp/compensation.hpp"
#include "driftcomp/cost_model.hpp"
#include "driftcomp/dataset.hpp"
#include "driftcomp/pretrain.hpp"
#include "driftcomp/scheduler.hpp"

namespace driftcomp::cli {

// Artifact paths. Relative paths are taken relative to the output directory.
struct PathsConfig {
  std::string backbone = "backbone.dcbk";
  std::string archive = "compensation.dcca";
};

// "toy_resnet" | "resnet20" | "mlp" | "manifest"
struct ModelConfig {
  std::string kind = "toy_resnet";
  int width = 8;
  int blocks = 1;
  int classes = 10;
  Shape input{3, 16, 16};
  int hidden = 32;       // mlp only
  std::string manifest;  // relative to the config file
};

// "synthetic" | "binary"
struct DatasetConfig {
  std::string kind = "synthetic";
  SyntheticConfig synthetic;
  std::string train;  // binary files, relative to the config file
  std::string eval;
  std::string meta;
  std::size_t eval_limit = 0;  // 0: whole eval split
};

struct DriftConfig {
  std::string model = "analytic";  // or "measured:<path>"
  AnalyticDriftParams analytic;
  bool clamp_negative = true;
  ConductanceMap map;
};

struct ScheduleConfig {
  SchedulerConfig scheduler;
  // When set, a_thr = drift-free accuracy - a_thr_drop_points / 100.
  std::optional<double> a_thr_drop_points;
  std::vector<double> tolerances_pct;  // optional sets-vs-tolerance sweep
};

struct SweepConfig {
  std::vector<double> times{1.0, 3600.0, 86400.0, 2.6298e6, 3.1536e7, 3.1536e8};
};

struct CostConfig {
  std::vector<CompensationVariant> variants{CompensationVariant::kLora, CompensationVariant::kVera,
                                            CompensationVariant::kVeraPlus};
  std::vector<int> ranks{1};
  std::vector<int> num_sets{11};
  int bits = 16;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
  std::string base_dir = ".";  // directory of the config file

  PathsConfig paths;
  ModelConfig model;
  DatasetConfig dataset;
  QuantScheme quant;
  PretrainConfig pretrain;
  double pretrain_min_accuracy = 0.0;
  DriftConfig drift;
  CompensationConfig compensation;
  ScheduleConfig schedule;
  TrainConfig train;
  HardwareProfile hardware;
  SweepConfig sweep;
  CostConfig cost;

  // Throws ConfigError on any invalid field or unresolvable input path.
  void validate() const;

  std::string backbone_path() const;
  std::string archive_path() const;
  std::string out_path(const std::string& name) const;
  std::string input_path(const std::string& p) const;
};

// Parses a JSON config. Unknown keys are rejected. `base_dir` anchors
// relative input paths.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);

// Canonical JSON of every field that affects results. Thread count and
// output directory are omitted so outputs do not depend on them.
std::string config_echo(const RunConfig& cfg);

ModelSpec resolve_model(const RunConfig& cfg);
DatasetSplit resolve_datasets(const RunConfig& cfg);
DriftSetup resolve_drift(const RunConfig& cfg);

}  // namespace driftcomp::cli
