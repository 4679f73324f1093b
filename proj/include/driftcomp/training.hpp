#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "driftcomp/backbone.hpp"
#include "driftcomp/compensation.hpp"
#include "driftcomp/dataset.hpp"
#include "driftcomp/drift_model.hpp"

namespace driftcomp {

// Drift model plus the weight/conductance mapping it acts through.
struct DriftSetup {
  DriftModel model;
  ConductanceMap map;

  DriftedWeights sample(const Backbone& backbone, double t, std::uint64_t seed) const;
};

enum class OptimizerKind { kSgd, kSgdMomentum, kAdam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  int epochs = 3;
  int batch_size = 64;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool warm_start = false;  // start from the previous set instead of the zero set
  int threads = 1;

  void validate() const;
};

struct LayerGradient {
  int layer = -1;
  std::vector<double> grad_d_vec;
  std::vector<double> grad_b_vec;
};

// Gradients of the mean batch loss, in ScalingVectorSet layer order.
struct GradientSet {
  double loss = 0.0;
  std::vector<LayerGradient> layers;

  double norm_d() const;
  double norm_b() const;
};

double loss_cross_entropy(std::span<const double> logits, int label);
// Also writes dL/dlogits = softmax - onehot.
double loss_cross_entropy(std::span<const double> logits, int label, std::span<double> dlogits);

// Logits of one sample with the drifted backbone and, when `set` is
// non-null, the compensation branch.
std::vector<double> forward_with_drift(const Backbone& backbone, const DriftedWeights& drifted,
                                       const ScalingVectorSet* set, const SharedProjections& proj,
                                       const FeatureMap<double>& x);

GradientSet backward_scaling_vectors(const Backbone& backbone, const DriftedWeights& drifted,
                                     const ScalingVectorSet& set, const SharedProjections& proj,
                                     const LabeledDataset& data, std::span<const std::size_t> batch,
                                     int threads = 1);

struct TrainLogRow {
  int epoch = 0;
  int batch = 0;
  double t_seconds = 0.0;
  double loss = 0.0;
  double grad_norm_b = 0.0;
  double grad_norm_d = 0.0;
};

std::string train_log_header();
std::string format_train_log_row(const TrainLogRow& row);

// Seed of the drift instance used for mini-batch `counter` at time t.
std::uint64_t train_drift_seed(std::uint64_t seed, double t, std::uint64_t counter);

// Trains the vectors of `init` at drift time t (backbone and projections are
// read-only). The returned set has drift_time = t and init's set_id.
ScalingVectorSet train_set_at_time(double t, const Backbone& backbone, const SharedProjections& proj,
                                   const LabeledDataset& data, const TrainConfig& cfg, const DriftSetup& drift,
                                   const ScalingVectorSet& init, std::vector<TrainLogRow>* log = nullptr);

// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace driftcomp
