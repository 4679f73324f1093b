#pragma once

#include <cstdint>
#include <vector>

#include "driftcomp/backbone.hpp"
#include "driftcomp/dataset.hpp"

namespace driftcomp {

struct PretrainConfig {
  int epochs = 12;      // full-precision epochs
  int qat_epochs = 2;   // quantization-aware epochs afterwards
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

struct PretrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch (both phases)
};

// He-uniform weights, zero biases.
NetworkWeights<double> init_weights(const ModelSpec& spec, std::uint64_t seed);

// Full-precision SGD, optional quantization-aware fine-tuning with
// straight-through weight and activation quantizers, then quantization.
Backbone pretrain_backbone(const ModelSpec& spec, const QuantScheme& scheme, const LabeledDataset& train,
                           const PretrainConfig& cfg, PretrainReport* report = nullptr);

}  // namespace driftcomp
