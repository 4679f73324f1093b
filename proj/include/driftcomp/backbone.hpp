#pragma once

#include <vector>

#include "driftcomp/drift_model.hpp"
#include "driftcomp/model.hpp"
#include "driftcomp/network.hpp"
#include "driftcomp/quantizer.hpp"

namespace driftcomp {

// The frozen quantized network as programmed into the analog arrays. Biases
// live in the digital periphery and are neither quantized nor drifted.
struct Backbone {
  ModelSpec spec;
  QuantScheme scheme;
  std::vector<QuantizedTensor> weights;     // per weight layer
  std::vector<std::vector<double>> biases;  // per weight layer
  // Runtime switch, not stored in checkpoints.
  bool quantize_activations = true;

  void validate() const;
  NetworkWeights<double> dequantized() const;
  // Network weights with the drifted values in place of the programmed ones.
  NetworkWeights<double> with_drift(const DriftedWeights& drifted) const;
  ForwardOptions forward_options() const { return {quantize_activations, scheme.act_bits}; }
};

std::vector<std::size_t> weight_shape(const LayerSpec& layer);

Backbone quantize_backbone(const ModelSpec& spec, const NetworkWeights<double>& weights, const QuantScheme& scheme);

}  // namespace driftcomp
