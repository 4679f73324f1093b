#include "driftcomp/backbone.hpp"

#include "driftcomp/errors.hpp"

namespace driftcomp {

std::vector<std::size_t> weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::kConv2d)
    return {std::size_t(l.c_out), std::size_t(l.c_in), std::size_t(l.kernel), std::size_t(l.kernel)};
  return {std::size_t(l.c_out), std::size_t(l.c_in)};
}

void Backbone::validate() const {
  spec.validate();
  scheme.validate();
  const auto wl = spec.weight_layers();
  if (weights.size() != wl.size() || biases.size() != wl.size())
    throw ContractError("backbone tensor count does not match the model");
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const auto& l = spec.layers[wl[k]];
    if (weights[k].shape != weight_shape(l)) throw ContractError("backbone weight shape mismatch at " + l.name);
    if (biases[k].size() != std::size_t(l.c_out)) throw ContractError("backbone bias size mismatch at " + l.name);
    const int lim = max_code(weights[k].bits);
    for (auto c : weights[k].codes)
      if (c < -lim || c > lim) throw ContractError("backbone code out of range at " + l.name);
  }
}

NetworkWeights<double> Backbone::dequantized() const {
  NetworkWeights<double> w(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    w[k].weight = dequantize(weights[k]);
    w[k].bias = biases[k];
  }
  return w;
}

NetworkWeights<double> Backbone::with_drift(const DriftedWeights& drifted) const {
  if (drifted.values.size() != weights.size()) throw ContractError("drifted weights do not match backbone");
  NetworkWeights<double> w(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (drifted.values[k].size() != weights[k].size()) throw ContractError("drifted tensor size mismatch");
    w[k].weight = drifted.values[k];
    w[k].bias = biases[k];
  }
  return w;
}

Backbone quantize_backbone(const ModelSpec& spec, const NetworkWeights<double>& weights, const QuantScheme& scheme) {
  scheme.validate();
  Backbone b;
  b.spec = spec;
  b.scheme = scheme;
  const auto wl = spec.weight_layers();
  if (weights.size() != wl.size()) throw ContractError("quantize_backbone: weight count mismatch");
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const auto shape = weight_shape(spec.layers[wl[k]]);
    b.weights.push_back(quantize(weights[k].weight, shape, scheme));
    b.biases.push_back(weights[k].bias);
  }
  b.validate();
  return b;
}

}  // namespace driftcomp
