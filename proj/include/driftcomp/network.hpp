#pragma once

#include <span>
#include <vector>

#include "driftcomp/compensation.hpp"
#include "driftcomp/model.hpp"
#include "driftcomp/tensor.hpp"

namespace driftcomp {

// Weights and bias of one conv/linear layer. Conv weights are laid out
// [c_out][c_in][K][K], linear weights [c_out][c_in].
template <typename T>
struct LayerTensors {
  std::vector<T> weight;
  std::vector<T> bias;
};

// One entry per weight layer, in ModelSpec::weight_layers() order.
template <typename T>
using NetworkWeights = std::vector<LayerTensors<T>>;

// Compensation branch of one layer, materialized in the engine's scalar type.
template <typename T>
struct CompLayer {
  bool active = false;
  int rank = 0;
  int c_in = 0;
  int c_out = 0;
  std::vector<T> a;  // rank x c_in
  std::vector<T> b;  // c_out x rank
  std::vector<T> d_vec;
  std::vector<T> b_vec;
};

// One entry per weight layer; inactive entries carry no branch.
template <typename T>
using CompensationPlan = std::vector<CompLayer<T>>;

template <typename T>
CompensationPlan<T> make_plan(const ModelSpec& spec, const SharedProjections& proj, const ScalingVectorSet& set);

struct ForwardOptions {
  bool quantize_activations = true;
  int act_bits = 4;
};

// Per-sample forward state kept for the backward pass. Reusable across
// samples to avoid reallocation.
template <typename T>
struct Trace {
  std::vector<FeatureMap<T>> outputs;   // per node
  std::vector<FeatureMap<T>> inputs;    // per node: (fake-quantized) input of weight layers
  std::vector<std::vector<T>> columns;  // per node: im2col buffer of conv layers
  std::vector<std::vector<T>> comp_u;   // per node: A x, rank x positions
  std::vector<std::vector<T>> comp_w;   // per node: B (d .* A x), c_out x positions
  std::vector<FeatureMap<T>> grads;     // per node, backward scratch
};

template <typename T>
struct Gradients {
  std::vector<LayerTensors<T>> weights;  // per weight layer
  std::vector<std::vector<T>> d_vec;     // per weight layer (empty if uncompensated)
  std::vector<std::vector<T>> b_vec;

  void reset(const ModelSpec& spec, const CompensationPlan<T>* plan, bool want_weights);
  void add(const Gradients& other);
  void scale(T factor);
};

template <typename T>
std::vector<T> forward(const ModelSpec& spec, const NetworkWeights<T>& weights, const CompensationPlan<T>* plan,
                       const ForwardOptions& opts, const FeatureMap<T>& x, Trace<T>& trace);

// Backpropagates dL/dlogits through the cached trace and accumulates into
// `grads`. Activation fake-quantization is treated as identity
// (straight-through; the range is the tensor's own max so nothing clips).
template <typename T>
void backward(const ModelSpec& spec, const NetworkWeights<T>& weights, const CompensationPlan<T>* plan,
              Trace<T>& trace, std::span<const T> dlogits, Gradients<T>& grads, bool want_weights);

// Plain convolution (no bias), used by reference paths and LoRA.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, std::span<const T> weight, const LayerSpec& layer);

template <typename T>
NetworkWeights<T> convert_weights(const NetworkWeights<double>& w);

}  // namespace driftcomp
