#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace driftcomp {

enum class LayerKind { kConv2d, kLinear, kResidualAdd, kRelu, kGlobalAvgPool };

// One node of a feed-forward graph in topological order. `input` and `skip`
// refer to earlier node indices; -1 denotes the model input.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  int c_in = 0;
  int c_out = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  bool compensated = false;
  int input = -1;
  int skip = -1;  // residual-add only

  bool has_weights() const { return kind == LayerKind::kConv2d || kind == LayerKind::kLinear; }
};

struct Shape {
  int c = 0;
  int h = 1;
  int w = 1;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  Shape input;
  int classes = 0;

  // Throws ConfigError when consecutive shapes are incompatible.
  void validate() const;
  // Output shape of every node.
  std::vector<Shape> infer_shapes() const;
  // Node indices of conv/linear layers, in order. These index backbone tensors.
  std::vector<int> weight_layers() const;
  // Node indices of compensated weight layers.
  std::vector<int> compensated_layers() const;
  std::size_t weight_count() const;     // conv/linear weights only
  std::size_t parameter_count() const;  // weights plus biases
};

// Residual shortcut for mismatched shapes: spatial subsampling by the size
// ratio and zero-padding of the extra channels (parameter-free).
Shape conv_output_shape(const LayerSpec& layer, const Shape& in);

// Stem conv + `blocks` residual blocks in each of 3 stages (channels
// width, 2*width, 4*width; stride-2 at stage transitions) + global average
// pool + linear head. Every conv is 3x3 and compensated, as is the head.
ModelSpec build_toy_resnet(int width, int blocks, int classes, Shape input = {3, 16, 16});

// The CIFAR ResNet-20 layout (width 16, 3 blocks per stage, 32x32x3 input).
ModelSpec build_resnet20(int classes = 10);

// linear(in -> hidden) + relu + linear(hidden -> classes), both compensated.
ModelSpec build_mlp(int in_features, int hidden, int classes);

std::string to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

std::string model_to_json(const ModelSpec& spec);
ModelSpec model_from_json(const std::string& text);

}  // namespace driftcomp
