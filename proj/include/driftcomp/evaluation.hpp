#pragma once

#include <cstddef>

#include "driftcomp/dataset.hpp"
#include "driftcomp/network.hpp"

namespace driftcomp {

struct AccuracyResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  double normalized = 0.0;  // accuracy / reference; 0 when no reference
};

// Index of the largest logit; ties resolve to the lowest index.
template <typename T>
int argmax(std::span<const T> logits);

// Top-1 accuracy over `data`. `threads` splits the samples.
template <typename T>
double evaluate_accuracy(const ModelSpec& spec, const NetworkWeights<T>& weights, const CompensationPlan<T>* plan,
                         const ForwardOptions& opts, const LabeledDataset& data, int threads = 1);

// Same, with normalized accuracy against a drift-free reference accuracy.
template <typename T>
AccuracyResult evaluate_accuracy(const ModelSpec& spec, const NetworkWeights<T>& weights,
                                 const CompensationPlan<T>* plan, const ForwardOptions& opts,
                                 const LabeledDataset& data, double reference, int threads = 1);

inline double normalized_accuracy(double accuracy, double reference) {
  return reference > 0 ? accuracy / reference : 0.0;
}

}  // namespace driftcomp
