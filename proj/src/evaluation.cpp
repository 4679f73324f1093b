#include "driftcomp/evaluation.hpp"

#include <cmath>

#include "driftcomp/errors.hpp"
#include "driftcomp/parallel.hpp"

namespace driftcomp {

template <typename T>
int argmax(std::span<const T> logits) {
  if (logits.empty()) throw ContractError("argmax of empty logits");
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

template <typename T>
double evaluate_accuracy(const ModelSpec& spec, const NetworkWeights<T>& weights, const CompensationPlan<T>* plan,
                         const ForwardOptions& opts, const LabeledDataset& data, int threads) {
  if (data.empty()) throw ConfigError("evaluate_accuracy: empty dataset");
  const std::size_t n = data.size();
  const std::size_t chunks = static_cast<std::size_t>(std::max(threads, 1));
  std::vector<std::size_t> hits(chunks, 0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Trace<T> trace;
    FeatureMap<T> x;
    for (std::size_t i = c * n / chunks; i < (c + 1) * n / chunks; ++i) {
      data.image(i, x);
      const auto logits = forward(spec, weights, plan, opts, x, trace);
      if (argmax<T>(logits) == data.labels[i]) ++hits[c];
    }
  });
  std::size_t correct = 0;
  for (auto h : hits) correct += h;
  return static_cast<double>(correct) / static_cast<double>(n);
}

template <typename T>
AccuracyResult evaluate_accuracy(const ModelSpec& spec, const NetworkWeights<T>& weights,
                                 const CompensationPlan<T>* plan, const ForwardOptions& opts,
                                 const LabeledDataset& data, double reference, int threads) {
  AccuracyResult r;
  r.accuracy = evaluate_accuracy(spec, weights, plan, opts, data, threads);
  r.total = data.size();
  r.correct = static_cast<std::size_t>(std::llround(r.accuracy * static_cast<double>(r.total)));
  r.normalized = normalized_accuracy(r.accuracy, reference);
  return r;
}

#define DRIFTCOMP_INSTANTIATE(T)                                                                               \
  template int argmax<T>(std::span<const T>);                                                                  \
  template double evaluate_accuracy<T>(const ModelSpec&, const NetworkWeights<T>&, const CompensationPlan<T>*, \
                                       const ForwardOptions&, const LabeledDataset&, int);                     \
  template AccuracyResult evaluate_accuracy<T>(const ModelSpec&, const NetworkWeights<T>&,                     \
                                               const CompensationPlan<T>*, const ForwardOptions&,              \
                                               const LabeledDataset&, double, int);

DRIFTCOMP_INSTANTIATE(float)
DRIFTCOMP_INSTANTIATE(double)

}  // namespace driftcomp
