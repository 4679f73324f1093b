#include "driftcomp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "driftcomp/errors.hpp"
#include "driftcomp/pretrain.hpp"
#include "driftcomp/random.hpp"
#include "driftcomp/training.hpp"

namespace driftcomp {

namespace {

constexpr double kKinkMargin = 1e-2;
constexpr int kMaxRedraws = 64;

struct Instance {
  Backbone bb;
  DriftedWeights drifted;
  SharedProjections proj;
  ScalingVectorSet set;
  LabeledDataset data;
};

Instance make_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {tag(Stream::kValidation)}));
  std::uniform_int_distribution<int> dim(2, 6);
  const int in = dim(rng), hidden = dim(rng), classes = dim(rng);
  const auto spec = build_mlp(in, hidden, classes);
  auto w = init_weights(spec, rng());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& l : w)
    for (auto& b : l.bias) b = 0.2 * u(rng);

  Instance inst;
  inst.bb = quantize_backbone(spec, w, QuantScheme{});
  inst.bb.quantize_activations = false;
  const double t = std::exp(std::uniform_real_distribution<double>(0.0, 15.0)(rng));
  inst.drifted = DriftSetup{}.sample(inst.bb, t, rng());
  const int rank = std::uniform_int_distribution<int>(1, 3)(rng);
  inst.proj = init_shared_projections(spec, 3, rng());
  inst.set = make_initial_set(spec, rank, 1, t);
  for (auto& l : inst.set.layers) {
    for (auto& v : l.d_vec) v = u(rng);
    for (auto& v : l.b_vec) v = u(rng);
  }
  inst.data.shape = spec.input;
  inst.data.classes = classes;
  const int n = 6;
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < spec.input.size(); ++k) inst.data.pixels.push_back(0.5 * (u(rng) + 1.0));
    inst.data.labels.push_back(std::uniform_int_distribution<int>(0, classes - 1)(rng));
  }
  return inst;
}

// True when every hidden pre-activation is clear of the ReLU kink.
bool clear_of_kink(const Instance& inst) {
  const auto weights = inst.bb.with_drift(inst.drifted);
  const auto plan = make_plan<double>(inst.bb.spec, inst.proj, inst.set);
  Trace<double> trace;
  FeatureMap<double> x;
  for (std::size_t i = 0; i < inst.data.size(); ++i) {
    inst.data.image(i, x);
    forward<double>(inst.bb.spec, weights, &plan, inst.bb.forward_options(), x, trace);
    for (double z : trace.outputs[0].data)
      if (std::fabs(z) < kKinkMargin) return false;
  }
  return true;
}

double batch_loss(const Instance& inst, const ScalingVectorSet& set) {
  double sum = 0;
  FeatureMap<double> x;
  for (std::size_t i = 0; i < inst.data.size(); ++i) {
    inst.data.image(i, x);
    sum += loss_cross_entropy(forward_with_drift(inst.bb, inst.drifted, &set, inst.proj, x), inst.data.labels[i]);
  }
  return sum / static_cast<double>(inst.data.size());
}

double rel_error(double g, double fd, double floor) {
  return std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), floor});
}

}  // namespace

GradCheckResult gradient_check_instance(std::uint64_t seed, double h, double floor) {
  GradCheckResult r;
  Instance inst = make_instance(seed);
  while (!clear_of_kink(inst)) {
    if (++r.redraws > kMaxRedraws) throw Error("gradient check: no instance clear of the ReLU kink");
    inst = make_instance(derive_seed(seed, {static_cast<std::uint64_t>(r.redraws)}));
  }
  std::vector<std::size_t> batch(inst.data.size());
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  const auto g = backward_scaling_vectors(inst.bb, inst.drifted, inst.set, inst.proj, inst.data, batch);

  auto probe = [&](std::size_t layer, bool is_d, std::size_t k) {
    ScalingVectorSet s = inst.set;
    double& v = is_d ? s.layers[layer].d_vec[k] : s.layers[layer].b_vec[k];
    const double v0 = v;
    v = v0 + h;
    const double up = batch_loss(inst, s);
    v = v0 - h;
    const double down = batch_loss(inst, s);
    return (up - down) / (2 * h);
  };
  for (std::size_t l = 0; l < inst.set.layers.size(); ++l) {
    for (std::size_t k = 0; k < inst.set.layers[l].d_vec.size(); ++k) {
      r.max_rel_error = std::max(r.max_rel_error, rel_error(g.layers[l].grad_d_vec[k], probe(l, true, k), floor));
      ++r.entries;
    }
    for (std::size_t k = 0; k < inst.set.layers[l].b_vec.size(); ++k) {
      r.max_rel_error = std::max(r.max_rel_error, rel_error(g.layers[l].grad_b_vec[k], probe(l, false, k), floor));
      ++r.entries;
    }
  }
  return r;
}

GradCheckResult gradient_check(std::uint64_t seed, int instances, double h, double floor) {
  GradCheckResult total;
  for (int i = 0; i < instances; ++i) {
    const auto r = gradient_check_instance(derive_seed(seed, {static_cast<std::uint64_t>(i)}), h, floor);
    total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
    total.entries += r.entries;
    total.redraws += r.redraws;
  }
  return total;
}

}  // namespace driftcomp
