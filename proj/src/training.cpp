#include "driftcomp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "driftcomp/errors.hpp"
#include "driftcomp/network.hpp"
#include "driftcomp/parallel.hpp"
#include "driftcomp/random.hpp"

namespace driftcomp {

DriftedWeights DriftSetup::sample(const Backbone& backbone, double t, std::uint64_t seed) const {
  return inject_drift(backbone.weights, t, model, map, seed);
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kSgdMomentum: return "sgd-momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning_rate must be >= 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0, 1)");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

double GradientSet::norm_d() const {
  double s = 0;
  for (const auto& l : layers)
    for (double v : l.grad_d_vec) s += v * v;
  return std::sqrt(s);
}

double GradientSet::norm_b() const {
  double s = 0;
  for (const auto& l : layers)
    for (double v : l.grad_b_vec) s += v * v;
  return std::sqrt(s);
}

double loss_cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw ContractError("loss: label out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double v : logits) z += std::exp(v - m);
  return std::log(z) - (logits[label] - m);
}

double loss_cross_entropy(std::span<const double> logits, int label, std::span<double> dlogits) {
  if (dlogits.size() != logits.size()) throw ContractError("loss: gradient size mismatch");
  const double loss = loss_cross_entropy(logits, label);
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (dlogits[i] = std::exp(logits[i] - m));
  for (std::size_t i = 0; i < logits.size(); ++i) dlogits[i] = dlogits[i] / z - (static_cast<int>(i) == label);
  return loss;
}

std::vector<double> forward_with_drift(const Backbone& backbone, const DriftedWeights& drifted,
                                       const ScalingVectorSet* set, const SharedProjections& proj,
                                       const FeatureMap<double>& x) {
  const auto weights = backbone.with_drift(drifted);
  Trace<double> trace;
  if (!set) return forward<double>(backbone.spec, weights, nullptr, backbone.forward_options(), x, trace);
  const auto plan = make_plan<double>(backbone.spec, proj, *set);
  return forward<double>(backbone.spec, weights, &plan, backbone.forward_options(), x, trace);
}

namespace {

// In-place pairwise reduction of per-sample gradients into slot 0.
void pairwise_sum(std::vector<Gradients<double>>& g, std::vector<double>& loss) {
  for (std::size_t step = 1; step < g.size(); step *= 2)
    for (std::size_t i = 0; i + step < g.size(); i += 2 * step) {
      g[i].add(g[i + step]);
      loss[i] += loss[i + step];
    }
}

GradientSet batch_gradients(const Backbone& bb, const NetworkWeights<double>& weights,
                            const CompensationPlan<double>& plan, const ScalingVectorSet& set,
                            const LabeledDataset& data, std::span<const std::size_t> batch, int threads) {
  const std::size_t n = batch.size();
  if (n == 0) throw ConfigError("empty mini-batch");
  std::vector<Gradients<double>> slots(n);
  std::vector<double> losses(n, 0.0);
  const std::size_t chunks = std::min<std::size_t>(std::max(threads, 1), n);
  const auto opts = bb.forward_options();
  parallel_for(chunks, threads, [&](std::size_t c) {
    Trace<double> trace;
    FeatureMap<double> x;
    std::vector<double> dlogits;
    for (std::size_t s = c * n / chunks; s < (c + 1) * n / chunks; ++s) {
      const std::size_t idx = batch[s];
      if (idx >= data.size()) throw ContractError("batch index out of range");
      data.image(idx, x);
      const auto logits = forward<double>(bb.spec, weights, &plan, opts, x, trace);
      dlogits.resize(logits.size());
      losses[s] = loss_cross_entropy(logits, data.labels[idx], dlogits);
      slots[s].reset(bb.spec, &plan, false);
      backward<double>(bb.spec, weights, &plan, trace, dlogits, slots[s], false);
    }
  });
  pairwise_sum(slots, losses);
  const double inv = 1.0 / static_cast<double>(n);
  GradientSet out;
  out.loss = losses[0] * inv;
  const auto wl = bb.spec.weight_layers();
  for (const auto& ls : set.layers) {
    const auto k = static_cast<std::size_t>(std::find(wl.begin(), wl.end(), ls.layer) - wl.begin());
    LayerGradient lg;
    lg.layer = ls.layer;
    lg.grad_d_vec = slots[0].d_vec[k];
    lg.grad_b_vec = slots[0].b_vec[k];
    for (auto& v : lg.grad_d_vec) v *= inv;
    for (auto& v : lg.grad_b_vec) v *= inv;
    out.layers.push_back(std::move(lg));
  }
  return out;
}

std::vector<double> flatten(const ScalingVectorSet& s) {
  std::vector<double> p;
  for (const auto& l : s.layers) {
    p.insert(p.end(), l.d_vec.begin(), l.d_vec.end());
    p.insert(p.end(), l.b_vec.begin(), l.b_vec.end());
  }
  return p;
}

std::vector<double> flatten(const GradientSet& g) {
  std::vector<double> p;
  for (const auto& l : g.layers) {
    p.insert(p.end(), l.grad_d_vec.begin(), l.grad_d_vec.end());
    p.insert(p.end(), l.grad_b_vec.begin(), l.grad_b_vec.end());
  }
  return p;
}

void unflatten(const std::vector<double>& p, ScalingVectorSet& s) {
  std::size_t k = 0;
  for (auto& l : s.layers) {
    for (auto& v : l.d_vec) v = p[k++];
    for (auto& v : l.b_vec) v = p[k++];
  }
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& p, const std::vector<double>& g) {
    const double lr = cfg_.learning_rate;
    switch (cfg_.optimizer) {
      case OptimizerKind::kSgd:
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        break;
      case OptimizerKind::kSgdMomentum:
        for (std::size_t i = 0; i < p.size(); ++i) {
          m_[i] = cfg_.momentum * m_[i] + g[i];
          p[i] -= lr * m_[i];
        }
        break;
      case OptimizerKind::kAdam: {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        const double c1 = 1 - std::pow(b1, t_), c2 = 1 - std::pow(b2, t_);
        for (std::size_t i = 0; i < p.size(); ++i) {
          m_[i] = b1 * m_[i] + (1 - b1) * g[i];
          v_[i] = b2 * v_[i] + (1 - b2) * g[i] * g[i];
          p[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
        }
        break;
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  long long t_ = 0;
};

}  // namespace

GradientSet backward_scaling_vectors(const Backbone& backbone, const DriftedWeights& drifted,
                                     const ScalingVectorSet& set, const SharedProjections& proj,
                                     const LabeledDataset& data, std::span<const std::size_t> batch,
                                     int threads) {
  const auto weights = backbone.with_drift(drifted);
  const auto plan = make_plan<double>(backbone.spec, proj, set);
  return batch_gradients(backbone, weights, plan, set, data, batch, threads);
}

std::string train_log_header() { return "epoch,batch,t_seconds,loss,grad_norm_b,grad_norm_d"; }

std::string format_train_log_row(const TrainLogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g", r.epoch, r.batch, r.t_seconds, r.loss,
                r.grad_norm_b, r.grad_norm_d);
  return buf;
}

std::uint64_t train_drift_seed(std::uint64_t seed, double t, std::uint64_t counter) {
  return derive_seed(seed, {tag(Stream::kTrainDrift), time_tag(t), counter});
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

ScalingVectorSet train_set_at_time(double t, const Backbone& backbone, const SharedProjections& proj,
                                   const LabeledDataset& data, const TrainConfig& cfg, const DriftSetup& drift,
                                   const ScalingVectorSet& init, std::vector<TrainLogRow>* log) {
  cfg.validate();
  if (!(t >= 1.0)) throw DomainError("train_set_at_time: t must be >= 1");
  if (data.empty()) throw ConfigError("train_set_at_time: empty dataset");
  check_set_matches(backbone.spec, proj, init);
  ScalingVectorSet set = init;
  set.drift_time = t;
  std::vector<double> params = flatten(set);
  Optimizer opt(cfg, params.size());
  std::uint64_t counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), derive_seed(cfg.seed, {tag(Stream::kTrainShuffle), time_tag(t),
                                                                            static_cast<std::uint64_t>(epoch)}));
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no, ++counter) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto drifted = drift.sample(backbone, t, train_drift_seed(cfg.seed, t, counter));
      const auto weights = backbone.with_drift(drifted);
      const auto plan = make_plan<double>(backbone.spec, proj, set);
      const auto g = batch_gradients(backbone, weights, plan, set,
                                     data, std::span(order).subspan(start, end - start), cfg.threads);
      if (!std::isfinite(g.loss)) throw Error("training diverged at t=" + std::to_string(t));
      opt.step(params, flatten(g));
      unflatten(params, set);
      if (log) log->push_back({epoch, batch_no, t, g.loss, g.norm_b(), g.norm_d()});
    }
  }
  return set;
}

}  // namespace driftcomp
