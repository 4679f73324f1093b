#include "driftcomp/pretrain.hpp"

#include <cmath>

#include "driftcomp/errors.hpp"
#include "driftcomp/parallel.hpp"
#include "driftcomp/random.hpp"
#include "driftcomp/training.hpp"

namespace driftcomp {

void PretrainConfig::validate() const {
  if (epochs < 0 || qat_epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("pretrain: learning_rate must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("pretrain: momentum must be in [0, 1)");
  if (weight_decay < 0) throw ConfigError("pretrain: weight_decay must be >= 0");
  if (threads < 1) throw ConfigError("pretrain: threads must be >= 1");
}

NetworkWeights<double> init_weights(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {tag(Stream::kInitWeights)}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  NetworkWeights<double> w;
  for (int i : spec.weight_layers()) {
    const auto& l = spec.layers[i];
    const std::size_t fan_in = static_cast<std::size_t>(l.c_in) * (l.kind == LayerKind::kConv2d ? l.kernel * l.kernel : 1);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    LayerTensors<double> t;
    t.weight.resize(fan_in * l.c_out);
    for (auto& v : t.weight) v = bound * u(rng);
    t.bias.assign(l.c_out, 0.0);
    w.push_back(std::move(t));
  }
  return w;
}

namespace {

double run_epoch(const ModelSpec& spec, NetworkWeights<double>& w, NetworkWeights<double>& velocity,
                 const LabeledDataset& data, const PretrainConfig& cfg, double lr, bool qat,
                 const QuantScheme& scheme, std::uint64_t shuffle_seed) {
  const auto order = shuffled_indices(data.size(), shuffle_seed);
  const ForwardOptions opts{qat, scheme.act_bits};
  double total_loss = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
    NetworkWeights<double> fw = w;
    if (qat) {
      const auto wl = spec.weight_layers();
      for (std::size_t k = 0; k < wl.size(); ++k) {
        const auto shape = weight_shape(spec.layers[wl[k]]);
        fake_quant_weights(fw[k].weight, shape, scheme);
      }
    }
    const std::size_t chunks = std::min<std::size_t>(cfg.threads, n);
    std::vector<Gradients<double>> slots(chunks);
    std::vector<double> losses(chunks, 0.0);
    parallel_for(chunks, cfg.threads, [&](std::size_t c) {
      Trace<double> trace;
      FeatureMap<double> x;
      std::vector<double> dl;
      slots[c].reset(spec, nullptr, true);
      for (std::size_t s = c * n / chunks; s < (c + 1) * n / chunks; ++s) {
        const std::size_t idx = order[start + s];
        data.image(idx, x);
        const auto logits = forward<double>(spec, fw, nullptr, opts, x, trace);
        dl.resize(logits.size());
        losses[c] += loss_cross_entropy(logits, data.labels[idx], dl);
        backward<double>(spec, fw, nullptr, trace, dl, slots[c], true);
      }
    });
    for (std::size_t c = 1; c < chunks; ++c) {
      slots[0].add(slots[c]);
      losses[0] += losses[c];
    }
    total_loss += losses[0];
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < w.size(); ++k) {
      auto upd = [&](std::vector<double>& p, std::vector<double>& v, const std::vector<double>& g, bool decay) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g[i] * inv + (decay ? cfg.weight_decay * p[i] : 0.0);
          v[i] = cfg.momentum * v[i] + gi;
          p[i] -= lr * v[i];
        }
      };
      upd(w[k].weight, velocity[k].weight, slots[0].weights[k].weight, true);
      upd(w[k].bias, velocity[k].bias, slots[0].weights[k].bias, false);
    }
  }
  return total_loss / static_cast<double>(data.size());
}

}  // namespace

Backbone pretrain_backbone(const ModelSpec& spec, const QuantScheme& scheme, const LabeledDataset& train,
                           const PretrainConfig& cfg, PretrainReport* report) {
  cfg.validate();
  spec.validate();
  if (train.empty() && cfg.epochs + cfg.qat_epochs > 0) throw ConfigError("pretrain: empty training set");
  if (!train.empty() && !(train.shape == spec.input)) throw ConfigError("pretrain: dataset shape does not match model");
  auto w = init_weights(spec, cfg.seed);
  auto velocity = w;
  for (auto& v : velocity) {
    std::fill(v.weight.begin(), v.weight.end(), 0.0);
    std::fill(v.bias.begin(), v.bias.end(), 0.0);
  }
  const int total = cfg.epochs + cfg.qat_epochs;
  for (int e = 0; e < total; ++e) {
    const bool qat = e >= cfg.epochs;
    // Cosine decay over the full-precision phase; QAT runs at a tenth.
    const double lr = qat ? 0.1 * cfg.learning_rate
                          : cfg.learning_rate * 0.5 * (1 + std::cos(M_PI * e / std::max(cfg.epochs, 1)));
    const double loss = run_epoch(spec, w, velocity, train, cfg, lr, qat, scheme,
                                  derive_seed(cfg.seed, {tag(Stream::kPretrainShuffle), static_cast<std::uint64_t>(e)}));
    if (!std::isfinite(loss)) throw Error("pretrain diverged in epoch " + std::to_string(e));
    if (report) report->epoch_loss.push_back(loss);
  }
  return quantize_backbone(spec, w, scheme);
}

}  // namespace driftcomp
