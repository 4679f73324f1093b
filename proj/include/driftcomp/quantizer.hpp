#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace driftcomp {

enum class ScaleGranularity { kTensor, kOutputChannel };

struct QuantScheme {
  int weight_bits = 4;
  int act_bits = 4;
  bool symmetric = true;
  ScaleGranularity per = ScaleGranularity::kTensor;

  void validate() const;
};

// Largest code magnitude of the symmetric zero-inclusive grid: 2^(bits-1) - 1.
int max_code(int bits);

// Integer weight codes plus an affine (symmetric) scale. `shape[0]` is the
// output-channel dimension when scales are per channel.
struct QuantizedTensor {
  std::vector<std::int8_t> codes;
  std::vector<double> scales;  // size 1 (per tensor) or shape[0] (per channel)
  std::vector<std::size_t> shape;
  int bits = 4;

  std::size_t size() const { return codes.size(); }
  std::size_t channel_stride() const;
  // Scale that applies to element `i`.
  double scale_of(std::size_t i) const;
  // Largest representable |w| for element `i`, i.e. max_code(bits) * scale.
  double absmax_of(std::size_t i) const;
};

// max|w| / max_code per granularity unit; an all-zero unit gets scale 1.
std::vector<double> calibrate_scale(std::span<const double> w, std::span<const std::size_t> shape,
                                    const QuantScheme& scheme);

// codes = clamp(round_half_away(w / scale)).
QuantizedTensor quantize(std::span<const double> w, std::span<const std::size_t> shape,
                         std::span<const double> scales, const QuantScheme& scheme);

// Convenience: calibrate then quantize.
QuantizedTensor quantize(std::span<const double> w, std::span<const std::size_t> shape,
                         const QuantScheme& scheme);

std::vector<double> dequantize(const QuantizedTensor& q);

// Symmetric per-tensor quantize-dequantize of an activation tensor using its
// own max |x|. Applied in place.
template <typename T>
void fake_quant_activation(std::span<T> x, int bits);

// Same rounding applied to a weight vector with a fixed scale; used by the
// straight-through quantization-aware fine-tuning.
void fake_quant_weights(std::span<double> w, std::span<const std::size_t> shape,
                        const QuantScheme& scheme);

}  // namespace driftcomp
