#include "driftcomp/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "driftcomp/errors.hpp"

namespace driftcomp {

void QuantScheme::validate() const {
  if (weight_bits < 2 || weight_bits > 8 || act_bits < 2 || act_bits > 8)
    throw ConfigError("quantization bit-widths must lie in [2, 8]");
  if (!symmetric) throw ConfigError("only symmetric quantization is supported");
}

int max_code(int bits) {
  if (bits < 2 || bits > 8) throw ConfigError("bit-width must lie in [2, 8]");
  return (1 << (bits - 1)) - 1;
}

std::size_t QuantizedTensor::channel_stride() const {
  if (scales.size() <= 1) return codes.size();
  return codes.size() / scales.size();
}

double QuantizedTensor::scale_of(std::size_t i) const {
  if (scales.size() == 1) return scales[0];
  return scales[i / channel_stride()];
}

double QuantizedTensor::absmax_of(std::size_t i) const { return max_code(bits) * scale_of(i); }

namespace {

std::size_t units_for(std::span<const std::size_t> shape, ScaleGranularity per) {
  if (per == ScaleGranularity::kTensor || shape.empty()) return 1;
  return shape[0];
}

std::size_t element_count(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::vector<double> calibrate_scale(std::span<const double> w, std::span<const std::size_t> shape,
                                    const QuantScheme& scheme) {
  if (w.empty()) throw ContractError("calibrate_scale: empty tensor");
  if (element_count(shape) != w.size()) throw ContractError("calibrate_scale: shape/data mismatch");
  const std::size_t units = units_for(shape, scheme.per);
  const std::size_t stride = w.size() / units;
  const int levels = max_code(scheme.weight_bits);
  std::vector<double> scales(units);
  for (std::size_t u = 0; u < units; ++u) {
    double m = 0.0;
    for (std::size_t i = u * stride; i < (u + 1) * stride; ++i) m = std::max(m, std::abs(w[i]));
    scales[u] = m > 0.0 ? m / levels : 1.0;
  }
  return scales;
}

QuantizedTensor quantize(std::span<const double> w, std::span<const std::size_t> shape,
                         std::span<const double> scales, const QuantScheme& scheme) {
  if (element_count(shape) != w.size()) throw ContractError("quantize: shape/data mismatch");
  if (scales.size() != units_for(shape, scheme.per))
    throw ContractError("quantize: scale count does not match granularity");
  for (double s : scales)
    if (!(s > 0.0)) throw ContractError("quantize: scale must be positive");
  QuantizedTensor q;
  q.bits = scheme.weight_bits;
  q.shape.assign(shape.begin(), shape.end());
  q.scales.assign(scales.begin(), scales.end());
  q.codes.resize(w.size());
  const int levels = max_code(scheme.weight_bits);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = std::round(w[i] / q.scale_of(i));  // half away from zero
    q.codes[i] = static_cast<std::int8_t>(std::clamp(r, -double(levels), double(levels)));
  }
  return q;
}

QuantizedTensor quantize(std::span<const double> w, std::span<const std::size_t> shape,
                         const QuantScheme& scheme) {
  const auto scales = calibrate_scale(w, shape, scheme);
  return quantize(w, shape, scales, scheme);
}

std::vector<double> dequantize(const QuantizedTensor& q) {
  std::vector<double> w(q.codes.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = q.codes[i] * q.scale_of(i);
  return w;
}

template <typename T>
void fake_quant_activation(std::span<T> x, int bits) {
  const int levels = max_code(bits);
  T m = 0;
  for (T v : x) m = std::max(m, std::abs(v));
  if (m == T(0)) return;
  const T scale = m / T(levels);
  for (T& v : x) {
    // |v / scale| <= levels, so the integer conversion is exact and inlined.
    const T y = v / scale;
    long r = static_cast<long>(y);
    const T frac = y - static_cast<T>(r);
    if (frac >= T(0.5)) ++r;
    else if (frac <= T(-0.5)) --r;
    v = static_cast<T>(r) * scale;
  }
}

template void fake_quant_activation<float>(std::span<float>, int);
template void fake_quant_activation<double>(std::span<double>, int);

void fake_quant_weights(std::span<double> w, std::span<const std::size_t> shape,
                        const QuantScheme& scheme) {
  const auto q = quantize(std::span<const double>(w.data(), w.size()), shape, scheme);
  const auto deq = dequantize(q);
  std::copy(deq.begin(), deq.end(), w.begin());
}

}  // namespace driftcomp
