#include "driftcomp/network.hpp"

#include <algorithm>
#include <cmath>

#include "driftcomp/errors.hpp"
#include "driftcomp/quantizer.hpp"

namespace driftcomp {

template <typename T>
CompensationPlan<T> make_plan(const ModelSpec& spec, const SharedProjections& proj, const ScalingVectorSet& set) {
  check_set_matches(spec, proj, set);
  const auto wl = spec.weight_layers();
  CompensationPlan<T> plan(wl.size());
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const auto* s = set.find(wl[k]);
    if (!s) continue;
    const auto& l = spec.layers[wl[k]];
    const int r = static_cast<int>(s->d_vec.size());
    const auto slice = slice_projections(proj, l.c_in, l.c_out, r);
    auto& c = plan[k];
    c.active = true;
    c.rank = r;
    c.c_in = l.c_in;
    c.c_out = l.c_out;
    c.a.resize(static_cast<std::size_t>(r) * l.c_in);
    c.b.resize(static_cast<std::size_t>(l.c_out) * r);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < l.c_in; ++j) c.a[i * l.c_in + j] = static_cast<T>(slice.a(i, j));
    for (int i = 0; i < l.c_out; ++i)
      for (int j = 0; j < r; ++j) c.b[i * r + j] = static_cast<T>(slice.b(i, j));
    c.d_vec.assign(s->d_vec.begin(), s->d_vec.end());
    c.b_vec.assign(s->b_vec.begin(), s->b_vec.end());
  }
  return plan;
}

namespace {

template <typename T>
void im2col(const FeatureMap<T>& in, const LayerSpec& l, const Shape& out, std::vector<T>& col) {
  const int K = l.kernel, s = l.stride, pad = l.padding;
  const std::size_t P = static_cast<std::size_t>(out.h) * out.w;
  col.assign(static_cast<std::size_t>(l.c_in) * K * K * P, T(0));
  for (int ci = 0; ci < l.c_in; ++ci)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* row = col.data() + ((static_cast<std::size_t>(ci) * K + ky) * K + kx) * P;
        for (int oy = 0; oy < out.h; ++oy) {
          const int iy = oy * s - pad + ky;
          if (iy < 0 || iy >= in.shape.h) continue;
          const T* src = in.data.data() + (static_cast<std::size_t>(ci) * in.shape.h + iy) * in.shape.w;
          T* dst = row + static_cast<std::size_t>(oy) * out.w;
          for (int ox = 0; ox < out.w; ++ox) {
            const int ix = ox * s - pad + kx;
            if (ix >= 0 && ix < in.shape.w) dst[ox] = src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const std::vector<T>& dcol, const LayerSpec& l, const Shape& out, FeatureMap<T>& din) {
  const int K = l.kernel, s = l.stride, pad = l.padding;
  const std::size_t P = static_cast<std::size_t>(out.h) * out.w;
  for (int ci = 0; ci < l.c_in; ++ci)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* row = dcol.data() + ((static_cast<std::size_t>(ci) * K + ky) * K + kx) * P;
        for (int oy = 0; oy < out.h; ++oy) {
          const int iy = oy * s - pad + ky;
          if (iy < 0 || iy >= din.shape.h) continue;
          T* dst = din.data.data() + (static_cast<std::size_t>(ci) * din.shape.h + iy) * din.shape.w;
          const T* src = row + static_cast<std::size_t>(oy) * out.w;
          for (int ox = 0; ox < out.w; ++ox) {
            const int ix = ox * s - pad + kx;
            if (ix >= 0 && ix < din.shape.w) dst[ix] += src[ox];
          }
        }
      }
}

// out[m][p] += W[m][k] * col[k][p], four k at a time.
template <typename T>
void gemm_acc(const T* W, const T* col, T* out, std::size_t M, std::size_t Kd, std::size_t P) {
  for (std::size_t m = 0; m < M; ++m) {
    T* __restrict o = out + m * P;
    const T* wr = W + m * Kd;
    std::size_t k = 0;
    for (; k + 4 <= Kd; k += 4) {
      const T w0 = wr[k], w1 = wr[k + 1], w2 = wr[k + 2], w3 = wr[k + 3];
      const T* __restrict c0 = col + k * P;
      const T* __restrict c1 = c0 + P;
      const T* __restrict c2 = c1 + P;
      const T* __restrict c3 = c2 + P;
      for (std::size_t p = 0; p < P; ++p) o[p] += (w0 * c0[p] + w1 * c1[p]) + (w2 * c2[p] + w3 * c3[p]);
    }
    for (; k < Kd; ++k) {
      const T w = wr[k];
      const T* __restrict c = col + k * P;
      for (std::size_t p = 0; p < P; ++p) o[p] += w * c[p];
    }
  }
}

// Pixel offset of compensation position p in the layer input (strided 1x1).
struct PointwiseGrid {
  int out_h, out_w, stride, in_w;
  std::size_t pixel(std::size_t p) const {
    const int oy = static_cast<int>(p) / out_w, ox = static_cast<int>(p) % out_w;
    return static_cast<std::size_t>(oy * stride) * in_w + static_cast<std::size_t>(ox * stride);
  }
};

PointwiseGrid pointwise_grid(const LayerSpec& l, const Shape& in, const Shape& out) {
  if (l.kind == LayerKind::kLinear) return {1, 1, 1, 1};
  const int h = (in.h - 1) / l.stride + 1, w = (in.w - 1) / l.stride + 1;
  if (h != out.h || w != out.w)
    throw ContractError("layer " + l.name + ": 1x1 compensation output size differs from backbone output");
  return {out.h, out.w, l.stride, in.w};
}

template <typename T>
void comp_forward(const CompLayer<T>& c, const FeatureMap<T>& in, const PointwiseGrid& g, std::size_t in_plane,
                  std::size_t P, FeatureMap<T>& out, std::vector<T>& u, std::vector<T>& w) {
  const int r = c.rank;
  u.assign(static_cast<std::size_t>(r) * P, T(0));
  w.assign(static_cast<std::size_t>(c.c_out) * P, T(0));
  std::vector<T> v(r);
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t pix = g.pixel(p);
    for (int i = 0; i < r; ++i) {
      T acc = 0;
      const T* arow = c.a.data() + static_cast<std::size_t>(i) * c.c_in;
      for (int j = 0; j < c.c_in; ++j) acc += arow[j] * in.data[j * in_plane + pix];
      u[i * P + p] = acc;
      v[i] = c.d_vec[i] * acc;
    }
    for (int o = 0; o < c.c_out; ++o) {
      T acc = 0;
      for (int i = 0; i < r; ++i) acc += c.b[static_cast<std::size_t>(o) * r + i] * v[i];
      w[o * P + p] = acc;
      out.data[o * P + p] += c.b_vec[o] * acc;
    }
  }
}

}  // namespace

template <typename T>
void Gradients<T>::reset(const ModelSpec& spec, const CompensationPlan<T>* plan, bool want_weights) {
  const auto wl = spec.weight_layers();
  weights.assign(want_weights ? wl.size() : 0, {});
  d_vec.assign(wl.size(), {});
  b_vec.assign(wl.size(), {});
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const auto& l = spec.layers[wl[k]];
    if (want_weights) {
      const std::size_t n = l.kind == LayerKind::kConv2d
                                ? static_cast<std::size_t>(l.c_out) * l.c_in * l.kernel * l.kernel
                                : static_cast<std::size_t>(l.c_out) * l.c_in;
      weights[k].weight.assign(n, T(0));
      weights[k].bias.assign(l.c_out, T(0));
    }
    if (plan && (*plan)[k].active) {
      d_vec[k].assign((*plan)[k].rank, T(0));
      b_vec[k].assign((*plan)[k].c_out, T(0));
    }
  }
}

template <typename T>
void Gradients<T>::add(const Gradients& o) {
  auto acc = [](std::vector<T>& a, const std::vector<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc(weights[k].weight, o.weights[k].weight);
    acc(weights[k].bias, o.weights[k].bias);
  }
  for (std::size_t k = 0; k < d_vec.size(); ++k) {
    acc(d_vec[k], o.d_vec[k]);
    acc(b_vec[k], o.b_vec[k]);
  }
}

template <typename T>
void Gradients<T>::scale(T f) {
  auto sc = [f](std::vector<T>& a) {
    for (auto& v : a) v *= f;
  };
  for (auto& w : weights) {
    sc(w.weight);
    sc(w.bias);
  }
  for (auto& v : d_vec) sc(v);
  for (auto& v : b_vec) sc(v);
}

template <typename T>
std::vector<T> forward(const ModelSpec& spec, const NetworkWeights<T>& weights, const CompensationPlan<T>* plan,
                       const ForwardOptions& opts, const FeatureMap<T>& x, Trace<T>& trace) {
  const std::size_t n = spec.layers.size();
  if (!(x.shape == spec.input)) throw ContractError("forward: input shape mismatch");
  if (plan && plan->size() != weights.size()) throw ContractError("forward: compensation plan size mismatch");
  trace.outputs.resize(n);
  trace.inputs.resize(n);
  trace.columns.resize(n);
  trace.comp_u.resize(n);
  trace.comp_w.resize(n);
  std::size_t wi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    const FeatureMap<T>& in = l.input < 0 ? x : trace.outputs[l.input];
    FeatureMap<T>& out = trace.outputs[i];
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kLinear: {
        if (wi >= weights.size()) throw ContractError("forward: too few weight tensors");
        const auto& lw = weights[wi];
        FeatureMap<T>& q = trace.inputs[i];
        q = in;
        if (opts.quantize_activations) fake_quant_activation<T>(std::span<T>(q.data), opts.act_bits);
        Shape os;
        std::size_t kd;
        const T* col;
        if (l.kind == LayerKind::kConv2d) {
          os = conv_output_shape(l, in.shape);
          im2col(q, l, os, trace.columns[i]);
          kd = static_cast<std::size_t>(l.c_in) * l.kernel * l.kernel;
          col = trace.columns[i].data();
        } else {
          os = {l.c_out, 1, 1};
          kd = static_cast<std::size_t>(l.c_in);
          col = q.data.data();
        }
        const std::size_t P = static_cast<std::size_t>(os.h) * os.w;
        if (lw.weight.size() != static_cast<std::size_t>(l.c_out) * kd || lw.bias.size() != std::size_t(l.c_out))
          throw ContractError("forward: weight shape mismatch at layer " + l.name);
        out.shape = os;
        out.data.resize(os.size());
        for (int co = 0; co < l.c_out; ++co) std::fill_n(out.data.data() + co * P, P, lw.bias[co]);
        gemm_acc(lw.weight.data(), col, out.data.data(), l.c_out, kd, P);
        if (plan && (*plan)[wi].active) {
          const auto& c = (*plan)[wi];
          if (c.c_in != l.c_in || c.c_out != l.c_out) throw ContractError("forward: compensation shape mismatch");
          const auto g = pointwise_grid(l, in.shape, os);
          const std::size_t plane = l.kind == LayerKind::kConv2d ? std::size_t(in.shape.h) * in.shape.w : 1;
          comp_forward(c, q, g, plane, P, out, trace.comp_u[i], trace.comp_w[i]);
        }
        ++wi;
        break;
      }
      case LayerKind::kRelu:
        out.shape = in.shape;
        out.data.resize(in.data.size());
        for (std::size_t k = 0; k < in.data.size(); ++k) out.data[k] = in.data[k] > T(0) ? in.data[k] : T(0);
        break;
      case LayerKind::kGlobalAvgPool: {
        const std::size_t plane = static_cast<std::size_t>(in.shape.h) * in.shape.w;
        out.shape = {in.shape.c, 1, 1};
        out.data.resize(in.shape.c);
        for (int c = 0; c < in.shape.c; ++c) {
          T acc = 0;
          for (std::size_t p = 0; p < plane; ++p) acc += in.data[c * plane + p];
          out.data[c] = acc / static_cast<T>(plane);
        }
        break;
      }
      case LayerKind::kResidualAdd: {
        const FeatureMap<T>& sk = l.skip < 0 ? x : trace.outputs[l.skip];
        out = in;
        const int ratio = sk.shape.h / in.shape.h;
        for (int c = 0; c < sk.shape.c; ++c)
          for (int y = 0; y < in.shape.h; ++y)
            for (int xx = 0; xx < in.shape.w; ++xx) out.at(c, y, xx) += sk.at(c, y * ratio, xx * ratio);
        break;
      }
    }
  }
  if (wi != weights.size()) throw ContractError("forward: too many weight tensors");
  return trace.outputs.back().data;
}

template <typename T>
void backward(const ModelSpec& spec, const NetworkWeights<T>& weights, const CompensationPlan<T>* plan,
              Trace<T>& trace, std::span<const T> dlogits, Gradients<T>& grads, bool want_weights) {
  const std::size_t n = spec.layers.size();
  auto& g = trace.grads;
  g.resize(n);
  for (std::size_t i = 0; i < n; ++i) g[i].reset(trace.outputs[i].shape);
  if (dlogits.size() != g.back().data.size()) throw ContractError("backward: logits gradient size mismatch");
  std::copy(dlogits.begin(), dlogits.end(), g.back().data.begin());

  // Map node index -> weight slot.
  std::vector<int> slot(n, -1);
  {
    int k = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (spec.layers[i].has_weights()) slot[i] = k++;
  }
  std::vector<T> dcol;
  for (std::size_t ii = n; ii-- > 0;) {
    const auto& l = spec.layers[ii];
    const FeatureMap<T>& gout = g[ii];
    FeatureMap<T>* gin = l.input < 0 ? nullptr : &g[l.input];
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kLinear: {
        const int k = slot[ii];
        const auto& lw = weights[k];
        const FeatureMap<T>& q = trace.inputs[ii];
        const Shape os = gout.shape;
        const std::size_t P = static_cast<std::size_t>(os.h) * os.w;
        const bool conv = l.kind == LayerKind::kConv2d;
        const std::size_t kd = conv ? static_cast<std::size_t>(l.c_in) * l.kernel * l.kernel : l.c_in;
        const T* col = conv ? trace.columns[ii].data() : q.data.data();
        if (want_weights) {
          auto& gw = grads.weights[k];
          for (int co = 0; co < l.c_out; ++co) {
            const T* go = gout.data.data() + co * P;
            T bsum = 0;
            for (std::size_t p = 0; p < P; ++p) bsum += go[p];
            gw.bias[co] += bsum;
            for (std::size_t kk = 0; kk < kd; ++kk) {
              const T* c = col + kk * P;
              T acc = 0;
              for (std::size_t p = 0; p < P; ++p) acc += go[p] * c[p];
              gw.weight[co * kd + kk] += acc;
            }
          }
        }
        const bool comp = plan && (*plan)[k].active;
        if (comp) {
          const auto& c = (*plan)[k];
          const int r = c.rank;
          const auto& u = trace.comp_u[ii];
          const auto& w = trace.comp_w[ii];
          auto& gd = grads.d_vec[k];
          auto& gb = grads.b_vec[k];
          const auto grid = pointwise_grid(l, q.shape, os);
          const std::size_t plane = conv ? static_cast<std::size_t>(q.shape.h) * q.shape.w : 1;
          std::vector<T> qv(r);
          for (std::size_t p = 0; p < P; ++p) {
            std::fill(qv.begin(), qv.end(), T(0));
            for (int o = 0; o < c.c_out; ++o) {
              const T go = gout.data[o * P + p];
              gb[o] += go * w[o * P + p];
              const T h = c.b_vec[o] * go;
              for (int i = 0; i < r; ++i) qv[i] += c.b[static_cast<std::size_t>(o) * r + i] * h;
            }
            for (int i = 0; i < r; ++i) gd[i] += u[i * P + p] * qv[i];
            if (gin) {
              const std::size_t pix = grid.pixel(p);
              for (int i = 0; i < r; ++i) {
                const T dv = c.d_vec[i] * qv[i];
                if (dv == T(0)) continue;
                const T* arow = c.a.data() + static_cast<std::size_t>(i) * c.c_in;
                for (int j = 0; j < c.c_in; ++j) gin->data[j * plane + pix] += arow[j] * dv;
              }
            }
          }
        }
        if (!gin) break;
        if (conv) {
          dcol.assign(kd * P, T(0));
          for (int co = 0; co < l.c_out; ++co) {
            const T* go = gout.data.data() + co * P;
            for (std::size_t kk = 0; kk < kd; ++kk) {
              const T wv = lw.weight[co * kd + kk];
              if (wv == T(0)) continue;
              T* d = dcol.data() + kk * P;
              for (std::size_t p = 0; p < P; ++p) d[p] += wv * go[p];
            }
          }
          col2im_add(dcol, l, os, *gin);
        } else {
          for (int co = 0; co < l.c_out; ++co) {
            const T go = gout.data[co];
            if (go == T(0)) continue;
            const T* wr = lw.weight.data() + co * kd;
            for (std::size_t kk = 0; kk < kd; ++kk) gin->data[kk] += wr[kk] * go;
          }
        }
        break;
      }
      case LayerKind::kRelu:
        if (!gin) break;
        for (std::size_t k = 0; k < gout.data.size(); ++k)
          if (trace.outputs[ii].data[k] > T(0)) gin->data[k] += gout.data[k];
        break;
      case LayerKind::kGlobalAvgPool: {
        if (!gin) break;
        const std::size_t plane = static_cast<std::size_t>(gin->shape.h) * gin->shape.w;
        for (int c = 0; c < gin->shape.c; ++c) {
          const T v = gout.data[c] / static_cast<T>(plane);
          for (std::size_t p = 0; p < plane; ++p) gin->data[c * plane + p] += v;
        }
        break;
      }
      case LayerKind::kResidualAdd: {
        if (gin)
          for (std::size_t k = 0; k < gout.data.size(); ++k) gin->data[k] += gout.data[k];
        if (l.skip >= 0) {
          FeatureMap<T>& gs = g[l.skip];
          const int ratio = gs.shape.h / gout.shape.h;
          for (int c = 0; c < gs.shape.c; ++c)
            for (int y = 0; y < gout.shape.h; ++y)
              for (int xx = 0; xx < gout.shape.w; ++xx) gs.at(c, y * ratio, xx * ratio) += gout.at(c, y, xx);
        }
        break;
      }
    }
  }
}

template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, std::span<const T> weight, const LayerSpec& layer) {
  if (x.shape.c != layer.c_in) throw ContractError("conv2d: channel mismatch");
  const Shape os = conv_output_shape(layer, x.shape);
  const std::size_t kd = static_cast<std::size_t>(layer.c_in) * layer.kernel * layer.kernel;
  if (weight.size() != kd * layer.c_out) throw ContractError("conv2d: weight size mismatch");
  std::vector<T> col;
  im2col(x, layer, os, col);
  FeatureMap<T> out(os);
  gemm_acc(weight.data(), col.data(), out.data.data(), layer.c_out, kd, static_cast<std::size_t>(os.h) * os.w);
  return out;
}

template <typename T>
NetworkWeights<T> convert_weights(const NetworkWeights<double>& w) {
  NetworkWeights<T> out(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    out[k].weight.assign(w[k].weight.begin(), w[k].weight.end());
    out[k].bias.assign(w[k].bias.begin(), w[k].bias.end());
  }
  return out;
}

#define DRIFTCOMP_INSTANTIATE(T)                                                                               \
  template CompensationPlan<T> make_plan<T>(const ModelSpec&, const SharedProjections&,                       \
                                            const ScalingVectorSet&);                                         \
  template struct Gradients<T>;                                                                                \
  template std::vector<T> forward<T>(const ModelSpec&, const NetworkWeights<T>&, const CompensationPlan<T>*,   \
                                     const ForwardOptions&, const FeatureMap<T>&, Trace<T>&);                  \
  template void backward<T>(const ModelSpec&, const NetworkWeights<T>&, const CompensationPlan<T>*, Trace<T>&, \
                            std::span<const T>, Gradients<T>&, bool);                                          \
  template FeatureMap<T> conv2d<T>(const FeatureMap<T>&, std::span<const T>, const LayerSpec&);                \
  template NetworkWeights<T> convert_weights<T>(const NetworkWeights<double>&);

DRIFTCOMP_INSTANTIATE(float)
DRIFTCOMP_INSTANTIATE(double)

}  // namespace driftcomp
