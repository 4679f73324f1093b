#include "driftcomp/compensation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "driftcomp/errors.hpp"
#include "driftcomp/network.hpp"
#include "driftcomp/random.hpp"

namespace driftcomp {

std::string to_string(CompensationVariant v) {
  switch (v) {
    case CompensationVariant::kNone: return "none";
    case CompensationVariant::kLora: return "lora";
    case CompensationVariant::kVera: return "vera";
    case CompensationVariant::kVeraPlus: return "vera_plus";
  }
  return "?";
}

CompensationVariant parse_variant(const std::string& s) {
  for (auto v : {CompensationVariant::kNone, CompensationVariant::kLora, CompensationVariant::kVera,
                 CompensationVariant::kVeraPlus})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown compensation variant: " + s);
}

void CompensationConfig::validate() const {
  if (rank < 1) throw ConfigError("compensation rank must be >= 1");
  if (max_rank < rank) throw ConfigError("compensation max_rank must be >= rank");
}

SharedProjections init_shared_projections(int rank, int d_max_in, int d_max_out, std::uint64_t seed) {
  if (rank <= 0 || d_max_in <= 0 || d_max_out <= 0) throw ConfigError("projection dimensions must be positive");
  SharedProjections p;
  p.rank = rank;
  p.d_max_in = d_max_in;
  p.d_max_out = d_max_out;
  p.init_seed = seed;
  Rng rng(derive_seed(seed, {tag(Stream::kProjections)}));
  // U(-a, a) has variance a^2 / 3.
  std::uniform_real_distribution<double> ua(-std::sqrt(3.0 / d_max_in), std::sqrt(3.0 / d_max_in));
  std::uniform_real_distribution<double> ub(-std::sqrt(3.0 / rank), std::sqrt(3.0 / rank));
  p.a_max.resize(static_cast<std::size_t>(rank) * d_max_in);
  p.b_max.resize(static_cast<std::size_t>(d_max_out) * rank);
  for (auto& v : p.a_max) v = ua(rng);
  for (auto& v : p.b_max) v = ub(rng);
  return p;
}

SharedProjections init_shared_projections(const ModelSpec& spec, int rank, std::uint64_t seed) {
  int din = 0, dout = 0;
  for (int i : spec.compensated_layers()) {
    din = std::max(din, spec.layers[i].c_in);
    dout = std::max(dout, spec.layers[i].c_out);
  }
  if (din == 0) throw ConfigError("model has no compensated layers");
  return init_shared_projections(rank, din, dout, seed);
}

ProjectionSlice slice_projections(const SharedProjections& proj, int c_in, int c_out, int rank) {
  if (rank == 0) rank = proj.rank;
  if (c_in <= 0 || c_out <= 0 || c_in > proj.d_max_in || c_out > proj.d_max_out)
    throw ConfigError("slice_projections: layer dims (" + std::to_string(c_in) + ", " + std::to_string(c_out) +
                      ") exceed projections (" + std::to_string(proj.d_max_in) + ", " +
                      std::to_string(proj.d_max_out) + ")");
  if (rank < 1 || rank > proj.rank) throw ConfigError("slice_projections: rank exceeds projection rank");
  return {{proj.a_max.data(), rank, c_in, proj.d_max_in}, {proj.b_max.data(), c_out, rank, proj.rank}};
}

const LayerScaling* ScalingVectorSet::find(int layer) const {
  for (const auto& l : layers)
    if (l.layer == layer) return &l;
  return nullptr;
}

std::size_t ScalingVectorSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.d_vec.size() + l.b_vec.size();
  return n;
}

ScalingVectorSet make_initial_set(const ModelSpec& spec, int rank, int set_id, double drift_time, double d_init) {
  ScalingVectorSet s;
  s.set_id = set_id;
  s.drift_time = drift_time;
  for (int i : spec.compensated_layers())
    s.layers.push_back({i, std::vector<double>(rank, d_init), std::vector<double>(spec.layers[i].c_out, 0.0)});
  return s;
}

void check_set_matches(const ModelSpec& spec, const SharedProjections& proj, const ScalingVectorSet& set) {
  const auto comp = spec.compensated_layers();
  if (comp.size() != set.layers.size())
    throw ContractError("scaling set has " + std::to_string(set.layers.size()) + " layers, model compensates " +
                        std::to_string(comp.size()));
  for (std::size_t k = 0; k < comp.size(); ++k) {
    const auto& s = set.layers[k];
    const auto& l = spec.layers[comp[k]];
    if (s.layer != comp[k]) throw ContractError("scaling set layer order does not match the model");
    if (s.d_vec.empty() || static_cast<int>(s.d_vec.size()) > proj.rank)
      throw ContractError("scaling set rank exceeds projection rank at layer " + l.name);
    if (s.d_vec.size() != set.layers.front().d_vec.size())
      throw ContractError("scaling set mixes ranks");
    if (static_cast<int>(s.b_vec.size()) != l.c_out)
      throw ContractError("scaling set b_vec length mismatch at layer " + l.name);
    if (l.c_in > proj.d_max_in || l.c_out > proj.d_max_out)
      throw ContractError("projections too small for layer " + l.name);
  }
}

std::vector<double> vera_plus_forward(std::span<const double> x, const ProjectionSlice& s,
                                      std::span<const double> d_vec, std::span<const double> b_vec) {
  const int r = s.a.rows;
  if (static_cast<int>(x.size()) != s.a.cols || static_cast<int>(d_vec.size()) != r ||
      static_cast<int>(b_vec.size()) != s.b.rows || s.b.cols != r)
    throw ContractError("vera_plus_forward: shape mismatch");
  std::vector<double> v(r);
  for (int i = 0; i < r; ++i) {
    double acc = 0;
    for (int j = 0; j < s.a.cols; ++j) acc += s.a(i, j) * x[j];
    v[i] = d_vec[i] * acc;
  }
  std::vector<double> y(s.b.rows);
  for (int o = 0; o < s.b.rows; ++o) {
    double acc = 0;
    for (int i = 0; i < r; ++i) acc += s.b(o, i) * v[i];
    y[o] = b_vec[o] * acc;
  }
  return y;
}

FeatureMap<double> pointwise_conv_compensation(const FeatureMap<double>& x, const LayerSpec& layer,
                                               const LayerScaling& scaling, const SharedProjections& proj) {
  if (layer.kind != LayerKind::kConv2d) throw ContractError("pointwise_conv_compensation: layer is not a conv");
  if (x.shape.c != layer.c_in) throw ContractError("pointwise_conv_compensation: channel mismatch");
  const Shape backbone = conv_output_shape(layer, x.shape);
  const Shape os{layer.c_out, (x.shape.h - 1) / layer.stride + 1, (x.shape.w - 1) / layer.stride + 1};
  if (os != backbone) throw ContractError("pointwise_conv_compensation: spatial size differs from backbone output");
  const auto slice = slice_projections(proj, layer.c_in, layer.c_out, static_cast<int>(scaling.d_vec.size()));
  FeatureMap<double> out(os);
  std::vector<double> v(layer.c_in);
  for (int y = 0; y < os.h; ++y)
    for (int xx = 0; xx < os.w; ++xx) {
      for (int c = 0; c < layer.c_in; ++c) v[c] = x.at(c, y * layer.stride, xx * layer.stride);
      const auto dy = vera_plus_forward(v, slice, scaling.d_vec, scaling.b_vec);
      for (int c = 0; c < layer.c_out; ++c) out.at(c, y, xx) = dy[c];
    }
  return out;
}

std::vector<double> dense_compensation_matrix(const ProjectionSlice& s, std::span<const double> d_vec,
                                              std::span<const double> b_vec) {
  const int r = s.a.rows, cin = s.a.cols, cout = s.b.rows;
  std::vector<double> m(static_cast<std::size_t>(cout) * cin, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int j = 0; j < cin; ++j) {
      double acc = 0;
      for (int i = 0; i < r; ++i) acc += s.b(o, i) * d_vec[i] * s.a(i, j);
      m[o * cin + j] = b_vec[o] * acc;
    }
  return m;
}

void LoRAPair::validate() const {
  if (rank < 1 || kernel < 1 || c_in < 1 || c_out < 1) throw ContractError("LoRA pair dimensions must be positive");
  if (a.size() != std::size_t(rank) * kernel * c_in * kernel) throw ContractError("LoRA A has wrong size");
  if (b.size() != std::size_t(c_out) * kernel * rank * kernel) throw ContractError("LoRA B has wrong size");
}

LoRAPair make_lora_pair(const LayerSpec& layer, int rank) {
  LoRAPair p;
  p.rank = rank;
  p.kernel = layer.kind == LayerKind::kConv2d ? layer.kernel : 1;
  p.c_in = layer.c_in;
  p.c_out = layer.c_out;
  p.a.assign(std::size_t(rank) * p.kernel * p.c_in * p.kernel, 0.0);
  p.b.assign(std::size_t(p.c_out) * p.kernel * rank * p.kernel, 0.0);
  return p;
}

std::vector<double> lora_delta_kernel(const LoRAPair& p) {
  p.validate();
  const std::size_t rk = std::size_t(p.rank) * p.kernel;
  const std::size_t rows = std::size_t(p.c_out) * p.kernel, cols = std::size_t(p.c_in) * p.kernel;
  std::vector<double> ba(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < rk; ++k) {
      const double bv = p.b[i * rk + k];
      if (bv == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) ba[i * cols + j] += bv * p.a[k * cols + j];
    }
  return ba;  // flat buffer reinterpreted as [c_out][c_in][K][K]
}

std::vector<double> lora_forward(std::span<const double> x, const LoRAPair& p) {
  p.validate();
  if (p.kernel != 1) throw ContractError("lora_forward: vector form requires K = 1");
  if (static_cast<int>(x.size()) != p.c_in) throw ContractError("lora_forward: input size mismatch");
  std::vector<double> ax(p.rank, 0.0);
  for (int i = 0; i < p.rank; ++i)
    for (int j = 0; j < p.c_in; ++j) ax[i] += p.a[std::size_t(i) * p.c_in + j] * x[j];
  std::vector<double> y(p.c_out, 0.0);
  for (int o = 0; o < p.c_out; ++o)
    for (int i = 0; i < p.rank; ++i) y[o] += p.b[std::size_t(o) * p.rank + i] * ax[i];
  return y;
}

FeatureMap<double> lora_forward(const FeatureMap<double>& x, const LayerSpec& layer, const LoRAPair& p) {
  if (layer.kind != LayerKind::kConv2d || layer.kernel != p.kernel || layer.c_in != p.c_in || layer.c_out != p.c_out)
    throw ContractError("lora_forward: pair does not match layer");
  const auto kernel = lora_delta_kernel(p);
  return conv2d<double>(x, kernel, layer);
}

std::size_t select_active_index(double t, std::span<const double> times) {
  if (times.empty()) throw ContractError("select_active_set: empty schedule");
  if (t < times.front()) throw DomainError("select_active_set: t precedes the first drift point");
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  return static_cast<std::size_t>(it - times.begin()) - 1;
}

int select_active_set(double t, std::span<const ScalingVectorSet> sets) {
  std::vector<double> times;
  times.reserve(sets.size());
  for (const auto& s : sets) times.push_back(s.drift_time);
  return sets[select_active_index(t, times)].set_id;
}

std::vector<LayerDims> compensated_dims(const ModelSpec& spec) {
  std::vector<LayerDims> dims;
  for (int i : spec.compensated_layers()) {
    const auto& l = spec.layers[i];
    dims.push_back({l.c_in, l.c_out, l.kind == LayerKind::kConv2d ? l.kernel : 1});
  }
  return dims;
}

ParamCount count_compensation_params(CompensationVariant variant, std::span<const LayerDims> layers, int rank,
                                     int num_sets) {
  if (rank < 1 || num_sets < 0) throw ConfigError("count_compensation_params: rank >= 1 and num_sets >= 0");
  ParamCount c;
  c.num_sets = static_cast<std::uint64_t>(num_sets);
  const std::uint64_t r = rank;
  switch (variant) {
    case CompensationVariant::kNone:
      c.num_sets = 0;
      break;
    case CompensationVariant::kLora:
      for (const auto& l : layers) c.per_set += r * l.kernel * l.kernel * std::uint64_t(l.c_in + l.c_out);
      break;
    case CompensationVariant::kVera: {
      std::set<LayerDims> distinct(layers.begin(), layers.end());
      for (const auto& l : distinct) c.shared += r * l.kernel * l.kernel * std::uint64_t(l.c_in + l.c_out);
      for (const auto& l : layers) c.per_set += r * l.kernel + std::uint64_t(l.c_out) * l.kernel;
      break;
    }
    case CompensationVariant::kVeraPlus: {
      std::uint64_t din = 0, dout = 0;
      for (const auto& l : layers) {
        din = std::max<std::uint64_t>(din, l.c_in);
        dout = std::max<std::uint64_t>(dout, l.c_out);
        c.per_set += r + l.c_out;
      }
      c.shared = r * din + dout * r;
      break;
    }
  }
  if (layers.empty()) c.shared = 0;
  return c;
}

}  // namespace driftcomp
