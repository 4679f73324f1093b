#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "driftcomp/model.hpp"
#include "driftcomp/tensor.hpp"

namespace driftcomp {

enum class CompensationVariant { kNone, kLora, kVera, kVeraPlus };

std::string to_string(CompensationVariant v);
CompensationVariant parse_variant(const std::string& s);

struct CompensationConfig {
  CompensationVariant variant = CompensationVariant::kVeraPlus;
  int rank = 1;
  // Upper rank the shared projections are drawn with; sets use a prefix of
  // it. Only the strict scheduling mode trains sets above `rank`.
  int max_rank = 1;

  void validate() const;
};

// Non-owning row-major matrix view with an arbitrary row stride.
struct MatrixView {
  const double* data = nullptr;
  int rows = 0;
  int cols = 0;
  int row_stride = 0;

  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * row_stride + j]; }
};

// Global projections A_max (rank x d_max_in) and B_max (d_max_out x rank),
// shared by every layer and every drift level. Frozen after construction.
struct SharedProjections {
  int rank = 0;
  int d_max_in = 0;
  int d_max_out = 0;
  std::uint64_t init_seed = 0;
  std::vector<double> a_max;  // rank x d_max_in, row-major
  std::vector<double> b_max;  // d_max_out x rank, row-major

  MatrixView a_view() const { return {a_max.data(), rank, d_max_in, d_max_in}; }
  MatrixView b_view() const { return {b_max.data(), d_max_out, rank, rank}; }
};

// Entries are zero-mean uniform with variance 1/d_max_in (A) and 1/rank (B).
SharedProjections init_shared_projections(int rank, int d_max_in, int d_max_out, std::uint64_t seed);

// Sized to cover every compensated layer of `spec`.
SharedProjections init_shared_projections(const ModelSpec& spec, int rank, std::uint64_t seed);

struct ProjectionSlice {
  MatrixView a;  // rank x c_in: first c_in columns (and first `rank` rows) of A_max
  MatrixView b;  // c_out x rank: first c_out rows (and first `rank` columns) of B_max
};

// `rank` <= proj.rank selects a prefix of the projection rank; 0 means all.
ProjectionSlice slice_projections(const SharedProjections& proj, int c_in, int c_out, int rank = 0);

struct LayerScaling {
  int layer = -1;  // node index in the ModelSpec
  std::vector<double> d_vec;  // length rank
  std::vector<double> b_vec;  // length c_out
};

// Drift-level specific vectors for every compensated layer.
struct ScalingVectorSet {
  int set_id = 0;
  double drift_time = 1.0;
  std::vector<LayerScaling> layers;

  int rank() const { return layers.empty() ? 0 : static_cast<int>(layers.front().d_vec.size()); }
  const LayerScaling* find(int layer) const;
  std::size_t parameter_count() const;
};

// d_vec = d_init, b_vec = 0: the branch starts as an exact zero function.
ScalingVectorSet make_initial_set(const ModelSpec& spec, int rank, int set_id, double drift_time,
                                  double d_init = 0.1);

// Throws ContractError when the set does not match the compensated layers.
void check_set_matches(const ModelSpec& spec, const SharedProjections& proj, const ScalingVectorSet& set);

// delta_y = b_vec .* (B_R (d_vec .* (A_R x)))
std::vector<double> vera_plus_forward(std::span<const double> x, const ProjectionSlice& slice,
                                      std::span<const double> d_vec, std::span<const double> b_vec);

// The same branch as a strided 1x1 convolution over channels. Output spatial
// size must equal the backbone conv's output size.
FeatureMap<double> pointwise_conv_compensation(const FeatureMap<double>& x, const LayerSpec& layer,
                                               const LayerScaling& scaling,
                                               const SharedProjections& proj);

// Dense equivalent diag(b) B_R diag(d) A_R, c_out x c_in row-major.
std::vector<double> dense_compensation_matrix(const ProjectionSlice& slice, std::span<const double> d_vec,
                                              std::span<const double> b_vec);

// LoRA baseline in the K x K form: A is (r*K) x (c_in*K), B is (c_out*K) x (r*K).
struct LoRAPair {
  int rank = 1;
  int kernel = 1;
  int c_in = 0;
  int c_out = 0;
  std::vector<double> a;
  std::vector<double> b;

  void validate() const;
};

LoRAPair make_lora_pair(const LayerSpec& layer, int rank);

// B * A reinterpreted as a c_out x c_in x K x K kernel.
std::vector<double> lora_delta_kernel(const LoRAPair& pair);

// Linear layers: B (A x). Conv layers: convolution with the delta kernel
// under the layer's stride and padding.
std::vector<double> lora_forward(std::span<const double> x, const LoRAPair& pair);
FeatureMap<double> lora_forward(const FeatureMap<double>& x, const LayerSpec& layer, const LoRAPair& pair);

// `sets` ordered by drift_time. Returns the set_id with the largest
// drift_time <= t.
int select_active_set(double t, std::span<const ScalingVectorSet> sets);
std::size_t select_active_index(double t, std::span<const double> drift_times);

struct LayerDims {
  int c_in = 0;
  int c_out = 0;
  int kernel = 1;
  auto operator<=>(const LayerDims&) const = default;
};

std::vector<LayerDims> compensated_dims(const ModelSpec& spec);

struct ParamCount {
  std::uint64_t shared = 0;
  std::uint64_t per_set = 0;
  std::uint64_t num_sets = 0;
  std::uint64_t total() const { return shared + num_sets * per_set; }
};

// lora:      per set sum r K^2 (C_in + C_out); nothing shared.
// vera:      shared r K^2 (C_in + C_out) once per distinct (C_in, C_out, K);
//            per set sum (r K + C_out K).
// vera_plus: shared r (d_max_in + d_max_out); per set sum (r + C_out).
ParamCount count_compensation_params(CompensationVariant variant, std::span<const LayerDims> layers, int rank,
                                     int num_sets);

}  // namespace driftcomp
