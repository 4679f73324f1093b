#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "driftcomp/compensation.hpp"
#include "driftcomp/model.hpp"

namespace driftcomp {

// TOPS/W is read as 1e12 ops per joule; densities are in 1e6 bits per mm^2.
struct HardwareProfile {
  double tops_per_w_rram = 209.0;
  double tops_per_w_sram = 89.0;
  double density_rram = 2.53;
  double density_sram = 0.31;

  void validate() const;
};

// E = ops_rram / (tops_rram * 1e12) + ops_sram / (tops_sram * 1e12)
double energy_estimate(double ops_rram, double ops_sram, const HardwareProfile& profile = {});

// mm^2; marked approximate in reports.
double area_estimate(double storage_bits_rram, double storage_bits_sram, const HardwareProfile& profile = {});

struct OpsCount {
  std::uint64_t rram = 0;  // backbone: 2 ops per MAC
  std::uint64_t sram = 0;  // compensation: 2 ops per MAC, 1 op per Hadamard element
};

// Per inference of one input. LoRA and VeRA use the full K x K form,
// VeRA+ the strided 1x1 form.
OpsCount count_model_ops(const ModelSpec& spec, CompensationVariant variant, int rank);

struct StorageReport {
  std::uint64_t shared_elements = 0;
  std::uint64_t per_set_elements = 0;
  std::uint64_t num_sets = 0;
  int bits = 16;
  double storage_bytes = 0.0;   // (shared + num_sets * per_set) * bits / 8
  double movement_bytes = 0.0;  // first activation: shared + one set
};

// bits_comp in {4, 8, 16, 32}.
StorageReport storage_report(CompensationVariant variant, const ModelSpec& spec, int rank, int num_sets,
                             int bits_comp);

struct CostReport {
  CompensationVariant variant = CompensationVariant::kNone;
  int rank = 0;
  int num_sets = 0;
  int bits_comp = 16;
  std::uint64_t ops_rram = 0;
  std::uint64_t ops_sram = 0;
  double energy_j = 0.0;
  std::uint64_t params_backbone = 0;
  std::uint64_t params_comp = 0;
  double params_overhead_pct = 0.0;
  double ops_overhead_pct = 0.0;
  double energy_overhead_pct = 0.0;
  double storage_comp_bytes = 0.0;
  double weight_movement_bytes = 0.0;
  double area_mm2 = 0.0;  // compensation storage in SRAM
};

inline constexpr double kBytesPerKB = 1024.0;

CostReport cost_report(const ModelSpec& spec, CompensationVariant variant, int rank, int num_sets, int bits_comp,
                       const HardwareProfile& profile = {});

std::string cost_csv_header();
std::string format_cost_row(const CostReport& r);

}  // namespace driftcomp
