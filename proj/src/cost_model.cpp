#include "driftcomp/cost_model.hpp"

#include <cmath>
#include <cstdio>

#include "driftcomp/errors.hpp"

namespace driftcomp {

void HardwareProfile::validate() const {
  if (!(tops_per_w_rram > 0 && tops_per_w_sram > 0 && density_rram > 0 && density_sram > 0))
    throw ConfigError("hardware profile values must be > 0");
}

double energy_estimate(double ops_rram, double ops_sram, const HardwareProfile& p) {
  if (ops_rram < 0 || ops_sram < 0) throw ConfigError("energy_estimate: negative op count");
  return ops_rram / (p.tops_per_w_rram * 1e12) + ops_sram / (p.tops_per_w_sram * 1e12);
}

double area_estimate(double bits_rram, double bits_sram, const HardwareProfile& p) {
  if (bits_rram < 0 || bits_sram < 0) throw ConfigError("area_estimate: negative bit count");
  return bits_rram / (p.density_rram * 1e6) + bits_sram / (p.density_sram * 1e6);
}

OpsCount count_model_ops(const ModelSpec& spec, CompensationVariant variant, int rank) {
  if (variant != CompensationVariant::kNone && rank < 1) throw ConfigError("count_model_ops: rank must be >= 1");
  const auto shapes = spec.infer_shapes();
  OpsCount ops;
  const std::uint64_t r = rank;
  for (int i : spec.weight_layers()) {
    const auto& l = spec.layers[i];
    const std::uint64_t P = static_cast<std::uint64_t>(shapes[i].h) * shapes[i].w;
    const std::uint64_t K = l.kind == LayerKind::kConv2d ? l.kernel : 1;
    const std::uint64_t cin = l.c_in, cout = l.c_out;
    ops.rram += 2 * K * K * cin * cout * P;
    if (!l.compensated) continue;
    switch (variant) {
      case CompensationVariant::kNone:
        break;
      case CompensationVariant::kLora:
        ops.sram += 2 * r * K * K * (cin + cout) * P;
        break;
      case CompensationVariant::kVera:
        ops.sram += 2 * r * K * K * (cin + cout) * P + (r * K + cout * K) * P;
        break;
      case CompensationVariant::kVeraPlus:
        ops.sram += 2 * r * (cin + cout) * P + (r + cout) * P;
        break;
    }
  }
  return ops;
}

StorageReport storage_report(CompensationVariant variant, const ModelSpec& spec, int rank, int num_sets,
                             int bits_comp) {
  if (bits_comp != 4 && bits_comp != 8 && bits_comp != 16 && bits_comp != 32)
    throw ConfigError("storage_report: bits_comp must be 4, 8, 16 or 32");
  const auto dims = compensated_dims(spec);
  const auto pc = count_compensation_params(variant, dims, rank, num_sets);
  StorageReport s;
  s.shared_elements = pc.shared;
  s.per_set_elements = pc.per_set;
  s.num_sets = pc.num_sets;
  s.bits = bits_comp;
  const double bytes_per = bits_comp / 8.0;
  s.storage_bytes = static_cast<double>(pc.total()) * bytes_per;
  s.movement_bytes = pc.num_sets == 0 ? 0.0 : static_cast<double>(pc.shared + pc.per_set) * bytes_per;
  return s;
}

CostReport cost_report(const ModelSpec& spec, CompensationVariant variant, int rank, int num_sets, int bits_comp,
                       const HardwareProfile& profile) {
  profile.validate();
  CostReport c;
  c.variant = variant;
  c.rank = rank;
  c.num_sets = variant == CompensationVariant::kNone ? 0 : num_sets;
  c.bits_comp = bits_comp;
  const auto ops = count_model_ops(spec, variant, rank);
  c.ops_rram = ops.rram;
  c.ops_sram = ops.sram;
  c.energy_j = energy_estimate(static_cast<double>(ops.rram), static_cast<double>(ops.sram), profile);
  const double e0 = energy_estimate(static_cast<double>(ops.rram), 0.0, profile);
  c.params_backbone = spec.weight_count();
  const auto st = storage_report(variant, spec, rank, c.num_sets, bits_comp);
  c.params_comp = st.shared_elements + st.num_sets * st.per_set_elements;
  c.params_overhead_pct = 100.0 * static_cast<double>(c.params_comp) / static_cast<double>(c.params_backbone);
  c.ops_overhead_pct = 100.0 * static_cast<double>(c.ops_sram) / static_cast<double>(c.ops_rram);
  c.energy_overhead_pct = 100.0 * (c.energy_j - e0) / e0;
  c.storage_comp_bytes = st.storage_bytes;
  c.weight_movement_bytes = st.movement_bytes;
  c.area_mm2 = area_estimate(0.0, st.storage_bytes * 8.0, profile);
  return c;
}

std::string cost_csv_header() {
  return "variant,r,num_sets,ops_rram,ops_sram,energy_j,params_pct,ops_pct,storage_kb,movement_kb,area_mm2";
}

std::string format_cost_row(const CostReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%llu,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", to_string(r.variant).c_str(),
                r.rank, r.num_sets, static_cast<unsigned long long>(r.ops_rram),
                static_cast<unsigned long long>(r.ops_sram), r.energy_j, r.params_overhead_pct, r.ops_overhead_pct,
                r.storage_comp_bytes / kBytesPerKB, r.weight_movement_bytes / kBytesPerKB, r.area_mm2);
  return buf;
}

}  // namespace driftcomp
