#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftcomp/backbone.hpp"
#include "driftcomp/compensation.hpp"

namespace driftcomp {

// Backbone checkpoint (little-endian):
//   "DCBK" u32 version u32 manifest_len manifest(JSON: model, quant, provenance)
//   u32 n_layers, per layer:
//     u16 name_len name u8 bits u8 ndim u32 dims[ndim]
//     u32 n_scales f64 scales u32 n_codes i8 codes u32 n_bias f64 bias
//   u32 crc32 of all preceding bytes
std::vector<std::uint8_t> encode_backbone(const Backbone& backbone, const std::string& provenance_json = "{}");
Backbone decode_backbone(const std::vector<std::uint8_t>& bytes);
void save_backbone(const std::string& path, const Backbone& backbone, const std::string& provenance_json = "{}");
Backbone load_backbone(const std::string& path);

// Compensation archive (little-endian):
//   "DCCA" u32 version u32 rank u32 d_max_in u32 d_max_out u64 init_seed
//   f64 a_max[rank*d_max_in] f64 b_max[d_max_out*rank]
//   u32 n_sets, per set: i32 set_id f64 drift_time u32 n_layers,
//     per layer: i32 layer u32 r f64 d_vec[r] u32 c_out f64 b_vec[c_out]
//   u32 crc32 of all preceding bytes
struct CompensationArchive {
  SharedProjections projections;
  std::vector<ScalingVectorSet> sets;
};

std::vector<std::uint8_t> encode_archive(const CompensationArchive& archive);
CompensationArchive decode_archive(const std::vector<std::uint8_t>& bytes);
void save_archive(const std::string& path, const CompensationArchive& archive);
CompensationArchive load_archive(const std::string& path);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace driftcomp
