#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftcomp/model.hpp"
#include "driftcomp/tensor.hpp"

namespace driftcomp {

enum class Split { kTrain, kEval };

// Images are C x H x W planar with pixels in [0, 1].
struct LabeledDataset {
  Shape shape;
  int classes = 0;
  Split split = Split::kTrain;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  void validate() const;

  template <typename T>
  void image(std::size_t i, FeatureMap<T>& out) const {
    out.shape = shape;
    const std::size_t n = shape.size();
    out.data.assign(pixels.begin() + i * n, pixels.begin() + (i + 1) * n);
  }
};

// Counts, shape and class count of a binary image file.
struct DatasetMeta {
  Shape shape{3, 32, 32};
  int classes = 10;
  long long count = -1;  // -1: not checked

  std::size_t record_size() const { return 1 + shape.size(); }
};

DatasetMeta parse_dataset_meta(const std::string& json_text);
std::string format_dataset_meta(const DatasetMeta& meta);

// Fixed-size records: one label byte then C*H*W pixel bytes (planar,
// row-major). Pixels are scaled by 1/255.
LabeledDataset parse_binary_images(const std::vector<std::uint8_t>& bytes, const DatasetMeta& meta,
                                   Split split = Split::kTrain);
LabeledDataset load_binary_images(const std::string& path, const DatasetMeta& meta, Split split = Split::kTrain);
std::vector<std::uint8_t> encode_binary_images(const LabeledDataset& data);

struct SyntheticConfig {
  int classes = 10;
  std::size_t n = 3000;  // train + eval
  Shape shape{3, 16, 16};
  double noise = 0.3;
  double eval_fraction = 0.2;
  int blobs_per_class = 3;
  std::uint64_t seed = 1;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset eval;
};

// Class-conditional Gaussian-blob images: each class has a fixed mean
// pattern (a few colored blobs on a grey background), samples add i.i.d.
// pixel noise. Balanced; deterministic under `seed`.
DatasetSplit make_synthetic_dataset(const SyntheticConfig& cfg);

}  // namespace driftcomp
