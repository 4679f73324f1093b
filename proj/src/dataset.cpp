#include "driftcomp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <random>

#include "driftcomp/errors.hpp"
#include "driftcomp/random.hpp"

namespace driftcomp {

void LabeledDataset::validate() const {
  if (pixels.size() != labels.size() * shape.size()) throw ContractError("dataset: pixel count mismatch");
  for (int l : labels)
    if (l < 0 || l >= classes) throw ContractError("dataset: label out of range");
}

DatasetMeta parse_dataset_meta(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("dataset meta: ") + e.what(), static_cast<long long>(e.byte));
  }
  DatasetMeta m;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "shape" && it.key() != "classes" && it.key() != "count")
      throw ConfigError("dataset meta: unknown key '" + it.key() + "'");
  try {
    const auto s = j.at("shape");
    if (!s.is_array() || s.size() != 3) throw FormatError("dataset meta: shape must be [C,H,W]");
    m.shape = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
    m.classes = j.at("classes").get<int>();
    m.count = j.value("count", -1LL);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset meta: ") + e.what());
  }
  if (m.shape.c <= 0 || m.shape.h <= 0 || m.shape.w <= 0 || m.classes <= 0 || m.classes > 256)
    throw ConfigError("dataset meta: invalid shape or class count");
  return m;
}

std::string format_dataset_meta(const DatasetMeta& m) {
  nlohmann::ordered_json j;
  j["shape"] = {m.shape.c, m.shape.h, m.shape.w};
  j["classes"] = m.classes;
  j["count"] = m.count;
  return j.dump(2);
}

LabeledDataset parse_binary_images(const std::vector<std::uint8_t>& bytes, const DatasetMeta& meta, Split split) {
  const std::size_t rec = meta.record_size();
  if (bytes.size() % rec != 0)
    throw FormatError("binary images: length " + std::to_string(bytes.size()) +
                          " is not a multiple of the record size " + std::to_string(rec),
                      static_cast<long long>(bytes.size() - bytes.size() % rec));
  const std::size_t n = bytes.size() / rec;
  if (meta.count >= 0 && static_cast<long long>(n) != meta.count)
    throw FormatError("binary images: expected " + std::to_string(meta.count) + " records, found " +
                      std::to_string(n));
  LabeledDataset d;
  d.shape = meta.shape;
  d.classes = meta.classes;
  d.split = split;
  d.labels.resize(n);
  d.pixels.resize(n * meta.shape.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * rec;
    const int label = bytes[off];
    if (label >= meta.classes)
      throw FormatError("binary images: label " + std::to_string(label) + " >= class count " +
                            std::to_string(meta.classes),
                        static_cast<long long>(off));
    d.labels[i] = label;
    for (std::size_t p = 0; p < meta.shape.size(); ++p) d.pixels[i * meta.shape.size() + p] = bytes[off + 1 + p] / 255.0;
  }
  return d;
}

LabeledDataset load_binary_images(const std::string& path, const DatasetMeta& meta, Split split) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open image file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return parse_binary_images(bytes, meta, split);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_binary_images(const LabeledDataset& d) {
  d.validate();
  if (d.classes > 256) throw ConfigError("binary images: at most 256 classes");
  const std::size_t n = d.shape.size();
  std::vector<std::uint8_t> out;
  out.reserve(d.size() * (n + 1));
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(d.labels[i]));
    for (std::size_t p = 0; p < n; ++p)
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(d.pixels[i * n + p], 0.0, 1.0) * 255.0)));
  }
  return out;
}

DatasetSplit make_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.classes < 1 || cfg.n < static_cast<std::size_t>(cfg.classes))
    throw ConfigError("synthetic dataset: need n >= classes >= 1");
  if (cfg.noise < 0) throw ConfigError("synthetic dataset: noise must be >= 0");
  if (!(cfg.eval_fraction > 0 && cfg.eval_fraction < 1)) throw ConfigError("synthetic dataset: eval_fraction in (0,1)");
  const Shape s = cfg.shape;
  const std::size_t npx = s.size();
  Rng rng(derive_seed(cfg.seed, {tag(Stream::kDataset)}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> means(cfg.classes, std::vector<double>(npx, 0.5));
  for (int c = 0; c < cfg.classes; ++c) {
    for (int b = 0; b < cfg.blobs_per_class; ++b) {
      const double cy = u01(rng) * (s.h - 1), cx = u01(rng) * (s.w - 1);
      const double radius = (0.12 + 0.15 * u01(rng)) * std::min(s.h, s.w);
      const double amp = 0.25 + 0.2 * u01(rng);
      std::vector<double> color(s.c);
      for (auto& v : color) v = 2 * u01(rng) - 1;
      for (int ch = 0; ch < s.c; ++ch)
        for (int y = 0; y < s.h; ++y)
          for (int x = 0; x < s.w; ++x) {
            const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            means[c][(static_cast<std::size_t>(ch) * s.h + y) * s.w + x] +=
                amp * color[ch] * std::exp(-r2 / (2 * radius * radius));
          }
    }
  }

  std::size_t n_eval = static_cast<std::size_t>(std::lround(cfg.n * cfg.eval_fraction));
  n_eval = std::max<std::size_t>(cfg.classes, n_eval - n_eval % cfg.classes);
  if (n_eval >= cfg.n) throw ConfigError("synthetic dataset: eval split leaves no training data");
  DatasetSplit out;
  for (auto* d : {&out.train, &out.eval}) {
    d->shape = s;
    d->classes = cfg.classes;
  }
  out.eval.split = Split::kEval;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const int label = static_cast<int>(i % cfg.classes);
    LabeledDataset& d = i < cfg.n - n_eval ? out.train : out.eval;
    d.labels.push_back(label);
    for (std::size_t p = 0; p < npx; ++p)
      d.pixels.push_back(std::clamp(means[label][p] + cfg.noise * unit(rng), 0.0, 1.0));
  }
  return out;
}

}  // namespace driftcomp
