#include "driftcomp/cli/config.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "driftcomp/errors.hpp"
#include "driftcomp/serialization.hpp"

namespace driftcomp::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads keys of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + path(key) + "' has the wrong type");
    }
  }

  void shape(const char* key, Shape& out) {
    std::vector<int> v;
    get(key, v);
    if (!j_.contains(key)) return;
    if (v.size() != 3) throw ConfigError("config: '" + path(key) + "' must be [c, h, w]");
    out = {v[0], v[1], v[2]};
  }

  template <typename Fn>
  void object(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, path(key));
    fn(s);
    s.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + path(it.key()) + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }

 private:
  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string granularity_name(ScaleGranularity g) {
  return g == ScaleGranularity::kTensor ? "tensor" : "output-channel";
}

ScaleGranularity parse_granularity(const std::string& s) {
  if (s == "tensor") return ScaleGranularity::kTensor;
  if (s == "output-channel") return ScaleGranularity::kOutputChannel;
  throw ConfigError("config: unknown scale granularity '" + s + "'");
}

std::string measured_table_path(const std::string& model) {
  const std::string prefix = "measured:";
  return model.rfind(prefix, 0) == 0 ? model.substr(prefix.size()) : std::string();
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ConfigError("config: " + what + " '" + path + "' not found");
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
  if (paths.backbone.empty() || paths.archive.empty()) throw ConfigError("config: artifact paths must not be empty");

  if (model.kind == "toy_resnet") {
    if (model.width < 4 || model.blocks < 1) throw ConfigError("config: toy_resnet needs width >= 4, blocks >= 1");
  } else if (model.kind == "mlp") {
    if (model.hidden < 1) throw ConfigError("config: mlp hidden must be >= 1");
  } else if (model.kind == "manifest") {
    require_file(input_path(model.manifest), "model manifest");
  } else if (model.kind != "resnet20") {
    throw ConfigError("config: unknown model kind '" + model.kind + "'");
  }
  if (model.classes < 2) throw ConfigError("config: model classes must be >= 2");

  if (dataset.kind == "synthetic") {
    const auto& s = dataset.synthetic;
    if (s.classes != model.classes) throw ConfigError("config: dataset and model class counts differ");
    if (s.n < static_cast<std::size_t>(s.classes)) throw ConfigError("config: dataset n must be >= classes");
    if (!(s.noise >= 0)) throw ConfigError("config: dataset noise must be >= 0");
    if (!(s.eval_fraction > 0 && s.eval_fraction < 1)) throw ConfigError("config: eval_fraction must be in (0, 1)");
    if (s.blobs_per_class < 1) throw ConfigError("config: blobs_per_class must be >= 1");
  } else if (dataset.kind == "binary") {
    require_file(input_path(dataset.train), "training images");
    require_file(input_path(dataset.eval), "evaluation images");
    require_file(input_path(dataset.meta), "dataset metadata");
  } else {
    throw ConfigError("config: unknown dataset kind '" + dataset.kind + "'");
  }

  quant.validate();
  pretrain.validate();
  if (pretrain_min_accuracy < 0 || pretrain_min_accuracy > 1)
    throw ConfigError("config: pretrain min_accuracy must be in [0, 1]");

  if (drift.model != "analytic") {
    const auto table = measured_table_path(drift.model);
    if (table.empty()) throw ConfigError("config: drift model must be 'analytic' or 'measured:<path>'");
    require_file(input_path(table), "measured drift table");
  }
  drift.analytic.validate();
  drift.map.validate();

  compensation.validate();
  train.validate();
  {
    // a_thr may be derived later from the drift-free accuracy.
    SchedulerConfig s = schedule.scheduler;
    if (schedule.a_thr_drop_points) {
      if (!(*schedule.a_thr_drop_points >= 0 && *schedule.a_thr_drop_points < 100))
        throw ConfigError("config: a_thr_drop_points must be in [0, 100)");
      s.a_thr = 0.5;
    }
    s.validate();
  }
  for (double tol : schedule.tolerances_pct)
    if (!(tol >= 0 && tol <= 100)) throw ConfigError("config: tolerances_pct entries must be in [0, 100]");

  hardware.validate();
  if (sweep.times.empty()) throw ConfigError("config: sweep times must not be empty");
  for (double t : sweep.times)
    if (!(t >= 1)) throw ConfigError("config: sweep times must be >= 1 s");
  if (cost.variants.empty() || cost.ranks.empty() || cost.num_sets.empty())
    throw ConfigError("config: cost variants, ranks and num_sets must not be empty");
  for (int r : cost.ranks)
    if (r < 1) throw ConfigError("config: cost ranks must be >= 1");
  for (int n : cost.num_sets)
    if (n < 0) throw ConfigError("config: cost num_sets must be >= 0");
  if (cost.bits != 4 && cost.bits != 8 && cost.bits != 16 && cost.bits != 32)
    throw ConfigError("config: cost bits must be 4, 8, 16 or 32");
}

std::string RunConfig::out_path(const std::string& name) const {
  return fs::path(name).is_absolute() ? name : (fs::path(out_dir) / name).string();
}

std::string RunConfig::backbone_path() const { return out_path(paths.backbone); }
std::string RunConfig::archive_path() const { return out_path(paths.archive); }

std::string RunConfig::input_path(const std::string& p) const {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base_dir) / p).string();
}

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  Section top(root, "");
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  top.get("out_dir", c.out_dir);
  top.object("paths", [&](Section& s) {
    s.get("backbone", c.paths.backbone);
    s.get("archive", c.paths.archive);
  });
  top.object("model", [&](Section& s) {
    s.get("kind", c.model.kind);
    s.get("width", c.model.width);
    s.get("blocks", c.model.blocks);
    s.get("classes", c.model.classes);
    s.shape("input", c.model.input);
    s.get("hidden", c.model.hidden);
    s.get("manifest", c.model.manifest);
  });
  // Synthetic data follows the model's class count and input shape unless given.
  c.dataset.synthetic.classes = c.model.classes;
  c.dataset.synthetic.shape = c.model.input;
  top.object("dataset", [&](Section& s) {
    auto& syn = c.dataset.synthetic;
    s.get("kind", c.dataset.kind);
    s.get("classes", syn.classes);
    s.get("n", syn.n);
    s.shape("shape", syn.shape);
    s.get("noise", syn.noise);
    s.get("eval_fraction", syn.eval_fraction);
    s.get("blobs_per_class", syn.blobs_per_class);
    s.get("train", c.dataset.train);
    s.get("eval", c.dataset.eval);
    s.get("meta", c.dataset.meta);
    s.get("eval_limit", c.dataset.eval_limit);
  });
  top.object("quant", [&](Section& s) {
    std::string per = granularity_name(c.quant.per);
    s.get("weight_bits", c.quant.weight_bits);
    s.get("act_bits", c.quant.act_bits);
    s.get("symmetric", c.quant.symmetric);
    s.get("per", per);
    c.quant.per = parse_granularity(per);
  });
  top.object("pretrain", [&](Section& s) {
    s.get("epochs", c.pretrain.epochs);
    s.get("qat_epochs", c.pretrain.qat_epochs);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("learning_rate", c.pretrain.learning_rate);
    s.get("momentum", c.pretrain.momentum);
    s.get("weight_decay", c.pretrain.weight_decay);
    s.get("min_accuracy", c.pretrain_min_accuracy);
  });
  top.object("drift", [&](Section& s) {
    std::string enc = to_string(c.drift.map.encoding);
    s.get("model", c.drift.model);
    s.get("a_mu", c.drift.analytic.a_mu);
    s.get("a_sigma", c.drift.analytic.a_sigma);
    s.get("b_sigma", c.drift.analytic.b_sigma);
    s.get("sigma_eps", c.drift.analytic.sigma_eps);
    s.get("clamp_negative", c.drift.clamp_negative);
    s.get("g_min", c.drift.map.g_min);
    s.get("g_max", c.drift.map.g_max);
    s.get("encoding", enc);
    c.drift.map.encoding = parse_encoding(enc);
  });
  top.object("compensation", [&](Section& s) {
    std::string v = to_string(c.compensation.variant);
    s.get("variant", v);
    s.get("rank", c.compensation.rank);
    c.compensation.max_rank = c.compensation.rank;
    s.get("max_rank", c.compensation.max_rank);
    c.compensation.variant = parse_variant(v);
  });
  top.object("scheduler", [&](Section& s) {
    auto& sc = c.schedule.scheduler;
    s.get("a_thr", sc.a_thr);
    double drop = 0;
    s.get("a_thr_drop_points", drop);
    if (s.has("a_thr_drop_points")) c.schedule.a_thr_drop_points = drop;
    s.get("t_max", sc.t_max);
    s.get("multiplier", sc.multiplier);
    s.get("n_eval", sc.n_eval);
    s.get("confidence_k", sc.confidence_k);
    s.get("strict", sc.strict);
    s.get("tolerances_pct", c.schedule.tolerances_pct);
  });
  top.object("train", [&](Section& s) {
    std::string opt = to_string(c.train.optimizer);
    s.get("epochs", c.train.epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("learning_rate", c.train.learning_rate);
    s.get("optimizer", opt);
    s.get("momentum", c.train.momentum);
    s.get("warm_start", c.train.warm_start);
    c.train.optimizer = parse_optimizer(opt);
  });
  top.object("hardware", [&](Section& s) {
    s.get("tops_per_w_rram", c.hardware.tops_per_w_rram);
    s.get("tops_per_w_sram", c.hardware.tops_per_w_sram);
    s.get("density_rram", c.hardware.density_rram);
    s.get("density_sram", c.hardware.density_sram);
  });
  top.object("sweep", [&](Section& s) { s.get("times", c.sweep.times); });
  top.object("cost", [&](Section& s) {
    std::vector<std::string> names;
    s.get("variants", names);
    if (s.has("variants")) {
      c.cost.variants.clear();
      for (const auto& n : names) c.cost.variants.push_back(parse_variant(n));
    }
    s.get("ranks", c.cost.ranks);
    s.get("num_sets", c.cost.num_sets);
    s.get("bits", c.cost.bits);
  });
  top.finish();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  auto parent = fs::path(path).parent_path();
  return parse_run_config(std::string(bytes.begin(), bytes.end()), parent.empty() ? "." : parent.string());
}

std::string config_echo(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["paths"] = {{"backbone", c.paths.backbone}, {"archive", c.paths.archive}};
  ordered_json m = {{"kind", c.model.kind}};
  if (c.model.kind == "toy_resnet") {
    m["width"] = c.model.width;
    m["blocks"] = c.model.blocks;
  }
  if (c.model.kind == "mlp") m["hidden"] = c.model.hidden;
  if (c.model.kind == "manifest") m["manifest"] = c.model.manifest;
  m["classes"] = c.model.classes;
  m["input"] = {c.model.input.c, c.model.input.h, c.model.input.w};
  j["model"] = m;
  ordered_json d = {{"kind", c.dataset.kind}};
  if (c.dataset.kind == "synthetic") {
    const auto& s = c.dataset.synthetic;
    d["classes"] = s.classes;
    d["n"] = s.n;
    d["shape"] = {s.shape.c, s.shape.h, s.shape.w};
    d["noise"] = s.noise;
    d["eval_fraction"] = s.eval_fraction;
    d["blobs_per_class"] = s.blobs_per_class;
  } else {
    d["train"] = c.dataset.train;
    d["eval"] = c.dataset.eval;
    d["meta"] = c.dataset.meta;
  }
  d["eval_limit"] = c.dataset.eval_limit;
  j["dataset"] = d;
  j["quant"] = {{"weight_bits", c.quant.weight_bits},
                {"act_bits", c.quant.act_bits},
                {"symmetric", c.quant.symmetric},
                {"per", granularity_name(c.quant.per)}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"qat_epochs", c.pretrain.qat_epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"momentum", c.pretrain.momentum},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"min_accuracy", c.pretrain_min_accuracy}};
  j["drift"] = {{"model", c.drift.model},
                {"a_mu", c.drift.analytic.a_mu},
                {"a_sigma", c.drift.analytic.a_sigma},
                {"b_sigma", c.drift.analytic.b_sigma},
                {"sigma_eps", c.drift.analytic.sigma_eps},
                {"clamp_negative", c.drift.clamp_negative},
                {"g_min", c.drift.map.g_min},
                {"g_max", c.drift.map.g_max},
                {"encoding", to_string(c.drift.map.encoding)}};
  j["compensation"] = {{"variant", to_string(c.compensation.variant)},
                       {"rank", c.compensation.rank},
                       {"max_rank", c.compensation.max_rank}};
  const auto& sc = c.schedule.scheduler;
  ordered_json s;
  if (c.schedule.a_thr_drop_points) s["a_thr_drop_points"] = *c.schedule.a_thr_drop_points;
  else s["a_thr"] = sc.a_thr;
  s["t_max"] = sc.t_max;
  s["multiplier"] = sc.multiplier;
  s["n_eval"] = sc.n_eval;
  s["confidence_k"] = sc.confidence_k;
  s["strict"] = sc.strict;
  s["tolerances_pct"] = c.schedule.tolerances_pct;
  j["scheduler"] = s;
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"optimizer", to_string(c.train.optimizer)},
                {"momentum", c.train.momentum},
                {"warm_start", c.train.warm_start}};
  j["hardware"] = {{"tops_per_w_rram", c.hardware.tops_per_w_rram},
                   {"tops_per_w_sram", c.hardware.tops_per_w_sram},
                   {"density_rram", c.hardware.density_rram},
                   {"density_sram", c.hardware.density_sram}};
  j["sweep"] = {{"times", c.sweep.times}};
  std::vector<std::string> variants;
  for (auto v : c.cost.variants) variants.push_back(to_string(v));
  j["cost"] = {{"variants", variants}, {"ranks", c.cost.ranks}, {"num_sets", c.cost.num_sets}, {"bits", c.cost.bits}};
  return j.dump(2);
}

ModelSpec resolve_model(const RunConfig& c) {
  if (c.model.kind == "toy_resnet") return build_toy_resnet(c.model.width, c.model.blocks, c.model.classes, c.model.input);
  if (c.model.kind == "resnet20") return build_resnet20(c.model.classes);
  if (c.model.kind == "mlp") {
    auto m = build_mlp(static_cast<int>(c.model.input.size()), c.model.hidden, c.model.classes);
    m.input = c.model.input;
    return m;
  }
  if (c.model.kind == "manifest") {
    const auto bytes = read_file_bytes(c.input_path(c.model.manifest));
    return model_from_json(std::string(bytes.begin(), bytes.end()));
  }
  throw ConfigError("config: unknown model kind '" + c.model.kind + "'");
}

DatasetSplit resolve_datasets(const RunConfig& c) {
  DatasetSplit d;
  if (c.dataset.kind == "synthetic") {
    SyntheticConfig s = c.dataset.synthetic;
    s.seed = c.seed;
    d = make_synthetic_dataset(s);
  } else {
    const auto bytes = read_file_bytes(c.input_path(c.dataset.meta));
    const auto meta = parse_dataset_meta(std::string(bytes.begin(), bytes.end()));
    DatasetMeta unchecked = meta;
    unchecked.count = -1;
    d.train = load_binary_images(c.input_path(c.dataset.train), unchecked, Split::kTrain);
    d.eval = load_binary_images(c.input_path(c.dataset.eval), unchecked, Split::kEval);
  }
  if (c.dataset.eval_limit > 0 && c.dataset.eval_limit < d.eval.size()) {
    d.eval.labels.resize(c.dataset.eval_limit);
    d.eval.pixels.resize(c.dataset.eval_limit * d.eval.shape.size());
  }
  return d;
}

DriftSetup resolve_drift(const RunConfig& c) {
  DriftSetup s;
  s.map = c.drift.map;
  s.model.clamp_negative = c.drift.clamp_negative;
  if (c.drift.model == "analytic") {
    s.model.source = c.drift.analytic;
  } else {
    s.model.source = load_measured_drift_table(c.input_path(measured_table_path(c.drift.model)));
  }
  return s;
}

}  // namespace driftcomp::cli
