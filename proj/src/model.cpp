#include "driftcomp/model.hpp"

#include <json.hpp>

#include "driftcomp/errors.hpp"

namespace driftcomp {

Shape conv_output_shape(const LayerSpec& l, const Shape& in) {
  const int h = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
  const int w = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
  return {l.c_out, h, w};
}

std::vector<Shape> ModelSpec::infer_shapes() const {
  std::vector<Shape> out;
  out.reserve(layers.size());
  auto fetch = [&](int idx, std::size_t self) -> Shape {
    if (idx == -1) return input;
    if (idx < -1 || static_cast<std::size_t>(idx) >= self)
      throw ConfigError("layer " + std::to_string(self) + " references a non-preceding node");
    return out[idx];
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const Shape in = fetch(l.input, i);
    const std::string where = "layer " + std::to_string(i) + " (" + l.name + ")";
    switch (l.kind) {
      case LayerKind::kConv2d: {
        if (l.c_in <= 0 || l.c_out <= 0 || l.kernel <= 0 || l.stride <= 0 || l.padding < 0)
          throw ConfigError(where + ": conv dimensions must be positive");
        if (in.c != l.c_in) throw ConfigError(where + ": input channels mismatch");
        const Shape o = conv_output_shape(l, in);
        if (o.h <= 0 || o.w <= 0) throw ConfigError(where + ": empty output");
        out.push_back(o);
        break;
      }
      case LayerKind::kLinear:
        if (l.c_in <= 0 || l.c_out <= 0) throw ConfigError(where + ": linear dimensions must be positive");
        if (static_cast<int>(in.size()) != l.c_in) throw ConfigError(where + ": input features mismatch");
        out.push_back({l.c_out, 1, 1});
        break;
      case LayerKind::kRelu:
        out.push_back(in);
        break;
      case LayerKind::kGlobalAvgPool:
        out.push_back({in.c, 1, 1});
        break;
      case LayerKind::kResidualAdd: {
        const Shape s = fetch(l.skip, i);
        if (s.c > in.c || s.h < in.h || s.w < in.w || s.h % in.h != 0 || s.w % in.w != 0 ||
            s.h / in.h != s.w / in.w)
          throw ConfigError(where + ": residual branches are not shape-consistent");
        out.push_back(in);
        break;
      }
    }
  }
  return out;
}

void ModelSpec::validate() const {
  if (input.c <= 0 || input.h <= 0 || input.w <= 0) throw ConfigError("model input shape must be positive");
  if (classes <= 0) throw ConfigError("model class count must be positive");
  if (layers.empty()) throw ConfigError("model has no layers");
  const auto shapes = infer_shapes();
  if (shapes.back() != Shape{classes, 1, 1}) throw ConfigError("model output must be classes x 1 x 1");
}

std::vector<int> ModelSpec::weight_layers() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_weights()) idx.push_back(static_cast<int>(i));
  return idx;
}

std::vector<int> ModelSpec::compensated_layers() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_weights() && layers[i].compensated) idx.push_back(static_cast<int>(i));
  return idx;
}

std::size_t ModelSpec::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::kConv2d) n += std::size_t(l.kernel) * l.kernel * l.c_in * l.c_out;
    if (l.kind == LayerKind::kLinear) n += std::size_t(l.c_in) * l.c_out;
  }
  return n;
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = weight_count();
  for (const auto& l : layers)
    if (l.has_weights()) n += l.c_out;
  return n;
}

ModelSpec build_toy_resnet(int width, int blocks, int classes, Shape input) {
  if (width < 4) throw ConfigError("toy resnet width must be >= 4");
  if (blocks < 1) throw ConfigError("toy resnet needs at least one block per stage");
  ModelSpec m;
  m.input = input;
  m.classes = classes;
  auto add = [&m](LayerSpec l) {
    if (l.input == -2) l.input = static_cast<int>(m.layers.size()) - 1;
    m.layers.push_back(std::move(l));
    return static_cast<int>(m.layers.size()) - 1;
  };
  auto conv = [&](std::string name, int cin, int cout, int stride, int from) {
    LayerSpec l;
    l.kind = LayerKind::kConv2d;
    l.name = std::move(name);
    l.c_in = cin;
    l.c_out = cout;
    l.kernel = 3;
    l.stride = stride;
    l.padding = 1;
    l.compensated = true;
    l.input = from;
    return add(l);
  };
  auto relu = [&](std::string name) {
    LayerSpec l;
    l.kind = LayerKind::kRelu;
    l.name = std::move(name);
    l.input = -2;
    return add(l);
  };
  conv("stem", input.c, width, 1, -1);
  int last = relu("stem.relu");
  int channels = width;
  for (int stage = 0; stage < 3; ++stage) {
    const int out_ch = width << stage;
    for (int b = 0; b < blocks; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string p = "s" + std::to_string(stage + 1) + ".b" + std::to_string(b + 1);
      const int block_in = last;
      conv(p + ".conv1", channels, out_ch, stride, block_in);
      relu(p + ".relu1");
      const int c2 = conv(p + ".conv2", out_ch, out_ch, 1, static_cast<int>(m.layers.size()) - 1);
      LayerSpec join;
      join.kind = LayerKind::kResidualAdd;
      join.name = p + ".add";
      join.input = c2;
      join.skip = block_in;
      add(join);
      last = relu(p + ".relu2");
      channels = out_ch;
    }
  }
  LayerSpec pool;
  pool.kind = LayerKind::kGlobalAvgPool;
  pool.name = "pool";
  pool.input = last;
  add(pool);
  LayerSpec head;
  head.kind = LayerKind::kLinear;
  head.name = "head";
  head.c_in = channels;
  head.c_out = classes;
  head.compensated = true;
  head.input = -2;
  add(head);
  m.validate();
  return m;
}

ModelSpec build_resnet20(int classes) { return build_toy_resnet(16, 3, classes, {3, 32, 32}); }

ModelSpec build_mlp(int in_features, int hidden, int classes) {
  ModelSpec m;
  m.input = {in_features, 1, 1};
  m.classes = classes;
  LayerSpec l1;
  l1.kind = LayerKind::kLinear;
  l1.name = "fc1";
  l1.c_in = in_features;
  l1.c_out = hidden;
  l1.compensated = true;
  l1.input = -1;
  LayerSpec r;
  r.kind = LayerKind::kRelu;
  r.name = "relu";
  r.input = 0;
  LayerSpec l2;
  l2.kind = LayerKind::kLinear;
  l2.name = "fc2";
  l2.c_in = hidden;
  l2.c_out = classes;
  l2.compensated = true;
  l2.input = 1;
  m.layers = {l1, r, l2};
  m.validate();
  return m;
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kResidualAdd: return "residual-add";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kGlobalAvgPool: return "global-avg-pool";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::kConv2d, LayerKind::kLinear, LayerKind::kResidualAdd, LayerKind::kRelu,
                 LayerKind::kGlobalAvgPool})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown layer kind: " + s);
}

std::string model_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["input"] = {spec.input.c, spec.input.h, spec.input.w};
  j["classes"] = spec.classes;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : spec.layers) {
    nlohmann::ordered_json o;
    o["kind"] = to_string(l.kind);
    o["name"] = l.name;
    o["input"] = l.input;
    if (l.has_weights()) {
      o["c_in"] = l.c_in;
      o["c_out"] = l.c_out;
      o["compensated"] = l.compensated;
    }
    if (l.kind == LayerKind::kConv2d) {
      o["kernel"] = l.kernel;
      o["stride"] = l.stride;
      o["padding"] = l.padding;
    }
    if (l.kind == LayerKind::kResidualAdd) o["skip"] = l.skip;
    layers.push_back(o);
  }
  return j.dump(2);
}

ModelSpec model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("model manifest: ") + e.what(), static_cast<long long>(e.byte));
  }
  try {
    ModelSpec m;
    const auto in = j.at("input");
    if (!in.is_array() || in.size() != 3) throw FormatError("model manifest: input must be [C,H,W]");
    m.input = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
    m.classes = j.at("classes").get<int>();
    for (const auto& o : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(o.at("kind").get<std::string>());
      l.name = o.value("name", "");
      l.input = o.value("input", -1);
      l.c_in = o.value("c_in", 0);
      l.c_out = o.value("c_out", 0);
      l.compensated = o.value("compensated", false);
      l.kernel = o.value("kernel", 1);
      l.stride = o.value("stride", 1);
      l.padding = o.value("padding", 0);
      l.skip = o.value("skip", -1);
      m.layers.push_back(l);
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model manifest: ") + e.what());
  }
}

}  // namespace driftcomp
