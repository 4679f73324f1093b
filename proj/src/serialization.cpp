#include "driftcomp/serialization.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "driftcomp/errors.hpp"

namespace driftcomp {

namespace {

constexpr std::uint32_t kBackboneVersion = 1;
constexpr std::uint32_t kArchiveVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                      std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>,
                                                      T>>;
    U u;
    std::memcpy(&u, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void finish() { put<std::uint32_t>(crc32_of(buf_.data(), buf_.size())); }
  std::vector<std::uint8_t>& data() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, const char* what) : b_(b), what_(what) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                      std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>,
                                                      T>>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, &u, sizeof(T));
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  // Element count guarded against the bytes left so corrupt sizes fail cleanly.
  std::size_t count(std::size_t elem_size) {
    const auto n = get<std::uint32_t>();
    if (static_cast<std::uint64_t>(n) * elem_size > b_.size() - pos_) fail("count exceeds remaining bytes");
    return n;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(std::string(what_) + ": " + msg, static_cast<long long>(pos_));
  }
  std::size_t pos() const { return pos_; }

  void check_envelope(const char magic[4], std::uint32_t version) {
    if (b_.size() < 12) fail("file too short");
    if (std::memcmp(b_.data(), magic, 4) != 0) fail("bad magic");
    const std::size_t body = b_.size() - 4;
    Reader tail(b_, what_);
    tail.pos_ = body;
    const auto stored = tail.get<std::uint32_t>();
    if (stored != crc32_of(b_.data(), body)) {
      pos_ = body;
      fail("checksum mismatch");
    }
    end_ = body;
    pos_ = 4;
    if (get<std::uint32_t>() != version) fail("unsupported version");
  }
  void expect_end() {
    if (pos_ != end_) fail("trailing bytes before checksum");
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > end_) fail("unexpected end of data");
  }
  const std::vector<std::uint8_t>& b_;
  const char* what_;
  std::size_t pos_ = 0;
  std::size_t end_ = SIZE_MAX;
};

nlohmann::ordered_json scheme_to_json(const QuantScheme& s) {
  return {{"weight_bits", s.weight_bits},
          {"act_bits", s.act_bits},
          {"symmetric", s.symmetric},
          {"per", s.per == ScaleGranularity::kTensor ? "tensor" : "output-channel"}};
}

QuantScheme scheme_from_json(const nlohmann::json& j) {
  QuantScheme s;
  s.weight_bits = j.at("weight_bits").get<int>();
  s.act_bits = j.at("act_bits").get<int>();
  s.symmetric = j.at("symmetric").get<bool>();
  const auto per = j.at("per").get<std::string>();
  if (per == "tensor") s.per = ScaleGranularity::kTensor;
  else if (per == "output-channel") s.per = ScaleGranularity::kOutputChannel;
  else throw FormatError("unknown scale granularity '" + per + "'");
  return s;
}

}  // namespace

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> encode_backbone(const Backbone& bb, const std::string& provenance_json) {
  bb.validate();
  nlohmann::ordered_json manifest;
  manifest["model"] = nlohmann::ordered_json::parse(model_to_json(bb.spec));
  manifest["quant"] = scheme_to_json(bb.scheme);
  manifest["provenance"] = nlohmann::ordered_json::parse(provenance_json);
  const std::string m = manifest.dump();
  Writer w;
  w.bytes("DCBK", 4);
  w.put<std::uint32_t>(kBackboneVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
  w.bytes(m.data(), m.size());
  const auto wl = bb.spec.weight_layers();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(wl.size()));
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const auto& name = bb.spec.layers[wl[k]].name;
    const auto& q = bb.weights[k];
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(q.bits));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(q.shape.size()));
    for (auto d : q.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(q.scales.size()));
    for (double s : q.scales) w.put<double>(s);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(q.codes.size()));
    for (auto c : q.codes) w.put<std::int8_t>(c);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bb.biases[k].size()));
    for (double b : bb.biases[k]) w.put<double>(b);
  }
  w.finish();
  return std::move(w.data());
}

Backbone decode_backbone(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "backbone checkpoint");
  r.check_envelope("DCBK", kBackboneVersion);
  const auto mlen = r.count(1);
  const std::size_t mpos = r.pos();
  const std::string m = r.str(mlen);
  Backbone bb;
  try {
    const auto j = nlohmann::json::parse(m);
    bb.spec = model_from_json(j.at("model").dump());
    bb.scheme = scheme_from_json(j.at("quant"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("backbone checkpoint: bad manifest: ") + e.what(), static_cast<long long>(mpos));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("backbone checkpoint: bad manifest: ") + e.what(), static_cast<long long>(mpos));
  }
  const auto wl = bb.spec.weight_layers();
  const auto n = r.get<std::uint32_t>();
  if (n != wl.size()) r.fail("layer count does not match manifest");
  for (std::size_t k = 0; k < n; ++k) {
    const auto& l = bb.spec.layers[wl[k]];
    const auto name = r.str(r.get<std::uint16_t>());
    if (name != l.name) r.fail("layer name '" + name + "' does not match manifest '" + l.name + "'");
    QuantizedTensor q;
    q.bits = r.get<std::uint8_t>();
    const auto ndim = r.get<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) q.shape.push_back(r.get<std::uint32_t>());
    if (q.shape != weight_shape(l)) r.fail("shape mismatch for layer " + name);
    q.scales.resize(r.count(8));
    for (auto& s : q.scales) s = r.get<double>();
    q.codes.resize(r.count(1));
    for (auto& c : q.codes) c = r.get<std::int8_t>();
    std::vector<double> bias(r.count(8));
    for (auto& b : bias) b = r.get<double>();
    std::size_t expect = 1;
    for (auto d : q.shape) expect *= d;
    if (q.codes.size() != expect) r.fail("code count mismatch for layer " + name);
    const std::size_t ns = bb.scheme.per == ScaleGranularity::kTensor ? 1 : q.shape[0];
    if (q.scales.size() != ns) r.fail("scale count mismatch for layer " + name);
    bb.weights.push_back(std::move(q));
    bb.biases.push_back(std::move(bias));
  }
  r.expect_end();
  try {
    bb.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("backbone checkpoint: ") + e.what());
  }
  return bb;
}

std::vector<std::uint8_t> encode_archive(const CompensationArchive& a) {
  const auto& p = a.projections;
  if (p.a_max.size() != static_cast<std::size_t>(p.rank) * p.d_max_in ||
      p.b_max.size() != static_cast<std::size_t>(p.d_max_out) * p.rank)
    throw ContractError("archive: projection sizes inconsistent");
  Writer w;
  w.bytes("DCCA", 4);
  w.put<std::uint32_t>(kArchiveVersion);
  w.put<std::uint32_t>(p.rank);
  w.put<std::uint32_t>(p.d_max_in);
  w.put<std::uint32_t>(p.d_max_out);
  w.put<std::uint64_t>(p.init_seed);
  for (double v : p.a_max) w.put<double>(v);
  for (double v : p.b_max) w.put<double>(v);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.sets.size()));
  for (const auto& s : a.sets) {
    w.put<std::int32_t>(s.set_id);
    w.put<double>(s.drift_time);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.layers.size()));
    for (const auto& l : s.layers) {
      w.put<std::int32_t>(l.layer);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(l.d_vec.size()));
      for (double v : l.d_vec) w.put<double>(v);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(l.b_vec.size()));
      for (double v : l.b_vec) w.put<double>(v);
    }
  }
  w.finish();
  return std::move(w.data());
}

CompensationArchive decode_archive(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "compensation archive");
  r.check_envelope("DCCA", kArchiveVersion);
  CompensationArchive a;
  auto& p = a.projections;
  p.rank = static_cast<int>(r.get<std::uint32_t>());
  p.d_max_in = static_cast<int>(r.get<std::uint32_t>());
  p.d_max_out = static_cast<int>(r.get<std::uint32_t>());
  p.init_seed = r.get<std::uint64_t>();
  if (p.rank < 1 || p.d_max_in < 1 || p.d_max_out < 1) r.fail("invalid projection dimensions");
  const std::uint64_t na = static_cast<std::uint64_t>(p.rank) * p.d_max_in;
  const std::uint64_t nb = static_cast<std::uint64_t>(p.d_max_out) * p.rank;
  if ((na + nb) * 8 > bytes.size()) r.fail("projection size exceeds file");
  p.a_max.resize(na);
  for (auto& v : p.a_max) v = r.get<double>();
  p.b_max.resize(nb);
  for (auto& v : p.b_max) v = r.get<double>();
  const auto ns = r.count(16);
  for (std::size_t i = 0; i < ns; ++i) {
    ScalingVectorSet s;
    s.set_id = r.get<std::int32_t>();
    s.drift_time = r.get<double>();
    const auto nl = r.count(12);
    for (std::size_t k = 0; k < nl; ++k) {
      LayerScaling l;
      l.layer = r.get<std::int32_t>();
      l.d_vec.resize(r.count(8));
      for (auto& v : l.d_vec) v = r.get<double>();
      l.b_vec.resize(r.count(8));
      for (auto& v : l.b_vec) v = r.get<double>();
      if (static_cast<int>(l.d_vec.size()) > p.rank) r.fail("set rank exceeds projection rank");
      if (static_cast<int>(l.b_vec.size()) > p.d_max_out) r.fail("set width exceeds projection size");
      s.layers.push_back(std::move(l));
    }
    if (!a.sets.empty() && !(s.drift_time > a.sets.back().drift_time)) r.fail("set drift times not increasing");
    a.sets.push_back(std::move(s));
  }
  r.expect_end();
  return a;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path);
  f << text;
  if (!f) throw Error("write failed: " + path);
}

namespace {

template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace

void save_backbone(const std::string& path, const Backbone& bb, const std::string& provenance_json) {
  write_file_bytes(path, encode_backbone(bb, provenance_json));
}

Backbone load_backbone(const std::string& path) { return with_path(path, decode_backbone); }

void save_archive(const std::string& path, const CompensationArchive& a) { write_file_bytes(path, encode_archive(a)); }

CompensationArchive load_archive(const std::string& path) { return with_path(path, decode_archive); }

}  // namespace driftcomp
