#include "seprep/ckpt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace seprep::ckpt {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'P', 'R', 'N'};
constexpr std::size_t kHeaderBytes = 12;

template <typename T>
constexpr std::string_view dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else if constexpr (std::is_same_v<T, double>) {
    return "f64";
  } else {
    return "i32";
  }
}

std::size_t dtype_size(std::string_view dtype) {
  if (dtype == "f32" || dtype == "i32") return 4;
  if (dtype == "f64") return 8;
  throw CkptError(Errc::manifest_mismatch, "unknown dtype '" + std::string(dtype) + "'");
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

// Fixed little-endian encoding independent of the host byte order.
template <typename T>
void put_values(std::string& out, std::span<const T> values) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  for (T v : values) {
    const U bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <typename T>
std::vector<T> get_values(std::string_view in, std::size_t count) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::vector<T> out(count);
  for (std::size_t e = 0; e < count; ++e) {
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(in[e * sizeof(U) + i])) << (8 * i);
    }
    out[e] = std::bit_cast<T>(bits);
  }
  return out;
}

// Accumulates the manifest and payload while encoding.
class Writer {
 public:
  template <typename T>
  void add(const std::string& name, const Shape& shape, std::span<const T> values) {
    manifest_.push_back({{"name", name}, {"dtype", dtype_of<T>()}, {"shape", shape}, {"offset", payload_.size()}});
    put_values(payload_, values);
  }
  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    add<T>(name, t.shape(), t.data());
  }

  std::string finish(json metadata) const {
    metadata["tensors"] = manifest_;
    const std::string text = metadata.dump();
    std::string out(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += payload_;
    return out;
  }

 private:
  json manifest_ = json::array();
  std::string payload_;
};

struct Entry {
  std::string dtype;
  Shape shape;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

struct Parsed {
  std::uint32_t version = 0;
  json metadata;
  std::string_view payload;
  std::map<std::string, Entry> tensors;
};

Parsed parse(std::string_view bytes) {
  if (bytes.size() < 4) throw CkptError(Errc::truncated_payload, "file shorter than its header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CkptError(Errc::bad_magic, "missing SPRN magic");
  if (bytes.size() < kHeaderBytes) throw CkptError(Errc::truncated_payload, "file shorter than its header");
  Parsed p;
  p.version = get_u32(bytes, 4);
  if (p.version != kFormatVersion) {
    throw CkptError(Errc::version_mismatch, "format version " + std::to_string(p.version) + ", expected " +
                                                std::to_string(kFormatVersion));
  }
  const std::size_t meta_len = get_u32(bytes, 8);
  if (bytes.size() - kHeaderBytes < meta_len) throw CkptError(Errc::truncated_payload, "metadata cut short");
  try {
    p.metadata = json::parse(bytes.substr(kHeaderBytes, meta_len));
  } catch (const json::exception& e) {
    throw CkptError(Errc::bad_metadata, std::string("metadata is not valid JSON: ") + e.what());
  }
  p.payload = bytes.substr(kHeaderBytes + meta_len);

  std::size_t expected_offset = 0;
  try {
    if (!p.metadata.is_object() || !p.metadata.contains("tensors") || !p.metadata["tensors"].is_array()) {
      throw CkptError(Errc::bad_metadata, "metadata lacks a tensor manifest");
    }
    for (const auto& t : p.metadata["tensors"]) {
      Entry e;
      const auto name = t.at("name").get<std::string>();
      e.dtype = t.at("dtype").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.offset = t.at("offset").get<std::size_t>();
      if (e.shape.empty()) throw CkptError(Errc::manifest_mismatch, name + ": empty shape");
      for (std::size_t d : e.shape) {
        if (d == 0) throw CkptError(Errc::manifest_mismatch, name + ": zero extent");
      }
      e.bytes = shape_numel(e.shape) * dtype_size(e.dtype);
      if (e.offset != expected_offset) {
        throw CkptError(Errc::manifest_mismatch, name + ": offset " + std::to_string(e.offset) +
                                                     " breaks the contiguous manifest order");
      }
      expected_offset += e.bytes;
      if (!p.tensors.emplace(name, e).second) throw CkptError(Errc::manifest_mismatch, "duplicate tensor " + name);
    }
  } catch (const json::exception& e) {
    throw CkptError(Errc::bad_metadata, std::string("malformed manifest: ") + e.what());
  }
  if (p.payload.size() < expected_offset) {
    throw CkptError(Errc::truncated_payload, "payload has " + std::to_string(p.payload.size()) + " bytes, manifest declares " +
                                                 std::to_string(expected_offset));
  }
  if (p.payload.size() > expected_offset) {
    throw CkptError(Errc::manifest_mismatch, "payload has trailing bytes beyond the manifest");
  }
  return p;
}

template <typename T>
std::vector<T> read_raw(const Parsed& p, const std::string& name, const Shape& expected) {
  const auto it = p.tensors.find(name);
  if (it == p.tensors.end()) throw CkptError(Errc::manifest_mismatch, "missing tensor " + name);
  const Entry& e = it->second;
  if (e.dtype != dtype_of<T>()) {
    throw CkptError(Errc::manifest_mismatch, name + ": dtype " + e.dtype + ", expected " + std::string(dtype_of<T>()));
  }
  if (e.shape != expected) {
    throw CkptError(Errc::manifest_mismatch,
                    name + ": shape " + shape_str(e.shape) + " disagrees with architecture " + shape_str(expected));
  }
  return get_values<T>(p.payload.substr(e.offset, e.bytes), shape_numel(e.shape));
}

template <typename T>
Tensor<T> read_tensor(const Parsed& p, const std::string& name, const Shape& expected) {
  return Tensor<T>(expected, read_raw<T>(p, name, expected));
}

json arch_to_json(const ArchDesc& a) {
  return {{"in_channels", a.in_channels}, {"in_size", a.in_size}, {"widths", a.widths}, {"kernel", a.kernel},
          {"stride", a.stride},           {"padding", a.padding}, {"classes", a.classes}};
}

ArchDesc arch_from_json(const json& j) {
  ArchDesc a;
  a.in_channels = j.at("in_channels").get<std::size_t>();
  a.in_size = j.at("in_size").get<std::size_t>();
  a.widths = j.at("widths").get<std::vector<std::size_t>>();
  a.kernel = j.at("kernel").get<std::size_t>();
  a.stride = j.at("stride").get<std::size_t>();
  a.padding = j.at("padding").get<std::size_t>();
  a.classes = j.at("classes").get<std::size_t>();
  return a;
}

std::string unit_prefix(std::size_t u) { return "unit" + std::to_string(u); }

template <typename T>
void add_pathway(Writer& w, const std::string& prefix, const ConvBNPathway<T>& p) {
  w.add(prefix + ".kernels", p.kernels);
  w.add(prefix + ".run_mu", p.run_mu);
  w.add(prefix + ".run_sigma", p.run_sigma);
  w.add(prefix + ".gamma", p.gamma);
  w.add(prefix + ".beta", p.beta);
}

template <typename T>
ConvBNPathway<T> read_pathway(const Parsed& p, const std::string& prefix, const Shape& kshape, std::size_t stride,
                              std::size_t padding) {
  ConvBNPathway<T> out;
  const Shape ch{kshape[0]};
  out.kernels = read_tensor<T>(p, prefix + ".kernels", kshape);
  out.run_mu = read_tensor<T>(p, prefix + ".run_mu", ch);
  out.run_sigma = read_tensor<T>(p, prefix + ".run_sigma", ch);
  out.gamma = read_tensor<T>(p, prefix + ".gamma", ch);
  out.beta = read_tensor<T>(p, prefix + ".beta", ch);
  out.stride = stride;
  out.padding = padding;
  return out;
}

}  // namespace

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad magic";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::truncated_payload: return "truncated payload";
    case Errc::manifest_mismatch: return "manifest mismatch";
    case Errc::bad_metadata: return "bad metadata";
  }
  return "unknown";
}

CkptError::CkptError(Errc code, const std::string& detail)
    : Error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

std::string_view precision_name(Precision p) noexcept { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

template <typename T>
std::string encode_model(const ModelBundle<T>& model) {
  model.validate();
  Writer w;
  json units = json::array();
  for (std::size_t u = 0; u < model.units.size(); ++u) {
    const std::string prefix = unit_prefix(u);
    std::visit(
        [&](const auto& unit) {
          using U = std::decay_t<decltype(unit)>;
          if constexpr (std::is_same_v<U, ConvBNPathway<T>>) {
            units.push_back({{"type", "conv_bn"}, {"stride", unit.stride}, {"padding", unit.padding}});
            add_pathway(w, prefix, unit);
          } else if constexpr (std::is_same_v<U, SepUnit<T>>) {
            const auto& p0 = unit.pathways.front();
            units.push_back(
                {{"type", "sep"}, {"k", unit.k()}, {"stride", p0.stride}, {"padding", p0.padding}});
            for (std::size_t k = 0; k < unit.k(); ++k) {
              add_pathway(w, prefix + ".path" + std::to_string(k), unit.pathways[k]);
            }
            w.add<T>(prefix + ".merge_weights", Shape{unit.k()}, unit.merge_weights);
          } else {
            units.push_back({{"type", "fused"}, {"stride", unit.stride}, {"padding", unit.padding}});
            w.add(prefix + ".kernels", unit.kernels);
            w.add(prefix + ".bias", unit.bias);
          }
        },
        model.units[u]);
  }
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    w.add("head" + std::to_string(h) + ".weight", model.heads[h].weight);
    w.add("head" + std::to_string(h) + ".bias", model.heads[h].bias);
  }
  json meta = {{"kind", "model"},
               {"form", form_name(model.form)},
               {"precision", dtype_of<T>()},
               {"k", model.k()},
               {"heads", model.num_heads()},
               {"arch", arch_to_json(model.arch)},
               {"units", units}};
  return w.finish(std::move(meta));
}

template <typename T>
ModelBundle<T> decode_model(std::string_view bytes) {
  const Parsed p = parse(bytes);
  ModelBundle<T> m;
  try {
    const json& meta = p.metadata;
    if (meta.at("kind").get<std::string>() != "model") throw CkptError(Errc::bad_metadata, "file does not hold a model");
    const auto precision = meta.at("precision").get<std::string>();
    if (precision != dtype_of<T>()) {
      throw CkptError(Errc::manifest_mismatch,
                      "checkpoint precision " + precision + ", loader expects " + std::string(dtype_of<T>()));
    }
    m.form = parse_form(meta.at("form").get<std::string>());
    m.arch = arch_from_json(meta.at("arch"));
    m.arch.validate();
    const auto& units = meta.at("units");
    if (units.size() != m.arch.widths.size()) {
      throw CkptError(Errc::manifest_mismatch, "unit count disagrees with architecture");
    }
    for (std::size_t u = 0; u < units.size(); ++u) {
      const auto& ju = units[u];
      const std::string type = ju.at("type").get<std::string>();
      const std::string prefix = unit_prefix(u);
      const auto stride = ju.at("stride").get<std::size_t>();
      const auto padding = ju.at("padding").get<std::size_t>();
      const Shape kshape{m.arch.widths[u], m.arch.unit_in_channels(u), m.arch.kernel, m.arch.kernel};
      if (type == "conv_bn") {
        m.units.emplace_back(read_pathway<T>(p, prefix, kshape, stride, padding));
      } else if (type == "sep") {
        SepUnit<T> su;
        const auto k = ju.at("k").get<std::size_t>();
        for (std::size_t j = 0; j < k; ++j) {
          su.pathways.push_back(read_pathway<T>(p, prefix + ".path" + std::to_string(j), kshape, stride, padding));
        }
        su.merge_weights = read_raw<T>(p, prefix + ".merge_weights", Shape{k});
        m.units.emplace_back(std::move(su));
      } else if (type == "fused") {
        FusedConv<T> fc;
        fc.kernels = read_tensor<T>(p, prefix + ".kernels", kshape);
        fc.bias = read_tensor<T>(p, prefix + ".bias", Shape{kshape[0]});
        fc.stride = stride;
        fc.padding = padding;
        m.units.emplace_back(std::move(fc));
      } else {
        throw CkptError(Errc::bad_metadata, "unknown unit type '" + type + "'");
      }
    }
    const auto heads = meta.at("heads").get<std::size_t>();
    for (std::size_t h = 0; h < heads; ++h) {
      Head<T> head;
      const std::string prefix = "head" + std::to_string(h);
      head.weight = read_tensor<T>(p, prefix + ".weight", Shape{m.arch.classes, m.arch.feature_dim()});
      head.bias = read_tensor<T>(p, prefix + ".bias", Shape{m.arch.classes});
      m.heads.push_back(std::move(head));
    }
    if (p.tensors.size() != [&] {
          std::size_t n = 2 * heads;
          for (const auto& ju : units) {
            const auto type = ju.at("type").get<std::string>();
            n += type == "conv_bn" ? 5 : type == "fused" ? 2 : 5 * ju.at("k").get<std::size_t>() + 1;
          }
          return n;
        }()) {
      throw CkptError(Errc::manifest_mismatch, "manifest lists tensors the model does not use");
    }
  } catch (const json::exception& e) {
    throw CkptError(Errc::bad_metadata, std::string("malformed model metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CkptError(Errc::bad_metadata, e.what());
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw CkptError(Errc::manifest_mismatch, e.what());
  }
  return m;
}

std::string encode_dataset(const data::LabeledSet& set, std::string_view domain_label) {
  set.validate(std::max<std::size_t>(set.classes(), 1));
  Writer w;
  w.add("images", set.images);
  std::vector<std::int32_t> labels(set.labels.begin(), set.labels.end());
  w.add<std::int32_t>("labels", Shape{labels.size()}, labels);
  json meta = {{"kind", "dataset"}, {"classes", set.classes()}, {"domain", std::string(domain_label)}};
  return w.finish(std::move(meta));
}

data::LabeledSet decode_dataset(std::string_view bytes) {
  const Parsed p = parse(bytes);
  data::LabeledSet set;
  std::size_t classes = 0;
  try {
    if (p.metadata.at("kind").get<std::string>() != "dataset") {
      throw CkptError(Errc::bad_metadata, "file does not hold a dataset");
    }
    classes = p.metadata.at("classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CkptError(Errc::bad_metadata, std::string("malformed dataset metadata: ") + e.what());
  }
  const auto it = p.tensors.find("labels");
  if (it == p.tensors.end() || it->second.shape.size() != 1) {
    throw CkptError(Errc::manifest_mismatch, "dataset lacks a rank-1 labels tensor");
  }
  const std::size_t n = it->second.shape[0];
  set.images = read_tensor<float>(p, "images", {n, data::kChannels, data::kImageSize, data::kImageSize});
  const auto labels = read_raw<std::int32_t>(p, "labels", {n});
  set.labels.assign(labels.begin(), labels.end());
  if (p.tensors.size() != 2) throw CkptError(Errc::manifest_mismatch, "dataset manifest lists extra tensors");
  try {
    set.validate(classes);
  } catch (const Error& e) {
    throw CkptError(Errc::manifest_mismatch, e.what());
  }
  return set;
}

FileInfo inspect(std::string_view bytes) {
  const Parsed p = parse(bytes);
  FileInfo info;
  info.version = p.version;
  info.metadata_json = p.metadata.dump(2);
  try {
    info.kind = p.metadata.at("kind").get<std::string>();
    if (info.kind == "model") {
      info.form = parse_form(p.metadata.at("form").get<std::string>());
      info.precision = parse_precision(p.metadata.at("precision").get<std::string>());
      info.k = p.metadata.at("k").get<std::size_t>();
    } else if (info.kind != "dataset") {
      throw CkptError(Errc::bad_metadata, "unknown checkpoint kind '" + info.kind + "'");
    }
  } catch (const json::exception& e) {
    throw CkptError(Errc::bad_metadata, e.what());
  } catch (const std::invalid_argument& e) {
    throw CkptError(Errc::bad_metadata, e.what());
  }
  return info;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CkptError(Errc::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw CkptError(Errc::io, "read failed for " + path.string());
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CkptError(Errc::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CkptError(Errc::io, "write failed for " + path.string());
}

template std::string encode_model(const ModelBundle<float>&);
template std::string encode_model(const ModelBundle<double>&);
template ModelBundle<float> decode_model(std::string_view);
template ModelBundle<double> decode_model(std::string_view);

}  // namespace seprep::ckpt
