// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#include "fqconv/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "json.hpp"

#include "fqconv/error.hpp"

namespace fqconv {

static_assert(std::endian::native == std::endian::little, "archives are written in host byte order");

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const char* to_string(ArchiveKind kind) {
  switch (kind) {
    case ArchiveKind::kNetwork: return "network";
    case ArchiveKind::kInteger: return "integer";
    case ArchiveKind::kDataset: return "dataset";
  }
  return "?";
}

uint32_t checksum(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  size_t left = bytes.size();
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

namespace {

constexpr int kVersion = 1;

std::string hex32(uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

class BlobWriter {
 public:
  template <typename T>
  json add(const char* dtype, const Shape& shape, const T* data, size_t count) {
    json j;
    j["dtype"] = dtype;
    j["shape"] = shape;
    j["offset"] = bytes_.size();
    j["bytes"] = count * sizeof(T);
    bytes_.append(reinterpret_cast<const char*>(data), count * sizeof(T));
    return j;
  }
  json f32(const Tensor& t) { return add("f32", t.shape(), t.data().data(), static_cast<size_t>(t.size())); }
  json i8(const std::vector<int8_t>& v) { return add("i8", Shape{static_cast<int64_t>(v.size())}, v.data(), v.size()); }
  json i32(const std::vector<int32_t>& v) {
    return add("i32", Shape{static_cast<int64_t>(v.size())}, v.data(), v.size());
  }
  json i64(const std::vector<int64_t>& v) {
    return add("i64", Shape{static_cast<int64_t>(v.size())}, v.data(), v.size());
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class BlobReader {
 public:
  explicit BlobReader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  std::vector<T> read(const json& j, const char* dtype, Shape* shape_out = nullptr) const {
    try {
      if (j.at("dtype").get<std::string>() != dtype) {
        throw DataError(std::string("archive tensor has dtype ") + j.at("dtype").get<std::string>() + ", expected " +
                        dtype);
      }
      Shape shape = j.at("shape").get<Shape>();
      const uint64_t offset = j.at("offset").get<uint64_t>();
      const uint64_t nbytes = j.at("bytes").get<uint64_t>();
      for (int64_t d : shape) {
        if (d < 0) throw DataError("archive tensor has a negative dimension");
      }
      const uint64_t count = static_cast<uint64_t>(num_elements(shape));
      if (nbytes != count * sizeof(T) || offset > bytes_.size() || nbytes > bytes_.size() - offset) {
        throw DataError("archive tensor extent does not match its shape or the blob size");
      }
      std::vector<T> out(count);
      if (nbytes) std::memcpy(out.data(), bytes_.data() + offset, nbytes);
      if (shape_out) *shape_out = std::move(shape);
      return out;
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed tensor entry in manifest: ") + e.what());
    }
  }

  Tensor f32(const json& j) const {
    Shape shape;
    std::vector<float> v = read<float>(j, "f32", &shape);
    return Tensor(std::move(shape), std::move(v));
  }

 private:
  std::string bytes_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + p.string());
}

void write_archive(const fs::path& dir, ArchiveKind kind, json body, const BlobWriter& blob) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create archive directory " + dir.string() + ": " + ec.message());
  json m;
  m["format"] = "fqconv";
  m["version"] = kVersion;
  m["kind"] = to_string(kind);
  m["blob"] = kBlobName;
  m["blob_bytes"] = blob.bytes().size();
  m["checksum"] = "crc32:" + hex32(checksum(blob.bytes()));
  for (auto& [k, v] : body.items()) m[k] = std::move(v);
  write_file(dir / kBlobName, blob.bytes());
  write_file(dir / kManifestName, m.dump(2) + "\n");
}

json read_manifest(const fs::path& dir) {
  const fs::path mp = dir / kManifestName;
  if (!fs::exists(mp)) throw DataError("not an archive: " + mp.string() + " is missing");
  try {
    json m = json::parse(read_file(mp));
    if (m.at("format").get<std::string>() != "fqconv") throw DataError("unknown archive format in " + mp.string());
    if (m.at("version").get<int>() != kVersion) throw DataError("unsupported archive version in " + mp.string());
    return m;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + mp.string() + ": " + e.what());
  }
}

BlobReader read_blob(const fs::path& dir, const json& m, ArchiveKind expected) {
  if (m.at("kind").get<std::string>() != to_string(expected)) {
    throw DataError("archive " + dir.string() + " holds a " + m.at("kind").get<std::string>() + ", expected a " +
                    to_string(expected));
  }
  std::string bytes = read_file(dir / kBlobName);
  if (bytes.size() != m.at("blob_bytes").get<uint64_t>()) throw DataError("blob size mismatch in " + dir.string());
  if (m.at("checksum").get<std::string>() != "crc32:" + hex32(checksum(bytes))) {
    throw DataError("checksum mismatch in " + dir.string());
  }
  return BlobReader(std::move(bytes));
}

json quant_json(const QuantAttachment& q) {
  json j;
  j["bits"] = q.bits;
  j["lower_bound"] = q.lower_bound;
  j["scale_param"] = q.scale_param;
  return j;
}

QuantAttachment quant_from(const json& j) {
  QuantAttachment q;
  q.bits = j.at("bits").get<int>();
  q.lower_bound = j.at("lower_bound").get<float>();
  q.scale_param = j.at("scale_param").get<int>();
  return q;
}

json config_json(const QuantConfig& c) {
  json j;
  j["bits"] = c.bits;
  j["lower_bound"] = c.lower_bound;
  j["log_scale"] = c.log_scale;
  return j;
}

QuantConfig config_from(const json& j) {
  QuantConfig c;
  c.bits = j.at("bits").get<int>();
  c.lower_bound = j.at("lower_bound").get<float>();
  c.log_scale = j.at("log_scale").get<float>();
  return c;
}

template <typename F>
auto guarded(const fs::path& dir, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const StructuralError& e) {
    throw DataError("archive " + dir.string() + " holds an invalid network: " + e.what());
  }
}

}  // namespace

void save_network(const NetworkArchive& a, const fs::path& dir) {
  const Network& net = a.net;
  BlobWriter blob;
  json body;
  body["arch"] = net.arch;
  body["mode"] = to_string(net.mode);
  body["input_shape"] = net.input_shape;
  body["num_classes"] = net.num_classes;
  json prov = json::object();
  for (const auto& [k, v] : a.provenance) prov[k] = v;
  body["provenance"] = prov;
  json params = json::array();
  for (const Param& p : net.params) {
    json j;
    j["name"] = p.name;
    j["role"] = to_string(p.role);
    j["initialized"] = p.initialized;
    j["trainable"] = p.trainable;
    j["tensor"] = blob.f32(p.value);
    params.push_back(std::move(j));
  }
  json nodes = json::array();
  for (const Node& n : net.nodes) {
    json j;
    j["kind"] = to_string(n.kind);
    j["name"] = n.name;
    j["inputs"] = n.inputs;
    switch (n.kind) {
      case NodeKind::kDense:
      case NodeKind::kConv1d:
      case NodeKind::kConv2d:
        j["weight"] = n.weight;
        j["bias"] = n.bias;
        if (n.kind != NodeKind::kDense) {
          j["dilation"] = n.dilation;
          j["stride"] = n.stride;
          j["padding"] = n.padding;
        }
        j["weight_quant"] = n.weight_quant ? quant_json(*n.weight_quant) : json(nullptr);
        break;
      case NodeKind::kBatchNorm:
        j["gamma"] = n.gamma;
        j["beta"] = n.beta;
        j["running_mean"] = n.running_mean;
        j["running_var"] = n.running_var;
        j["updates"] = n.bn_updates;
        j["eps"] = n.eps;
        j["momentum"] = n.momentum;
        break;
      case NodeKind::kQuantize:
        j["quant"] = quant_json(n.quant);
        break;
      default:
        break;
    }
    nodes.push_back(std::move(j));
  }
  body["params"] = std::move(params);
  body["nodes"] = std::move(nodes);
  write_archive(dir, ArchiveKind::kNetwork, std::move(body), blob);
}

void save_network(const Network& net, const fs::path& dir) { save_network(NetworkArchive{net, {}}, dir); }

NetworkArchive load_network(const fs::path& dir) {
  const json m = read_manifest(dir);
  return guarded(dir, [&] {
    const BlobReader blob = read_blob(dir, m, ArchiveKind::kNetwork);
    NetworkArchive a;
    Network& net = a.net;
    net.arch = m.at("arch").get<std::string>();
    net.mode = net_mode_from_string(m.at("mode").get<std::string>());
    net.input_shape = m.at("input_shape").get<Shape>();
    net.num_classes = m.at("num_classes").get<int>();
    for (const auto& [k, v] : m.at("provenance").items()) a.provenance[k] = v.get<std::string>();
    for (const json& j : m.at("params")) {
      Param p;
      p.name = j.at("name").get<std::string>();
      p.role = param_role_from_string(j.at("role").get<std::string>());
      p.initialized = j.at("initialized").get<bool>();
      p.trainable = j.at("trainable").get<bool>();
      p.value = blob.f32(j.at("tensor"));
      net.params.push_back(std::move(p));
    }
    for (const json& j : m.at("nodes")) {
      Node n;
      n.kind = node_kind_from_string(j.at("kind").get<std::string>());
      n.name = j.at("name").get<std::string>();
      n.inputs = j.at("inputs").get<std::vector<int>>();
      switch (n.kind) {
        case NodeKind::kDense:
        case NodeKind::kConv1d:
        case NodeKind::kConv2d:
          n.weight = j.at("weight").get<int>();
          n.bias = j.at("bias").get<int>();
          if (n.kind != NodeKind::kDense) {
            n.dilation = j.at("dilation").get<int>();
            n.stride = j.at("stride").get<int>();
            n.padding = j.at("padding").get<int>();
          }
          if (!j.at("weight_quant").is_null()) n.weight_quant = quant_from(j.at("weight_quant"));
          break;
        case NodeKind::kBatchNorm:
          n.gamma = j.at("gamma").get<int>();
          n.beta = j.at("beta").get<int>();
          n.running_mean = j.at("running_mean").get<int>();
          n.running_var = j.at("running_var").get<int>();
          n.bn_updates = j.at("updates").get<int64_t>();
          n.eps = j.at("eps").get<float>();
          n.momentum = j.at("momentum").get<float>();
          break;
        case NodeKind::kQuantize:
          n.quant = quant_from(j.at("quant"));
          break;
        default:
          break;
      }
      net.nodes.push_back(std::move(n));
    }
    net.validate();
    return a;
  });
}

void save_integer_model(const IntegerModel& model, const fs::path& dir) {
  BlobWriter blob;
  json body;
  body["input_shape"] = model.input_shape;
  body["num_classes"] = model.num_classes;
  body["head"] = model.has_head ? json{{"weight", blob.f32(model.head_weight)}, {"bias", blob.f32(model.head_bias)}}
                                : json(nullptr);
  body["entry"] = config_json(model.entry);
  json slots = json::array();
  for (size_t i = 0; i < model.slot_configs.size(); ++i) {
    json s = config_json(model.slot_configs[i]);
    s["source_node"] = model.slot_nodes[i];
    slots.push_back(std::move(s));
  }
  body["slots"] = std::move(slots);
  json plans = json::array();
  for (const IntegerLayerPlan& p : model.plans) {
    json j;
    j["name"] = p.name;
    j["kind"] = p.kind == IntegerLayerPlan::Kind::kConv ? "conv" : "add";
    j["input"] = p.input;
    j["input_b"] = p.input_b;
    j["output"] = p.output;
    j["input_config"] = config_json(p.input_cfg);
    j["output_config"] = config_json(p.output_cfg);
    j["min_code"] = p.min_code;
    j["max_code"] = p.max_code;
    j["accumulator_bound"] = p.accumulator_bound;
    if (p.kind == IntegerLayerPlan::Kind::kConv) {
      j["op"] = to_string(p.conv_kind);
      j["kernel_shape"] = p.kernel_shape;
      j["dilation"] = p.dilation;
      j["stride"] = p.stride;
      j["padding"] = p.padding;
      j["weight_config"] = config_json(p.weight);
      j["gain"] = p.gain;
      j["accumulator_bits"] = accumulator_sizing(p);
      j["weight_codes"] = blob.i8(p.weight_codes);
      j["thresholds"] = blob.i64(p.thresholds);
    } else {
      j["input_b_config"] = config_json(p.weight);
    }
    plans.push_back(std::move(j));
  }
  body["plans"] = std::move(plans);
  body["output_slot"] = model.output_slot;
  body["classifier"] = model.has_classifier ? json{{"weight", blob.f32(model.classifier_weight)},
                                                   {"bias", blob.f32(model.classifier_bias)}}
                                            : json(nullptr);
  write_archive(dir, ArchiveKind::kInteger, std::move(body), blob);
}

IntegerModel load_integer_model(const fs::path& dir) {
  const json m = read_manifest(dir);
  return guarded(dir, [&] {
    const BlobReader blob = read_blob(dir, m, ArchiveKind::kInteger);
    IntegerModel model;
    model.input_shape = m.at("input_shape").get<Shape>();
    model.num_classes = m.at("num_classes").get<int>();
    if (!m.at("head").is_null()) {
      model.has_head = true;
      model.head_weight = blob.f32(m.at("head").at("weight"));
      model.head_bias = blob.f32(m.at("head").at("bias"));
    }
    model.entry = config_from(m.at("entry"));
    for (const json& s : m.at("slots")) {
      model.slot_configs.push_back(config_from(s));
      model.slot_nodes.push_back(s.at("source_node").get<int>());
    }
    const int nslots = static_cast<int>(model.slot_configs.size());
    for (const json& j : m.at("plans")) {
      IntegerLayerPlan p;
      p.name = j.at("name").get<std::string>();
      const std::string kind = j.at("kind").get<std::string>();
      if (kind != "conv" && kind != "add") throw DataError("unknown plan kind '" + kind + "'");
      p.kind = kind == "conv" ? IntegerLayerPlan::Kind::kConv : IntegerLayerPlan::Kind::kAdd;
      p.input = j.at("input").get<int>();
      p.input_b = j.at("input_b").get<int>();
      p.output = j.at("output").get<int>();
      if (p.input < 0 || p.input >= nslots || p.output <= 0 || p.output >= nslots || p.input_b >= nslots) {
        throw DataError("plan '" + p.name + "' references a missing code slot");
      }
      p.input_cfg = config_from(j.at("input_config"));
      p.output_cfg = config_from(j.at("output_config"));
      p.min_code = j.at("min_code").get<int32_t>();
      p.max_code = j.at("max_code").get<int32_t>();
      p.accumulator_bound = j.at("accumulator_bound").get<int64_t>();
      if (p.kind == IntegerLayerPlan::Kind::kConv) {
        p.conv_kind = node_kind_from_string(j.at("op").get<std::string>());
        p.kernel_shape = j.at("kernel_shape").get<Shape>();
        p.dilation = j.at("dilation").get<int>();
        p.stride = j.at("stride").get<int>();
        p.padding = j.at("padding").get<int>();
        p.weight = config_from(j.at("weight_config"));
        p.gain = j.at("gain").get<float>();
        p.weight_codes = blob.read<int8_t>(j.at("weight_codes"), "i8");
        p.thresholds = blob.read<int64_t>(j.at("thresholds"), "i64");
        if (static_cast<int64_t>(p.weight_codes.size()) != num_elements(p.kernel_shape)) {
          throw DataError("plan '" + p.name + "' weight codes do not match the kernel shape");
        }
        if (static_cast<int64_t>(p.thresholds.size()) != static_cast<int64_t>(p.max_code) - p.min_code) {
          throw DataError("plan '" + p.name + "' has the wrong number of thresholds");
        }
      } else {
        p.weight = config_from(j.at("input_b_config"));
      }
      model.plans.push_back(std::move(p));
    }
    model.output_slot = m.at("output_slot").get<int>();
    if (!m.at("classifier").is_null()) {
      model.has_classifier = true;
      model.classifier_weight = blob.f32(m.at("classifier").at("weight"));
      model.classifier_bias = blob.f32(m.at("classifier").at("bias"));
    }
    return model;
  });
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  data.validate();
  BlobWriter blob;
  json body;
  body["num_classes"] = data.num_classes;
  body["samples"] = data.size();
  body["features"] = blob.f32(data.features);
  body["labels"] = blob.i32(std::vector<int32_t>(data.labels.begin(), data.labels.end()));
  std::vector<int8_t> split(data.split.size());
  for (size_t i = 0; i < split.size(); ++i) split[i] = static_cast<int8_t>(data.split[i]);
  body["split"] = blob.i8(split);
  body["split_codes"] = {to_string(Split::kTrain), to_string(Split::kVal), to_string(Split::kTest)};
  write_archive(dir, ArchiveKind::kDataset, std::move(body), blob);
}

Dataset load_dataset(const fs::path& dir) {
  const json m = read_manifest(dir);
  return guarded(dir, [&] {
    const BlobReader blob = read_blob(dir, m, ArchiveKind::kDataset);
    Dataset d;
    d.num_classes = m.at("num_classes").get<int>();
    d.features = blob.f32(m.at("features"));
    std::vector<int32_t> labels = blob.read<int32_t>(m.at("labels"), "i32");
    d.labels.assign(labels.begin(), labels.end());
    for (int8_t s : blob.read<int8_t>(m.at("split"), "i8")) {
      if (s < 0 || s > 2) throw DataError("dataset archive has an unknown split code");
      d.split.push_back(static_cast<Split>(s));
    }
    d.validate();
    return d;
  });
}

ArchiveKind archive_kind(const fs::path& dir) {
  const json m = read_manifest(dir);
  const std::string k = m.value("kind", "");
  if (k == "network") return ArchiveKind::kNetwork;
  if (k == "integer") return ArchiveKind::kInteger;
  if (k == "dataset") return ArchiveKind::kDataset;
  throw DataError("archive " + dir.string() + " has unknown kind '" + k + "'");
}

}  // namespace fqconv
