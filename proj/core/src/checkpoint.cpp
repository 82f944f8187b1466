#include "fdac/checkpoint.hpp"

#include "fdac/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fdac {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'D', 'A', 'C', 'T', 'N', 'S', 'R'};

void append_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_uint(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  if (offset + static_cast<std::size_t>(width) > bytes.size()) {
    throw SchemaError("truncated tensor container");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes[offset + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

json architecture_to_json(const BackboneConfig& c) {
  return {{"image_side", c.image_side},       {"patch_side", c.patch_side},
          {"channels", c.channels},           {"depth", c.depth},
          {"width", c.width},                 {"heads", c.heads},
          {"mlp_hidden", c.mlp_hidden},       {"num_classes", c.num_classes},
          {"projector_dim", c.projector_dim}, {"projector_hidden", c.projector_hidden},
          {"activation", c.activation},       {"layer_norm_eps", c.layer_norm_eps},
          {"prototype_init_norm", c.prototype_init_norm}};
}

BackboneConfig architecture_from_json(const json& j) {
  BackboneConfig c;
  try {
    c.image_side = j.at("image_side").get<int>();
    c.patch_side = j.at("patch_side").get<int>();
    c.channels = j.at("channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.width = j.at("width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.projector_dim = j.at("projector_dim").get<int>();
    c.projector_hidden = j.at("projector_hidden").get<int>();
    c.activation = j.at("activation").get<std::string>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    c.prototype_init_norm = j.value("prototype_init_norm", 1.0);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad architecture header: ") + e.what());
  }
  return c;
}

struct ArraySpec {
  std::string name;
  Index rows;
  Index cols;
  const double* data;
};

Bytes write_container(const std::string& kind, const json& extra, const std::vector<ArraySpec>& arrays) {
  json header = extra;
  header["schema_version"] = kCheckpointSchemaVersion;
  header["kind"] = kind;
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    table.push_back({{"name", a.name},
                     {"shape", {a.rows, a.cols}},
                     {"dtype", "float32"},
                     {"order", "column_major"},
                     {"offset", offset}});
    offset += static_cast<std::size_t>(a.rows * a.cols) * 4;
  }
  header["arrays"] = std::move(table);
  const std::string text = header.dump();

  Bytes out;
  out.reserve(sizeof(kMagic) + 12 + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  append_u32(out, kCheckpointSchemaVersion);
  append_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : arrays) {
    for (Index i = 0; i < a.rows * a.cols; ++i) append_float32(out, a.data[i]);
  }
  return out;
}

struct Container {
  json header;
  std::span<const std::uint8_t> payload;
};

Container read_container(std::span<const std::uint8_t> bytes, const std::string& expected_kind) {
  if (bytes.size() < sizeof(kMagic) + 12 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError("not a tensor container (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(read_uint(bytes, 8, 4));
  if (version != kCheckpointSchemaVersion) {
    throw SchemaError("unsupported schema_version " + std::to_string(version));
  }
  const auto header_len = read_uint(bytes, 12, 8);
  const std::size_t header_start = 20;
  if (header_start + header_len > bytes.size()) throw SchemaError("truncated container header");
  Container c;
  try {
    c.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                           bytes.begin() + static_cast<std::ptrdiff_t>(header_start + header_len));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("container header is not valid JSON: ") + e.what());
  }
  if (c.header.value("schema_version", 0u) != kCheckpointSchemaVersion) {
    throw SchemaError("header schema_version mismatch");
  }
  if (c.header.value("kind", std::string()) != expected_kind) {
    throw SchemaError("expected a '" + expected_kind + "' container");
  }
  c.payload = bytes.subspan(header_start + header_len);
  return c;
}

// Reads array `name` into `dst` (rows * cols doubles, column-major).
void read_array(const Container& c, const std::string& name, Index rows, Index cols, double* dst) {
  for (const auto& entry : c.header.at("arrays")) {
    if (entry.at("name").get<std::string>() != name) continue;
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] != rows || shape[1] != cols) {
      throw SchemaError("array '" + name + "' has an unexpected shape");
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(rows * cols) * 4 > c.payload.size()) {
      throw SchemaError("array '" + name + "' runs past the payload");
    }
    for (Index i = 0; i < rows * cols; ++i) {
      dst[i] = read_float32(c.payload, offset + static_cast<std::size_t>(i) * 4);
    }
    return;
  }
  throw SchemaError("array '" + name + "' missing from container");
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void append_float32(Bytes& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  append_u32(out, bits);
}

float read_float32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(read_uint(bytes, offset, 4)));
}

Bytes serialize_checkpoint(const BackboneConfig& config, const ModelParams& params) {
  std::vector<ArraySpec> arrays;
  for (const auto& g : params.layout().groups()) {
    arrays.push_back({g.name, g.rows, g.cols, params.values().data() + g.offset});
  }
  return write_container("model", {{"architecture", architecture_to_json(config)}}, arrays);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  const Container c = read_container(bytes, "model");
  Checkpoint ckpt;
  ckpt.config = architecture_from_json(c.header.at("architecture"));
  VisionTransformer model(ckpt.config);
  ckpt.params = model.zeros();
  for (const auto& g : ckpt.params.layout().groups()) {
    read_array(c, g.name, g.rows, g.cols, ckpt.params.values().data() + g.offset);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const BackboneConfig& config,
                     const ModelParams& params) {
  const Bytes bytes = serialize_checkpoint(config, params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return deserialize_checkpoint(bytes);
}

Bytes serialize_prototypes(const PrototypeSet& prototypes) {
  const json meta = {{"source_id", prototypes.source_id}, {"class_labels", prototypes.class_labels}};
  return write_container("prototypes", {{"meta", meta}},
                         {{"vectors", prototypes.vectors.rows(), prototypes.vectors.cols(),
                           prototypes.vectors.data()}});
}

PrototypeSet deserialize_prototypes(std::span<const std::uint8_t> bytes) {
  const Container c = read_container(bytes, "prototypes");
  PrototypeSet set;
  set.source_id = c.header.at("meta").at("source_id").get<int>();
  set.class_labels = c.header.at("meta").at("class_labels").get<std::vector<int>>();
  const auto& entry = c.header.at("arrays").at(0);
  const auto shape = entry.at("shape").get<std::vector<Index>>();
  set.vectors.resize(shape.at(0), shape.at(1));
  read_array(c, "vectors", shape[0], shape[1], set.vectors.data());
  return set;
}

}  // namespace fdac
