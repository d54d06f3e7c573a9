#include "onnxnet/onnx_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "protowire.hpp"

namespace onnxnet {

namespace {

using wire::Field;
using wire::Reader;
using wire::WireType;
using wire::Writer;

// Field numbers from onnx.proto.
namespace model_field {
constexpr std::uint32_t ir_version = 1, producer_name = 2, graph = 7, opset_import = 8;
}
namespace opset_field {
constexpr std::uint32_t domain = 1, version = 2;
}
namespace graph_field {
constexpr std::uint32_t node = 1, name = 2, initializer = 5, input = 11, output = 12, value_info = 13,
                        sparse_initializer = 15;
}
namespace node_field {
constexpr std::uint32_t input = 1, output = 2, name = 3, op_type = 4, attribute = 5, domain = 7;
}
namespace attr_field {
constexpr std::uint32_t name = 1, f = 2, i = 3, s = 4, t = 5, g = 6, floats = 7, ints = 8, strings = 9,
                        tensors = 10, graphs = 11, type = 20;
}
namespace tensor_field {
constexpr std::uint32_t dims = 1, data_type = 2, float_data = 4, int32_data = 5, string_data = 6,
                        int64_data = 7, name = 8, raw_data = 9, double_data = 10, uint64_data = 11,
                        data_location = 14;
}
namespace value_info_field {
constexpr std::uint32_t name = 1, type = 2;
}
namespace type_field {
constexpr std::uint32_t tensor_type = 1;
}
namespace tensor_type_field {
constexpr std::uint32_t elem_type = 1, shape = 2;
}
namespace shape_field {
constexpr std::uint32_t dim = 1;
}
namespace dim_field {
constexpr std::uint32_t dim_value = 1, dim_param = 2;
}

enum AttrType : std::int64_t {
  kUndefined = 0,
  kFloat = 1,
  kInt = 2,
  kString = 3,
  kTensor = 4,
  kGraph = 5,
  kFloats = 6,
  kInts = 7,
  kStrings = 8,
  kTensors = 9,
  kGraphs = 10,
  kSparseTensor = 11,
};

[[noreturn]] void malformed(const std::string& why) { throw Error(ErrorCode::MalformedFile, why); }

std::string to_str(std::string_view v) { return std::string(v); }

// Collects a repeated scalar field that may arrive packed or unpacked.
template <typename Fn>
void repeated_varint(const Field& f, Fn&& push) {
  if (f.type == WireType::LengthDelimited) {
    Reader r(f.bytes);
    while (!r.at_end()) push(r.read_varint());
  } else if (f.type == WireType::Varint) {
    push(f.varint);
  } else {
    malformed("unexpected wire type for repeated varint");
  }
}

template <typename Fn>
void repeated_fixed(const Field& f, std::size_t width, Fn&& push) {
  if (f.type == WireType::LengthDelimited) {
    if (f.bytes.size() % width != 0) malformed("packed fixed-width field has ragged length");
    for (std::size_t off = 0; off < f.bytes.size(); off += width) {
      std::uint64_t v = 0;
      for (std::size_t i = 0; i < width; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(f.bytes[off + i])) << (8 * i);
      }
      push(v);
    }
  } else if ((width == 4 && f.type == WireType::Fixed32) || (width == 8 && f.type == WireType::Fixed64)) {
    push(f.varint);
  } else {
    malformed("unexpected wire type for repeated fixed-width field");
  }
}

template <typename T>
void append_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

struct ParsedTensor {
  std::string name;
  TensorData data;
};

ParsedTensor parse_tensor(std::string_view bytes) {
  ParsedTensor t;
  std::vector<std::uint64_t> int_values;  // int32_data / int64_data / uint64_data
  std::vector<std::uint64_t> fixed32_values;
  std::vector<std::uint64_t> fixed64_values;
  bool has_raw = false;
  bool has_strings = false;
  bool external = false;
  Reader r(bytes);
  Field f;
  while (r.next(f)) {
    switch (f.number) {
      case tensor_field::dims:
        repeated_varint(f, [&](std::uint64_t v) { t.data.dims.push_back(static_cast<std::int64_t>(v)); });
        break;
      case tensor_field::data_type: t.data.elem_type = static_cast<ElemType>(f.varint); break;
      case tensor_field::float_data:
        repeated_fixed(f, 4, [&](std::uint64_t v) { fixed32_values.push_back(v); });
        break;
      case tensor_field::double_data:
        repeated_fixed(f, 8, [&](std::uint64_t v) { fixed64_values.push_back(v); });
        break;
      case tensor_field::int32_data:
      case tensor_field::int64_data:
      case tensor_field::uint64_data:
        repeated_varint(f, [&](std::uint64_t v) { int_values.push_back(v); });
        break;
      case tensor_field::string_data: has_strings = true; break;
      case tensor_field::name: t.name = to_str(f.bytes); break;
      case tensor_field::raw_data:
        has_raw = true;
        t.data.raw = to_str(f.bytes);
        break;
      case tensor_field::data_location: external = f.varint == 1; break;
      default: break;
    }
  }
  const ElemType type = t.data.elem_type;
  if (external || has_strings || elem_size(type) == 0) {
    t.data.has_payload = false;
    t.data.raw.clear();
    return t;
  }
  if (!has_raw) {
    std::string& raw = t.data.raw;
    switch (type) {
      case ElemType::Float:
        for (auto v : fixed32_values) append_le(raw, static_cast<std::uint32_t>(v));
        break;
      case ElemType::Double:
        for (auto v : fixed64_values) append_le(raw, v);
        break;
      case ElemType::Int64:
      case ElemType::Uint64:
        for (auto v : int_values) append_le(raw, v);
        break;
      case ElemType::Int32:
      case ElemType::Uint32:
        for (auto v : int_values) append_le(raw, static_cast<std::uint32_t>(v));
        break;
      case ElemType::Int16:
      case ElemType::Uint16:
      case ElemType::Float16:
      case ElemType::Bfloat16:
        for (auto v : int_values) append_le(raw, static_cast<std::uint16_t>(v));
        break;
      case ElemType::Int8:
      case ElemType::Uint8:
      case ElemType::Bool:
        for (auto v : int_values) append_le(raw, static_cast<std::uint8_t>(v));
        break;
      default: break;
    }
  }
  std::int64_t n = 1;
  for (auto d : t.data.dims) {
    if (d < 0) malformed("tensor '" + t.name + "' has a negative dimension");
    n *= d;
  }
  if (!has_raw && t.data.raw.empty() && n > 0 && int_values.empty() && fixed32_values.empty() &&
      fixed64_values.empty()) {
    t.data.has_payload = false;
    return t;
  }
  if (t.data.raw.size() != static_cast<std::size_t>(n) * elem_size(type)) {
    malformed("tensor '" + t.name + "' payload does not match its dims");
  }
  return t;
}

struct ParsedValueInfo {
  std::string name;
  ElemType elem_type = ElemType::Undefined;
  TensorShape shape = TensorShape::unknown_rank();
};

TensorShape parse_shape(std::string_view bytes) {
  std::vector<Dim> dims;
  Reader r(bytes);
  Field f;
  while (r.next(f)) {
    if (f.number != shape_field::dim) continue;
    Dim d;
    Reader dr(f.bytes);
    Field df;
    while (dr.next(df)) {
      if (df.number == dim_field::dim_value) {
        const auto v = static_cast<std::int64_t>(df.varint);
        if (v >= 0) d = v;
      }
    }
    dims.push_back(d);
  }
  return TensorShape(std::move(dims));
}

ParsedValueInfo parse_value_info(std::string_view bytes) {
  ParsedValueInfo vi;
  Reader r(bytes);
  Field f;
  while (r.next(f)) {
    if (f.number == value_info_field::name) {
      vi.name = to_str(f.bytes);
    } else if (f.number == value_info_field::type) {
      Reader tr(f.bytes);
      Field tf;
      while (tr.next(tf)) {
        if (tf.number != type_field::tensor_type) continue;
        Reader ttr(tf.bytes);
        Field ttf;
        while (ttr.next(ttf)) {
          if (ttf.number == tensor_type_field::elem_type) {
            vi.elem_type = static_cast<ElemType>(ttf.varint);
          } else if (ttf.number == tensor_type_field::shape) {
            vi.shape = parse_shape(ttf.bytes);
          }
        }
      }
    }
  }
  return vi;
}

std::pair<std::string, AttributeValue> parse_attribute(std::string_view bytes, const std::string& op_type) {
  std::string name;
  std::int64_t type = kUndefined;
  std::optional<float> f_val;
  std::optional<std::int64_t> i_val;
  std::optional<std::string> s_val;
  std::optional<TensorData> t_val;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
  std::vector<std::string> strings;
  bool has_graph = false;
  bool has_list = false;
  Reader r(bytes);
  Field f;
  while (r.next(f)) {
    switch (f.number) {
      case attr_field::name: name = to_str(f.bytes); break;
      case attr_field::type: type = static_cast<std::int64_t>(f.varint); break;
      case attr_field::f: f_val = std::bit_cast<float>(static_cast<std::uint32_t>(f.varint)); break;
      case attr_field::i: i_val = static_cast<std::int64_t>(f.varint); break;
      case attr_field::s: s_val = to_str(f.bytes); break;
      case attr_field::t: t_val = parse_tensor(f.bytes).data; break;
      case attr_field::g:
      case attr_field::graphs: has_graph = true; break;
      case attr_field::floats:
        has_list = true;
        repeated_fixed(f, 4, [&](std::uint64_t v) { floats.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(v))); });
        break;
      case attr_field::ints:
        has_list = true;
        repeated_varint(f, [&](std::uint64_t v) { ints.push_back(static_cast<std::int64_t>(v)); });
        break;
      case attr_field::strings:
        has_list = true;
        strings.push_back(to_str(f.bytes));
        break;
      case attr_field::tensors: has_list = true; break;
      default: break;
    }
  }
  if (has_graph || type == kGraph || type == kGraphs) {
    throw Error(ErrorCode::UnsupportedConstruct,
                "attribute '" + name + "' of " + op_type + " carries a subgraph");
  }
  if (type == kUndefined) {
    // Pre-IR3 files omit the type tag; infer it from the populated field.
    if (f_val) type = kFloat;
    else if (i_val) type = kInt;
    else if (s_val) type = kString;
    else if (t_val) type = kTensor;
    else if (!floats.empty()) type = kFloats;
    else if (!ints.empty()) type = kInts;
    else if (!strings.empty()) type = kStrings;
    else if (has_list) type = kInts;
  }
  switch (type) {
    case kFloat: return {name, f_val.value_or(0.0f)};
    case kInt: return {name, i_val.value_or(0)};
    case kString: return {name, s_val.value_or("")};
    case kTensor:
      if (!t_val) malformed("tensor attribute '" + name + "' has no tensor");
      return {name, *t_val};
    case kFloats: return {name, floats};
    case kInts: return {name, ints};
    case kStrings: return {name, strings};
    default:
      throw Error(ErrorCode::UnsupportedConstruct,
                  "attribute '" + name + "' of " + op_type + " has unsupported type " + std::to_string(type));
  }
}

NodeSpec parse_node(std::string_view bytes, NodeId id) {
  NodeSpec n;
  n.id = id;
  Reader r(bytes);
  Field f;
  while (r.next(f)) {
    switch (f.number) {
      case node_field::input: n.inputs.push_back(to_str(f.bytes)); break;
      case node_field::output: n.outputs.push_back(to_str(f.bytes)); break;
      case node_field::name: n.name = to_str(f.bytes); break;
      case node_field::op_type: n.op_type = to_str(f.bytes); break;
      case node_field::domain: n.domain = to_str(f.bytes); break;
      default: break;
    }
  }
  if (n.op_type == "If" || n.op_type == "Loop" || n.op_type == "Scan") {
    throw Error(ErrorCode::UnsupportedConstruct, n.op_type + " nodes with subgraphs are not supported");
  }
  Reader ar(bytes);
  while (ar.next(f)) {
    if (f.number == node_field::attribute) {
      auto [key, value] = parse_attribute(f.bytes, n.op_type);
      n.attributes.insert_or_assign(std::move(key), std::move(value));
    }
  }
  return n;
}

bool is_default_domain(std::string_view domain) { return domain.empty() || domain == "ai.onnx"; }

}  // namespace

GraphIR parse_onnx(std::string_view bytes, const ParseOptions& options) {
  GraphIR g;
  std::optional<std::string_view> graph_bytes;
  std::optional<std::int64_t> default_opset;
  Reader r(bytes);
  Field f;
  while (r.next(f)) {
    switch (f.number) {
      case model_field::ir_version: g.meta.ir_version = static_cast<std::int64_t>(f.varint); break;
      case model_field::producer_name: g.meta.producer_name = to_str(f.bytes); break;
      case model_field::graph:
        if (f.type != WireType::LengthDelimited) malformed("graph field has the wrong wire type");
        graph_bytes = f.bytes;
        break;
      case model_field::opset_import: {
        std::string domain;
        std::int64_t version = 0;
        Reader orr(f.bytes);
        Field of;
        while (orr.next(of)) {
          if (of.number == opset_field::domain) domain = to_str(of.bytes);
          if (of.number == opset_field::version) version = static_cast<std::int64_t>(of.varint);
        }
        if (is_default_domain(domain)) {
          default_opset = version;
        } else {
          g.meta.extra_opsets.emplace_back(domain, version);
        }
        break;
      }
      default: break;
    }
  }
  if (!graph_bytes) malformed("model has no graph");
  if (!default_opset) malformed("model does not import the default ONNX opset");
  if (*default_opset < options.min_opset || *default_opset > options.max_opset) {
    throw Error(ErrorCode::UnsupportedConstruct,
                "opset " + std::to_string(*default_opset) + " outside supported range " +
                    std::to_string(options.min_opset) + "-" + std::to_string(options.max_opset));
  }
  g.meta.opset = *default_opset;

  std::vector<ParsedValueInfo> inputs, outputs, infos;
  NodeId next_id = 0;
  Reader gr(*graph_bytes);
  while (gr.next(f)) {
    switch (f.number) {
      case graph_field::node: {
        NodeSpec n = parse_node(f.bytes, next_id++);
        g.provenance[n.id] = {n.id};
        g.nodes.emplace(n.id, std::move(n));
        break;
      }
      case graph_field::name: g.meta.graph_name = to_str(f.bytes); break;
      case graph_field::initializer: {
        ParsedTensor t = parse_tensor(f.bytes);
        if (t.name.empty()) malformed("initializer without a name");
        ValueInfo v;
        v.name = t.name;
        v.shape = TensorShape::from_dims(t.data.dims);
        v.elem_type = t.data.elem_type;
        v.role = ValueRole::Parameter;
        v.data = std::move(t.data);
        if (!g.values.emplace(v.name, std::move(v)).second) malformed("duplicate initializer '" + t.name + "'");
        break;
      }
      case graph_field::sparse_initializer:
        throw Error(ErrorCode::UnsupportedConstruct, "sparse initializers are not supported");
      case graph_field::input: inputs.push_back(parse_value_info(f.bytes)); break;
      case graph_field::output: outputs.push_back(parse_value_info(f.bytes)); break;
      case graph_field::value_info: infos.push_back(parse_value_info(f.bytes)); break;
      default: break;
    }
  }

  // Older exporters list initializers among the graph inputs as well.
  for (auto& in : inputs) {
    if (in.name.empty()) malformed("graph input without a name");
    if (g.values.count(in.name)) continue;
    ValueInfo v;
    v.name = in.name;
    v.shape = in.shape;
    v.elem_type = in.elem_type;
    v.role = ValueRole::GraphInput;
    g.values.emplace(v.name, std::move(v));
    g.graph_inputs.push_back(in.name);
  }
  for (const auto& out : outputs) {
    if (out.name.empty()) malformed("graph output without a name");
    g.graph_outputs.push_back(out.name);
  }
  relink(g);
  auto annotate = [&](const ParsedValueInfo& info) {
    auto it = g.values.find(info.name);
    if (it == g.values.end() || it->second.role == ValueRole::Parameter ||
        it->second.role == ValueRole::GraphInput) {
      return;
    }
    it->second.shape = info.shape;
    it->second.elem_type = info.elem_type;
  };
  for (const auto& info : infos) annotate(info);
  for (const auto& info : outputs) annotate(info);
  validate(g);
  return g;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

GraphIR parse_onnx_file(const std::filesystem::path& path, const ParseOptions& options) {
  return parse_onnx(read_file_bytes(path), options);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Writer write_tensor(const std::string& name, const TensorData& t) {
  Writer w;
  for (auto d : t.dims) w.varint_field(tensor_field::dims, static_cast<std::uint64_t>(d));
  w.varint_field(tensor_field::data_type, static_cast<std::uint64_t>(t.elem_type));
  if (!name.empty()) w.bytes_field(tensor_field::name, name);
  if (t.has_payload) w.bytes_field(tensor_field::raw_data, t.raw);
  return w;
}

Writer write_value_info(const std::string& name, ElemType type, const TensorShape& shape) {
  Writer tensor_type;
  tensor_type.varint_field(tensor_type_field::elem_type, static_cast<std::uint64_t>(type));
  if (shape.rank_known()) {
    Writer s;
    for (const auto& d : shape.dims()) {
      Writer dw;
      if (d) dw.varint_field(dim_field::dim_value, static_cast<std::uint64_t>(*d));
      s.message_field(shape_field::dim, dw);
    }
    tensor_type.message_field(tensor_type_field::shape, s);
  }
  Writer type_proto;
  type_proto.message_field(type_field::tensor_type, tensor_type);
  Writer w;
  w.bytes_field(value_info_field::name, name);
  w.message_field(value_info_field::type, type_proto);
  return w;
}

Writer write_attribute(const std::string& name, const AttributeValue& value) {
  Writer w;
  w.bytes_field(attr_field::name, name);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          w.varint_field(attr_field::i, static_cast<std::uint64_t>(v));
          w.varint_field(attr_field::type, kInt);
        } else if constexpr (std::is_same_v<T, float>) {
          w.fixed32_field(attr_field::f, std::bit_cast<std::uint32_t>(v));
          w.varint_field(attr_field::type, kFloat);
        } else if constexpr (std::is_same_v<T, std::string>) {
          w.bytes_field(attr_field::s, v);
          w.varint_field(attr_field::type, kString);
        } else if constexpr (std::is_same_v<T, std::vector<std::int64_t>>) {
          for (auto x : v) w.varint_field(attr_field::ints, static_cast<std::uint64_t>(x));
          w.varint_field(attr_field::type, kInts);
        } else if constexpr (std::is_same_v<T, std::vector<float>>) {
          for (auto x : v) w.fixed32_field(attr_field::floats, std::bit_cast<std::uint32_t>(x));
          w.varint_field(attr_field::type, kFloats);
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
          for (const auto& x : v) w.bytes_field(attr_field::strings, x);
          w.varint_field(attr_field::type, kStrings);
        } else if constexpr (std::is_same_v<T, TensorData>) {
          w.message_field(attr_field::t, write_tensor("", v));
          w.varint_field(attr_field::type, kTensor);
        }
      },
      value);
  return w;
}

}  // namespace

std::string serialize(const GraphIR& g) {
  Writer graph;
  for (NodeId id : topo_order(g)) {
    const auto& n = g.node(id);
    Writer nw;
    for (const auto& in : n.inputs) nw.bytes_field(node_field::input, in);
    for (const auto& out : n.outputs) nw.bytes_field(node_field::output, out);
    if (!n.name.empty()) nw.bytes_field(node_field::name, n.name);
    nw.bytes_field(node_field::op_type, n.op_type);
    for (const auto& [key, value] : n.attributes) nw.message_field(node_field::attribute, write_attribute(key, value));
    if (!n.domain.empty()) nw.bytes_field(node_field::domain, n.domain);
    graph.message_field(graph_field::node, nw);
  }
  graph.bytes_field(graph_field::name, g.meta.graph_name);
  for (const auto& [name, v] : g.values) {
    if (v.role == ValueRole::Parameter && v.data) {
      graph.message_field(graph_field::initializer, write_tensor(name, *v.data));
    }
  }
  for (const auto& name : g.graph_inputs) {
    const auto& v = g.value(name);
    graph.message_field(graph_field::input, write_value_info(name, v.elem_type, v.shape));
  }
  for (const auto& name : g.graph_outputs) {
    const auto& v = g.value(name);
    graph.message_field(graph_field::output, write_value_info(name, v.elem_type, v.shape));
  }
  for (const auto& [name, v] : g.values) {
    if (v.role == ValueRole::Activation && v.shape.rank_known()) {
      graph.message_field(graph_field::value_info, write_value_info(name, v.elem_type, v.shape));
    }
  }

  Writer model;
  model.varint_field(model_field::ir_version, static_cast<std::uint64_t>(g.meta.ir_version));
  if (!g.meta.producer_name.empty()) model.bytes_field(model_field::producer_name, g.meta.producer_name);
  model.message_field(model_field::graph, graph);
  Writer opset;
  opset.bytes_field(opset_field::domain, "");
  opset.varint_field(opset_field::version, static_cast<std::uint64_t>(g.meta.opset));
  model.message_field(model_field::opset_import, opset);
  for (const auto& [domain, version] : g.meta.extra_opsets) {
    Writer extra;
    extra.bytes_field(opset_field::domain, domain);
    extra.varint_field(opset_field::version, static_cast<std::uint64_t>(version));
    model.message_field(model_field::opset_import, extra);
  }
  return model.release();
}

void write_onnx_file(const GraphIR& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  const std::string bytes = serialize(g);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

}  // namespace onnxnet
