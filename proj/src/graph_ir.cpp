#include "onnxnet/graph_ir.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

namespace onnxnet {

// ---------------------------------------------------------------------------
// TensorShape

TensorShape::TensorShape(std::initializer_list<std::int64_t> dims) {
  for (auto d : dims) dims_.emplace_back(d);
}

TensorShape TensorShape::unknown_rank() {
  TensorShape s;
  s.rank_known_ = false;
  return s;
}

TensorShape TensorShape::from_dims(std::span<const std::int64_t> dims) {
  std::vector<Dim> out(dims.begin(), dims.end());
  return TensorShape(std::move(out));
}

bool TensorShape::fully_known() const {
  return rank_known_ && std::all_of(dims_.begin(), dims_.end(), [](const Dim& d) { return d.has_value(); });
}

std::optional<std::int64_t> TensorShape::num_elements() const {
  if (!fully_known()) return std::nullopt;
  std::int64_t n = 1;
  for (const auto& d : dims_) n *= *d;
  return n;
}

std::vector<std::int64_t> TensorShape::concrete() const {
  if (!fully_known()) {
    throw Error(ErrorCode::InvalidArgument, "shape " + to_string() + " is not fully known");
  }
  std::vector<std::int64_t> out;
  out.reserve(dims_.size());
  for (const auto& d : dims_) out.push_back(*d);
  return out;
}

std::string TensorShape::to_string() const {
  if (!rank_known_) return "?";
  if (dims_.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += 'x';
    out += dims_[i] ? std::to_string(*dims_[i]) : "?";
  }
  return out;
}

// ---------------------------------------------------------------------------
// TensorData

std::size_t elem_size(ElemType t) {
  switch (t) {
    case ElemType::Float: return 4;
    case ElemType::Uint8: return 1;
    case ElemType::Int8: return 1;
    case ElemType::Uint16: return 2;
    case ElemType::Int16: return 2;
    case ElemType::Int32: return 4;
    case ElemType::Int64: return 8;
    case ElemType::Bool: return 1;
    case ElemType::Float16: return 2;
    case ElemType::Double: return 8;
    case ElemType::Uint32: return 4;
    case ElemType::Uint64: return 8;
    case ElemType::Bfloat16: return 2;
    default: return 0;
  }
}

bool is_integer(ElemType t) {
  switch (t) {
    case ElemType::Uint8:
    case ElemType::Int8:
    case ElemType::Uint16:
    case ElemType::Int16:
    case ElemType::Int32:
    case ElemType::Int64:
    case ElemType::Uint32:
    case ElemType::Uint64:
    case ElemType::Bool:
      return true;
    default:
      return false;
  }
}

namespace {

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1f;
  const std::uint32_t mant = h & 0x3ff;
  if (exp == 0) {
    float v = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -v : v;
  }
  if (exp == 31) {
    return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  }
  return std::bit_cast<float>(sign | ((exp + 112) << 23) | (mant << 13));
}

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const int exp = static_cast<int>((x >> 23) & 0xff) - 127 + 15;
  const std::uint32_t mant = x & 0x7fffffu;
  if (((x >> 23) & 0xff) == 0xff) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0));
  if (exp >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (exp <= 0) {
    if (exp < -10) return sign;
    const std::uint32_t m = mant | 0x800000u;
    return static_cast<std::uint16_t>(sign | (m >> (14 - exp)));
  }
  return static_cast<std::uint16_t>(sign | (exp << 10) | (mant >> 13));
}

void require_payload(const TensorData& t) {
  if (!t.has_payload) throw Error(ErrorCode::InvalidArgument, "tensor has no decodable payload");
  const std::size_t size = elem_size(t.elem_type);
  if (size == 0) throw Error(ErrorCode::UnsupportedConstruct, "unsupported tensor element type");
  if (t.raw.size() != size * static_cast<std::size_t>(t.num_elements())) {
    throw Error(ErrorCode::MalformedFile, "tensor payload size does not match its dims");
  }
}

}  // namespace

std::int64_t TensorData::num_elements() const {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<double> TensorData::as_doubles() const {
  require_payload(*this);
  const std::size_t n = static_cast<std::size_t>(num_elements());
  const std::size_t size = elem_size(elem_type);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* p = raw.data() + i * size;
    switch (elem_type) {
      case ElemType::Float: out[i] = load<float>(p); break;
      case ElemType::Double: out[i] = load<double>(p); break;
      case ElemType::Float16: out[i] = half_to_float(load<std::uint16_t>(p)); break;
      case ElemType::Bfloat16:
        out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(load<std::uint16_t>(p)) << 16);
        break;
      case ElemType::Int8: out[i] = load<std::int8_t>(p); break;
      case ElemType::Uint8: out[i] = load<std::uint8_t>(p); break;
      case ElemType::Bool: out[i] = load<std::uint8_t>(p) ? 1.0 : 0.0; break;
      case ElemType::Int16: out[i] = load<std::int16_t>(p); break;
      case ElemType::Uint16: out[i] = load<std::uint16_t>(p); break;
      case ElemType::Int32: out[i] = load<std::int32_t>(p); break;
      case ElemType::Uint32: out[i] = load<std::uint32_t>(p); break;
      case ElemType::Int64: out[i] = static_cast<double>(load<std::int64_t>(p)); break;
      case ElemType::Uint64: out[i] = static_cast<double>(load<std::uint64_t>(p)); break;
      default: throw Error(ErrorCode::UnsupportedConstruct, "unsupported tensor element type");
    }
  }
  return out;
}

std::vector<std::int64_t> TensorData::as_int64s() const {
  require_payload(*this);
  if (!is_integer(elem_type)) {
    std::vector<std::int64_t> out;
    for (double d : as_doubles()) out.push_back(static_cast<std::int64_t>(d));
    return out;
  }
  const std::size_t n = static_cast<std::size_t>(num_elements());
  const std::size_t size = elem_size(elem_type);
  std::vector<std::int64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* p = raw.data() + i * size;
    switch (elem_type) {
      case ElemType::Int8: out[i] = load<std::int8_t>(p); break;
      case ElemType::Uint8: out[i] = load<std::uint8_t>(p); break;
      case ElemType::Bool: out[i] = load<std::uint8_t>(p) ? 1 : 0; break;
      case ElemType::Int16: out[i] = load<std::int16_t>(p); break;
      case ElemType::Uint16: out[i] = load<std::uint16_t>(p); break;
      case ElemType::Int32: out[i] = load<std::int32_t>(p); break;
      case ElemType::Uint32: out[i] = load<std::uint32_t>(p); break;
      case ElemType::Int64: out[i] = load<std::int64_t>(p); break;
      case ElemType::Uint64: out[i] = static_cast<std::int64_t>(load<std::uint64_t>(p)); break;
      default: break;
    }
  }
  return out;
}

TensorData TensorData::from_floats(std::vector<std::int64_t> dims, std::span<const float> values) {
  TensorData t;
  t.elem_type = ElemType::Float;
  t.dims = std::move(dims);
  t.raw.reserve(values.size() * 4);
  for (float v : values) store(t.raw, v);
  return t;
}

TensorData TensorData::from_int64s(std::vector<std::int64_t> dims, std::span<const std::int64_t> values) {
  TensorData t;
  t.elem_type = ElemType::Int64;
  t.dims = std::move(dims);
  t.raw.reserve(values.size() * 8);
  for (auto v : values) store(t.raw, v);
  return t;
}

TensorData TensorData::from_doubles(ElemType type, std::vector<std::int64_t> dims,
                                    std::span<const double> values) {
  TensorData t;
  t.elem_type = type;
  t.dims = std::move(dims);
  for (double v : values) {
    switch (type) {
      case ElemType::Float: store(t.raw, static_cast<float>(v)); break;
      case ElemType::Double: store(t.raw, v); break;
      case ElemType::Float16: store(t.raw, float_to_half(static_cast<float>(v))); break;
      case ElemType::Bfloat16:
        store(t.raw, static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)) >> 16));
        break;
      case ElemType::Int8: store(t.raw, static_cast<std::int8_t>(v)); break;
      case ElemType::Uint8: store(t.raw, static_cast<std::uint8_t>(v)); break;
      case ElemType::Bool: store(t.raw, static_cast<std::uint8_t>(v != 0.0)); break;
      case ElemType::Int16: store(t.raw, static_cast<std::int16_t>(v)); break;
      case ElemType::Uint16: store(t.raw, static_cast<std::uint16_t>(v)); break;
      case ElemType::Int32: store(t.raw, static_cast<std::int32_t>(v)); break;
      case ElemType::Uint32: store(t.raw, static_cast<std::uint32_t>(v)); break;
      case ElemType::Int64: store(t.raw, static_cast<std::int64_t>(v)); break;
      case ElemType::Uint64: store(t.raw, static_cast<std::uint64_t>(v)); break;
      default: throw Error(ErrorCode::UnsupportedConstruct, "unsupported tensor element type");
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// NodeSpec

const AttributeValue* NodeSpec::attr(const std::string& key) const {
  auto it = attributes.find(key);
  return it == attributes.end() ? nullptr : &it->second;
}

std::optional<std::int64_t> NodeSpec::attr_int(const std::string& key) const {
  const auto* a = attr(key);
  if (!a) return std::nullopt;
  if (const auto* v = std::get_if<std::int64_t>(a)) return *v;
  return std::nullopt;
}

std::optional<float> NodeSpec::attr_float(const std::string& key) const {
  const auto* a = attr(key);
  if (!a) return std::nullopt;
  if (const auto* v = std::get_if<float>(a)) return *v;
  if (const auto* v = std::get_if<std::int64_t>(a)) return static_cast<float>(*v);
  return std::nullopt;
}

std::optional<std::string> NodeSpec::attr_string(const std::string& key) const {
  const auto* a = attr(key);
  if (!a) return std::nullopt;
  if (const auto* v = std::get_if<std::string>(a)) return *v;
  return std::nullopt;
}

std::optional<std::vector<std::int64_t>> NodeSpec::attr_ints(const std::string& key) const {
  const auto* a = attr(key);
  if (!a) return std::nullopt;
  if (const auto* v = std::get_if<std::vector<std::int64_t>>(a)) return *v;
  if (const auto* v = std::get_if<std::int64_t>(a)) return std::vector<std::int64_t>{*v};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// GraphIR

const NodeSpec& GraphIR::node(NodeId id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw Error(ErrorCode::InvalidArgument, "no node with id " + std::to_string(id));
  return it->second;
}

const ValueInfo& GraphIR::value(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw Error(ErrorCode::DanglingReference, "unknown value '" + name + "'");
  return it->second;
}

const ValueInfo* GraphIR::find_value(const std::string& name) const {
  auto it = values.find(name);
  return it == values.end() ? nullptr : &it->second;
}

bool GraphIR::is_parameter(const std::string& name) const {
  const auto* v = find_value(name);
  return v && v->role == ValueRole::Parameter;
}

bool GraphIR::is_graph_output(const std::string& name) const {
  return std::find(graph_outputs.begin(), graph_outputs.end(), name) != graph_outputs.end();
}

bool GraphIR::is_graph_input(const std::string& name) const {
  return std::find(graph_inputs.begin(), graph_inputs.end(), name) != graph_inputs.end();
}

std::size_t GraphIR::use_count(const std::string& name) const {
  const auto* v = find_value(name);
  if (!v) return 0;
  std::size_t n = 0;
  for (NodeId c : v->consumers) {
    const auto& in = node(c).inputs;
    n += static_cast<std::size_t>(std::count(in.begin(), in.end(), name));
  }
  return n;
}

NodeId GraphIR::next_node_id() const { return nodes.empty() ? 0 : nodes.rbegin()->first + 1; }

void relink(GraphIR& g) {
  for (auto& [name, v] : g.values) {
    v.producer.reset();
    v.consumers.clear();
  }
  for (const auto& [id, n] : g.nodes) {
    for (const auto& out : n.outputs) {
      if (out.empty()) continue;
      auto [it, inserted] = g.values.try_emplace(out);
      auto& v = it->second;
      if (inserted) v.name = out;
      if (v.producer) {
        throw Error(ErrorCode::MalformedFile, "value '" + out + "' is produced by more than one node");
      }
      if (v.data || g.is_graph_input(out)) {
        throw Error(ErrorCode::MalformedFile, "node output '" + out + "' shadows an input or initializer");
      }
      v.producer = id;
    }
  }
  for (const auto& [id, n] : g.nodes) {
    for (const auto& in : n.inputs) {
      if (in.empty()) continue;
      auto it = g.values.find(in);
      if (it != g.values.end()) it->second.consumers.insert(id);
    }
  }
  for (auto it = g.values.begin(); it != g.values.end();) {
    auto& v = it->second;
    const bool is_input = g.is_graph_input(v.name);
    const bool is_output = g.is_graph_output(v.name);
    if (is_input) {
      v.role = ValueRole::GraphInput;
    } else if (v.producer) {
      v.role = is_output ? ValueRole::GraphOutput : ValueRole::Activation;
    } else if (v.data || v.role == ValueRole::Parameter) {
      v.role = ValueRole::Parameter;
    }
    if (!is_input && !is_output && !v.producer && v.consumers.empty()) {
      it = g.values.erase(it);
    } else {
      ++it;
    }
  }
}

std::vector<NodeId> topo_order(const GraphIR& g) {
  std::map<NodeId, std::size_t> indegree;
  std::map<NodeId, std::vector<NodeId>> successors;
  for (const auto& [id, n] : g.nodes) {
    indegree.try_emplace(id, 0);
    for (const auto& in : n.inputs) {
      if (in.empty()) continue;
      const auto* v = g.find_value(in);
      if (v && v->producer) {
        ++indegree[id];
        successors[*v->producer].push_back(id);
      }
    }
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }
  std::vector<NodeId> order;
  order.reserve(g.nodes.size());
  while (!ready.empty()) {
    const NodeId id = ready.top();
    ready.pop();
    order.push_back(id);
    for (NodeId s : successors[id]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  if (order.size() != g.nodes.size()) {
    throw Error(ErrorCode::CyclicGraph, "graph contains a directed cycle");
  }
  return order;
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

void validate(const GraphIR& g) {
  for (const auto& [id, n] : g.nodes) {
    if (n.op_type.empty()) {
      throw Error(ErrorCode::MalformedFile, "node " + std::to_string(id) + " has an empty op_type");
    }
    for (const auto& in : n.inputs) {
      if (!in.empty() && !g.find_value(in)) {
        throw Error(ErrorCode::DanglingReference,
                    "node '" + n.op_type + "' consumes undefined value '" + in + "'");
      }
    }
  }
  for (const auto& out : g.graph_outputs) {
    const auto* v = g.find_value(out);
    if (!v) throw Error(ErrorCode::DanglingReference, "graph output '" + out + "' is never defined");
    if (!v->producer && !g.is_graph_input(out)) {
      throw Error(ErrorCode::UnsupportedConstruct,
                  "graph output '" + out + "' is neither computed nor a graph input");
    }
  }
  (void)topo_order(g);

  // Weak connectivity over nodes and graph inputs; parameters do not connect.
  std::map<NodeId, std::size_t> node_index;
  for (const auto& [id, n] : g.nodes) node_index.emplace(id, node_index.size());
  std::map<std::string, std::size_t> input_index;
  for (const auto& name : g.graph_inputs) input_index.emplace(name, node_index.size() + input_index.size());
  const std::size_t total = node_index.size() + input_index.size();
  if (total <= 1) return;
  DisjointSets sets(total);
  for (const auto& [id, n] : g.nodes) {
    for (const auto& in : n.inputs) {
      if (in.empty()) continue;
      const auto& v = g.value(in);
      if (v.producer) {
        sets.unite(node_index[id], node_index[*v.producer]);
      } else if (auto it = input_index.find(in); it != input_index.end()) {
        sets.unite(node_index[id], it->second);
      }
    }
  }
  std::set<std::size_t> roots;
  for (std::size_t i = 0; i < total; ++i) roots.insert(sets.find(i));
  if (roots.size() > 1) {
    throw Error(ErrorCode::MultipleComponents,
                "graph has " + std::to_string(roots.size()) + " weakly connected components");
  }
}

bool same_structure(const GraphIR& a, const GraphIR& b) {
  if (a.nodes.size() != b.nodes.size() || a.graph_inputs.size() != b.graph_inputs.size() ||
      a.graph_outputs.size() != b.graph_outputs.size()) {
    return false;
  }
  const auto order_a = topo_order(a);
  const auto order_b = topo_order(b);

  using Key = std::tuple<int, std::int64_t, std::int64_t>;
  auto keys_for = [](const GraphIR& g, const std::vector<NodeId>& order) {
    std::map<std::string, Key> keys;
    for (std::size_t i = 0; i < g.graph_inputs.size(); ++i) {
      keys[g.graph_inputs[i]] = {0, static_cast<std::int64_t>(i), 0};
    }
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const auto& n = g.node(order[pos]);
      for (std::size_t k = 0; k < n.outputs.size(); ++k) {
        if (!n.outputs[k].empty()) {
          keys[n.outputs[k]] = {1, static_cast<std::int64_t>(pos), static_cast<std::int64_t>(k)};
        }
      }
    }
    return keys;
  };
  const auto keys_a = keys_for(a, order_a);
  const auto keys_b = keys_for(b, order_b);

  auto same_operand = [&](const std::string& x, const std::string& y) {
    if (x.empty() || y.empty()) return x.empty() && y.empty();
    const auto* va = a.find_value(x);
    const auto* vb = b.find_value(y);
    if (!va || !vb) return false;
    if (va->role == ValueRole::Parameter || vb->role == ValueRole::Parameter) {
      return va->role == vb->role && va->data == vb->data && va->shape == vb->shape;
    }
    auto ia = keys_a.find(x);
    auto ib = keys_b.find(y);
    return ia != keys_a.end() && ib != keys_b.end() && ia->second == ib->second;
  };

  for (std::size_t i = 0; i < a.graph_inputs.size(); ++i) {
    if (a.value(a.graph_inputs[i]).shape != b.value(b.graph_inputs[i]).shape) return false;
  }
  for (std::size_t pos = 0; pos < order_a.size(); ++pos) {
    const auto& na = a.node(order_a[pos]);
    const auto& nb = b.node(order_b[pos]);
    if (na.op_type != nb.op_type || na.domain != nb.domain || na.attributes != nb.attributes ||
        na.inputs.size() != nb.inputs.size() || na.outputs.size() != nb.outputs.size()) {
      return false;
    }
    for (std::size_t k = 0; k < na.inputs.size(); ++k) {
      if (!same_operand(na.inputs[k], nb.inputs[k])) return false;
    }
  }
  for (std::size_t i = 0; i < a.graph_outputs.size(); ++i) {
    if (!same_operand(a.graph_outputs[i], b.graph_outputs[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// GraphBuilder

GraphBuilder& GraphBuilder::opset(std::int64_t version) {
  g_.meta.opset = version;
  return *this;
}

GraphBuilder& GraphBuilder::input(const std::string& name, TensorShape shape, ElemType type) {
  ValueInfo v;
  v.name = name;
  v.shape = std::move(shape);
  v.elem_type = type;
  v.role = ValueRole::GraphInput;
  g_.values[name] = std::move(v);
  g_.graph_inputs.push_back(name);
  return *this;
}

GraphBuilder& GraphBuilder::parameter(const std::string& name, TensorData data) {
  ValueInfo v;
  v.name = name;
  v.shape = TensorShape::from_dims(data.dims);
  v.elem_type = data.elem_type;
  v.role = ValueRole::Parameter;
  v.data = std::move(data);
  g_.values[name] = std::move(v);
  return *this;
}

GraphBuilder& GraphBuilder::parameter(const std::string& name, std::vector<std::int64_t> dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  std::vector<float> values(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = 0.01f * static_cast<float>(static_cast<std::int64_t>((i * 7919u) % 199u) - 99);
  }
  return parameter(name, TensorData::from_floats(std::move(dims), values));
}

GraphBuilder& GraphBuilder::node(const std::string& op_type, std::vector<std::string> inputs,
                                 std::vector<std::string> outputs, Attributes attributes) {
  NodeSpec n;
  n.id = next_id_++;
  n.op_type = op_type;
  n.name = op_type + "_" + std::to_string(n.id);
  n.inputs = std::move(inputs);
  n.outputs = std::move(outputs);
  n.attributes = std::move(attributes);
  g_.provenance[n.id] = {n.id};
  g_.nodes.emplace(n.id, std::move(n));
  return *this;
}

GraphBuilder& GraphBuilder::output(const std::string& name) {
  g_.graph_outputs.push_back(name);
  return *this;
}

GraphIR GraphBuilder::build() const {
  GraphIR g = g_;
  relink(g);
  validate(g);
  return g;
}

}  // namespace onnxnet
