#pragma once

#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "onnxnet/error.hpp"

namespace onnxnet {

using NodeId = std::int64_t;

// One extent of a tensor shape. nullopt marks an unknown or symbolic extent.
using Dim = std::optional<std::int64_t>;

class TensorShape {
 public:
  // A default-constructed shape is a scalar (rank 0).
  TensorShape() = default;
  explicit TensorShape(std::vector<Dim> dims) : dims_(std::move(dims)) {}
  TensorShape(std::initializer_list<std::int64_t> dims);

  static TensorShape unknown_rank();
  static TensorShape from_dims(std::span<const std::int64_t> dims);

  bool rank_known() const { return rank_known_; }
  std::size_t rank() const { return dims_.size(); }
  const std::vector<Dim>& dims() const { return dims_; }
  const Dim& operator[](std::size_t i) const { return dims_[i]; }

  bool fully_known() const;
  std::optional<std::int64_t> num_elements() const;
  // Known dims as plain integers; throws InvalidArgument if any are unknown.
  std::vector<std::int64_t> concrete() const;

  // "1x3x32x32"; unknown extents render as "?", scalars as "scalar" and
  // shapes of unknown rank as "?".
  std::string to_string() const;

  friend bool operator==(const TensorShape&, const TensorShape&) = default;

 private:
  std::vector<Dim> dims_;
  bool rank_known_ = true;
};

// ONNX TensorProto.DataType values.
enum class ElemType : std::int32_t {
  Undefined = 0,
  Float = 1,
  Uint8 = 2,
  Int8 = 3,
  Uint16 = 4,
  Int16 = 5,
  Int32 = 6,
  Int64 = 7,
  String = 8,
  Bool = 9,
  Float16 = 10,
  Double = 11,
  Uint32 = 12,
  Uint64 = 13,
  Bfloat16 = 16,
};

std::size_t elem_size(ElemType t);
bool is_integer(ElemType t);

// Constant tensor payload, stored as little-endian bytes of `elem_type` so
// that initializers round-trip through serialization bit for bit.
struct TensorData {
  ElemType elem_type = ElemType::Float;
  std::vector<std::int64_t> dims;
  std::string raw;
  // False when the file stores the payload externally or in a form this
  // library does not decode (strings); dims are still valid.
  bool has_payload = true;

  std::int64_t num_elements() const;
  std::vector<double> as_doubles() const;
  std::vector<std::int64_t> as_int64s() const;

  static TensorData from_floats(std::vector<std::int64_t> dims, std::span<const float> values);
  static TensorData from_int64s(std::vector<std::int64_t> dims, std::span<const std::int64_t> values);
  static TensorData from_doubles(ElemType type, std::vector<std::int64_t> dims,
                                 std::span<const double> values);

  friend bool operator==(const TensorData&, const TensorData&) = default;
};

using AttributeValue = std::variant<std::int64_t, float, std::string, std::vector<std::int64_t>,
                                    std::vector<float>, std::vector<std::string>, TensorData>;

// Attribute maps are ordered by key, which is also the rendering order.
using Attributes = std::map<std::string, AttributeValue>;

enum class ValueRole { GraphInput, GraphOutput, Parameter, Activation };

struct ValueInfo {
  std::string name;
  TensorShape shape = TensorShape::unknown_rank();
  ElemType elem_type = ElemType::Undefined;
  ValueRole role = ValueRole::Activation;
  std::optional<NodeId> producer;
  std::set<NodeId> consumers;
  // Initializer contents; only Parameter values carry data.
  std::optional<TensorData> data;
};

struct NodeSpec {
  NodeId id = 0;
  std::string op_type;
  std::string domain;
  std::string name;
  // Empty names mark omitted optional inputs/outputs and are kept positionally.
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  Attributes attributes;

  const AttributeValue* attr(const std::string& key) const;
  std::optional<std::int64_t> attr_int(const std::string& key) const;
  std::optional<float> attr_float(const std::string& key) const;
  std::optional<std::string> attr_string(const std::string& key) const;
  std::optional<std::vector<std::int64_t>> attr_ints(const std::string& key) const;
};

struct ModelMeta {
  std::int64_t ir_version = 8;
  std::int64_t opset = 17;
  std::vector<std::pair<std::string, std::int64_t>> extra_opsets;
  std::string producer_name;
  std::string graph_name = "graph";
};

struct GraphIR {
  std::map<NodeId, NodeSpec> nodes;
  std::map<std::string, ValueInfo> values;
  std::vector<std::string> graph_inputs;
  std::vector<std::string> graph_outputs;
  // Simplified node id -> ids of the parsed nodes it stands for.
  std::map<NodeId, std::set<NodeId>> provenance;
  // Original ids dropped as redundant without a surviving representative.
  std::set<NodeId> elided;
  ModelMeta meta;

  const NodeSpec& node(NodeId id) const;
  const ValueInfo& value(const std::string& name) const;
  const ValueInfo* find_value(const std::string& name) const;
  bool is_parameter(const std::string& name) const;
  bool is_graph_output(const std::string& name) const;
  bool is_graph_input(const std::string& name) const;
  // Number of input slots, over all nodes, that read `name`.
  std::size_t use_count(const std::string& name) const;
  NodeId next_node_id() const;
};

// Recomputes producer/consumer links and value roles from the node list.
// Values that lost every reference and are not graph inputs are dropped.
void relink(GraphIR& g);

// Throws DanglingReference, CyclicGraph or MultipleComponents when a graph
// invariant is violated; MalformedFile for duplicate definitions.
void validate(const GraphIR& g);

// Kahn's algorithm with ties broken by ascending node id.
std::vector<NodeId> topo_order(const GraphIR& g);

// True when both graphs list the same nodes in canonical topological order
// with equal op types, attributes and edges, up to renaming of values.
bool same_structure(const GraphIR& a, const GraphIR& b);

// Programmatic construction of a GraphIR; build() links and validates.
class GraphBuilder {
 public:
  GraphBuilder& opset(std::int64_t version);
  GraphBuilder& input(const std::string& name, TensorShape shape, ElemType type = ElemType::Float);
  GraphBuilder& parameter(const std::string& name, TensorData data);
  // Parameter with a known shape but deterministic filler values.
  GraphBuilder& parameter(const std::string& name, std::vector<std::int64_t> dims);
  GraphBuilder& node(const std::string& op_type, std::vector<std::string> inputs,
                     std::vector<std::string> outputs, Attributes attributes = {});
  GraphBuilder& output(const std::string& name);

  GraphIR build() const;

 private:
  GraphIR g_;
  NodeId next_id_ = 0;
};

}  // namespace onnxnet
