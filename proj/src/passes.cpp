#include "onnxnet/passes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onnxnet/shape_inference.hpp"

namespace onnxnet {

namespace {

bool default_domain(const NodeSpec& n) { return n.domain.empty() || n.domain == "ai.onnx"; }

std::string fresh_name(const GraphIR& g, const std::string& base) {
  if (!g.values.count(base)) return base;
  for (int i = 1;; ++i) {
    std::string candidate = base + "_" + std::to_string(i);
    if (!g.values.count(candidate)) return candidate;
  }
}

void replace_input(GraphIR& g, const std::string& from, const std::string& to) {
  for (auto& [id, n] : g.nodes) {
    std::replace(n.inputs.begin(), n.inputs.end(), from, to);
  }
}

void absorb_provenance(GraphIR& g, NodeId removed, std::optional<NodeId> into) {
  auto it = g.provenance.find(removed);
  if (it == g.provenance.end()) return;
  if (into) {
    g.provenance[*into].insert(it->second.begin(), it->second.end());
  } else {
    g.elided.insert(it->second.begin(), it->second.end());
  }
  g.provenance.erase(removed);
}

bool all_zero_constant(const GraphIR& g, const std::string& name) {
  const auto* v = g.find_value(name);
  if (!v || !v->data || !v->data->has_payload) return false;
  const auto values = v->data->as_doubles();
  return std::all_of(values.begin(), values.end(), [](double x) { return x == 0.0; });
}

bool removable(const GraphIR& g, const NodeSpec& n, const RemovalConfig& config) {
  if (!default_domain(n) || !config.ops.count(n.op_type)) return false;
  if (n.inputs.empty() || n.inputs[0].empty() || n.outputs.empty() || n.outputs[0].empty()) return false;
  if (n.op_type == "Identity") return n.outputs.size() == 1;
  if (n.op_type == "Dropout") {
    if (n.outputs.size() > 1 && !n.outputs[1].empty()) {
      const auto& mask = n.outputs[1];
      if (g.use_count(mask) > 0 || g.is_graph_output(mask)) return false;
    }
    if (n.inputs.size() > 2 && !n.inputs[2].empty() && !all_zero_constant(g, n.inputs[2])) return false;
    return true;
  }
  if (n.op_type == "Cast") {
    const auto to = n.attr_int("to");
    const auto& src = g.value(n.inputs[0]);
    return n.outputs.size() == 1 && to && src.elem_type != ElemType::Undefined &&
           static_cast<std::int64_t>(src.elem_type) == *to;
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Node removal

std::pair<GraphIR, PassReport> remove_low_importance(const GraphIR& input, const RemovalConfig& config) {
  GraphIR g = infer_shapes(input);
  PassReport report{"remove_low_importance", 0, 0, 1};
  for (NodeId id : topo_order(g)) {
    const NodeSpec n = g.node(id);
    if (!removable(g, n, config)) continue;
    const std::string src = n.inputs[0];
    const std::string dst = n.outputs[0];
    const ValueInfo& source = g.value(src);
    const std::optional<NodeId> producer = source.producer;
    std::optional<NodeId> heir = producer;

    if (g.is_graph_output(dst)) {
      // Without a producer the output would alias a graph input or parameter.
      if (!producer || g.is_graph_output(src)) continue;
      {
        // Keep the interface name: the producer now emits `dst` directly.
        for (auto& out : g.nodes.at(*producer).outputs) {
          if (out == src) out = dst;
        }
        replace_input(g, src, dst);
        auto& dst_info = g.values.at(dst);
        dst_info.shape = source.shape;
        dst_info.elem_type = source.elem_type;
        g.values.erase(src);
      }
    } else {
      if (!heir) {
        const auto& consumers = g.value(dst).consumers;
        if (!consumers.empty()) heir = *consumers.begin();
      }
      replace_input(g, dst, src);
    }
    g.nodes.erase(id);
    absorb_provenance(g, id, heir);
    relink(g);
    ++report.nodes_removed;
  }
  return {std::move(g), report};
}

// ---------------------------------------------------------------------------
// Constant folding

namespace {

struct IntTensor {
  ElemType type = ElemType::Int64;
  std::vector<std::int64_t> dims;
  std::vector<std::int64_t> values;
};

std::int64_t product(const std::vector<std::int64_t>& dims, std::size_t from, std::size_t to) {
  std::int64_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= dims[i];
  return p;
}

std::optional<IntTensor> int_operand(const GraphIR& g, const NodeSpec& n, std::size_t i) {
  if (i >= n.inputs.size() || n.inputs[i].empty()) return std::nullopt;
  const auto* v = g.find_value(n.inputs[i]);
  if (!v || v->role != ValueRole::Parameter || !v->data || !v->data->has_payload) return std::nullopt;
  if (!is_integer(v->data->elem_type)) return std::nullopt;
  return IntTensor{v->data->elem_type, v->data->dims, v->data->as_int64s()};
}

TensorData to_tensor(const IntTensor& t) {
  if (t.type == ElemType::Int64) return TensorData::from_int64s(t.dims, t.values);
  std::vector<double> d(t.values.begin(), t.values.end());
  return TensorData::from_doubles(t.type, t.dims, d);
}

std::int64_t wrap_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) throw Error(ErrorCode::ShapeMismatch, "axis out of range during folding");
  return axis < 0 ? axis + r : axis;
}

std::optional<std::vector<std::int64_t>> axes_operand(const GraphIR& g, const NodeSpec& n) {
  if (auto a = n.attr_ints("axes")) return a;
  if (n.inputs.size() > 1 && !n.inputs[1].empty()) {
    auto t = int_operand(g, n, 1);
    if (!t) return std::nullopt;
    return t->values;
  }
  return std::vector<std::int64_t>{};
}

std::optional<TensorData> fold_shape(const GraphIR& g, const NodeSpec& n) {
  const auto* x = g.find_value(n.inputs.empty() ? std::string() : n.inputs[0]);
  if (!x || !x->shape.fully_known()) return std::nullopt;
  const auto dims = x->shape.concrete();
  const auto r = static_cast<std::int64_t>(dims.size());
  std::int64_t start = n.attr_int("start").value_or(0);
  std::int64_t end = n.attr_int("end").value_or(r);
  if (start < 0) start += r;
  if (end < 0) end += r;
  start = std::clamp<std::int64_t>(start, 0, r);
  end = std::clamp<std::int64_t>(end, 0, r);
  std::vector<std::int64_t> out;
  for (std::int64_t i = start; i < end; ++i) out.push_back(dims[static_cast<std::size_t>(i)]);
  return TensorData::from_int64s({static_cast<std::int64_t>(out.size())}, out);
}

std::optional<TensorData> fold_gather(const GraphIR& g, const NodeSpec& n) {
  auto data = int_operand(g, n, 0);
  auto indices = int_operand(g, n, 1);
  if (!data || !indices || data->dims.empty()) return std::nullopt;
  const auto axis = static_cast<std::size_t>(wrap_axis(n.attr_int("axis").value_or(0), data->dims.size()));
  const std::int64_t outer = product(data->dims, 0, axis);
  const std::int64_t inner = product(data->dims, axis + 1, data->dims.size());
  const std::int64_t extent = data->dims[axis];
  IntTensor out;
  out.type = data->type;
  out.dims.assign(data->dims.begin(), data->dims.begin() + static_cast<std::ptrdiff_t>(axis));
  out.dims.insert(out.dims.end(), indices->dims.begin(), indices->dims.end());
  out.dims.insert(out.dims.end(), data->dims.begin() + static_cast<std::ptrdiff_t>(axis) + 1, data->dims.end());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t idx : indices->values) {
      if (idx < 0) idx += extent;
      if (idx < 0 || idx >= extent) throw Error(ErrorCode::ShapeMismatch, "Gather index out of range");
      for (std::int64_t i = 0; i < inner; ++i) {
        out.values.push_back(data->values[static_cast<std::size_t>((o * extent + idx) * inner + i)]);
      }
    }
  }
  return to_tensor(out);
}

std::optional<TensorData> fold_unsqueeze(const GraphIR& g, const NodeSpec& n) {
  auto data = int_operand(g, n, 0);
  auto axes = axes_operand(g, n);
  if (!data || !axes || axes->empty()) return std::nullopt;
  const std::size_t rank = data->dims.size() + axes->size();
  std::vector<bool> inserted(rank, false);
  for (auto a : *axes) inserted[static_cast<std::size_t>(wrap_axis(a, rank))] = true;
  IntTensor out = *data;
  out.dims.clear();
  std::size_t src = 0;
  for (std::size_t i = 0; i < rank; ++i) out.dims.push_back(inserted[i] ? 1 : data->dims[src++]);
  return to_tensor(out);
}

std::optional<TensorData> fold_squeeze(const GraphIR& g, const NodeSpec& n) {
  auto data = int_operand(g, n, 0);
  auto axes = axes_operand(g, n);
  if (!data || !axes) return std::nullopt;
  std::vector<bool> drop(data->dims.size(), false);
  if (axes->empty()) {
    for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = data->dims[i] == 1;
  } else {
    for (auto a : *axes) {
      const auto ax = static_cast<std::size_t>(wrap_axis(a, data->dims.size()));
      if (data->dims[ax] != 1) throw Error(ErrorCode::ShapeMismatch, "Squeeze of a non-unit axis");
      drop[ax] = true;
    }
  }
  IntTensor out = *data;
  out.dims.clear();
  for (std::size_t i = 0; i < drop.size(); ++i) {
    if (!drop[i]) out.dims.push_back(data->dims[i]);
  }
  return to_tensor(out);
}

std::optional<TensorData> fold_concat(const GraphIR& g, const NodeSpec& n) {
  std::vector<IntTensor> parts;
  for (std::size_t i = 0; i < n.inputs.size(); ++i) {
    auto t = int_operand(g, n, i);
    if (!t || t->dims.empty()) return std::nullopt;
    parts.push_back(std::move(*t));
  }
  if (parts.empty()) return std::nullopt;
  const auto axis = static_cast<std::size_t>(wrap_axis(n.attr_int("axis").value_or(0), parts[0].dims.size()));
  IntTensor out;
  out.type = parts[0].type;
  out.dims = parts[0].dims;
  out.dims[axis] = 0;
  for (const auto& p : parts) {
    if (p.dims.size() != out.dims.size()) throw Error(ErrorCode::ShapeMismatch, "Concat rank mismatch while folding");
    out.dims[axis] += p.dims[axis];
  }
  const std::int64_t outer = product(out.dims, 0, axis);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const std::int64_t block = product(p.dims, axis, p.dims.size());
      const auto begin = p.values.begin() + static_cast<std::ptrdiff_t>(o * block);
      out.values.insert(out.values.end(), begin, begin + static_cast<std::ptrdiff_t>(block));
    }
  }
  return to_tensor(out);
}

std::optional<TensorData> evaluate(const GraphIR& g, const NodeSpec& n) {
  if (!default_domain(n) || n.outputs.size() != 1 || n.outputs[0].empty()) return std::nullopt;
  const std::string& op = n.op_type;
  if (op == "Constant") return constant_node_value(n);
  if (op == "Shape") return fold_shape(g, n);
  if (op == "Gather") return fold_gather(g, n);
  if (op == "Unsqueeze") return fold_unsqueeze(g, n);
  if (op == "Squeeze") return fold_squeeze(g, n);
  if (op == "Concat") return fold_concat(g, n);
  return std::nullopt;
}

}  // namespace

std::pair<GraphIR, PassReport> fold_constants(const GraphIR& input, const FoldConfig& config) {
  GraphIR g = infer_shapes(input);
  PassReport report{"fold_constants", 0, 0, 0};
  for (;;) {
    ++report.iterations;
    bool changed = false;
    for (NodeId id : topo_order(g)) {
      const NodeSpec& n = g.node(id);
      if (n.outputs.size() != 1 || g.is_graph_output(n.outputs[0])) continue;
      auto folded = evaluate(g, n);
      if (!folded) continue;
      if (folded->num_elements() > config.max_elements) {
        throw Error(ErrorCode::FoldOverflow, n.op_type + " '" + n.name + "' folds to " +
                                                 std::to_string(folded->num_elements()) + " elements, budget " +
                                                 std::to_string(config.max_elements));
      }
      auto& v = g.values.at(n.outputs[0]);
      v.shape = TensorShape::from_dims(folded->dims);
      v.elem_type = folded->elem_type;
      v.role = ValueRole::Parameter;
      v.producer.reset();
      v.data = std::move(*folded);
      absorb_provenance(g, id, std::nullopt);
      g.nodes.erase(id);
      ++report.nodes_removed;
      changed = true;
    }
    relink(g);
    if (!changed) break;
    g = infer_shapes(g);
  }
  return {std::move(g), report};
}

// ---------------------------------------------------------------------------
// Pattern merging

namespace {

// The unique node reading `name`, if exactly one input slot reads it.
std::optional<NodeId> sole_consumer(const GraphIR& g, const std::string& name) {
  if (g.is_graph_output(name) || g.use_count(name) != 1) return std::nullopt;
  return *g.value(name).consumers.begin();
}

const ValueInfo* parameter_operand(const GraphIR& g, const NodeSpec& n, std::size_t i) {
  if (i >= n.inputs.size() || n.inputs[i].empty()) return nullptr;
  const auto* v = g.find_value(n.inputs[i]);
  return v && v->role == ValueRole::Parameter ? v : nullptr;
}

// The operand of a binary `consumer` that is not `produced`.
std::optional<std::size_t> other_operand(const NodeSpec& consumer, const std::string& produced) {
  if (consumer.inputs.size() != 2) return std::nullopt;
  if (consumer.inputs[0] == produced) return 1;
  if (consumer.inputs[1] == produced) return 0;
  return std::nullopt;
}

TensorData transpose_2d(const TensorData& t) {
  const auto rows = t.dims[0], cols = t.dims[1];
  const auto in = t.as_doubles();
  std::vector<double> out(in.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(c * rows + r)] = in[static_cast<std::size_t>(r * cols + c)];
    }
  }
  return TensorData::from_doubles(t.elem_type, {cols, rows}, out);
}

ValueInfo make_parameter(std::string name, TensorData data) {
  ValueInfo v;
  v.name = std::move(name);
  v.shape = TensorShape::from_dims(data.dims);
  v.elem_type = data.elem_type;
  v.role = ValueRole::Parameter;
  v.data = std::move(data);
  return v;
}

bool decodable(const ValueInfo* v) {
  return v && v->data && v->data->has_payload && elem_size(v->data->elem_type) > 0 && !is_integer(v->data->elem_type);
}

}  // namespace

PatternRule linear_layer_rule() {
  PatternRule rule;
  rule.name = "linear_layer";
  rule.replacement_op = "Gemm";
  rule.matcher = [](const GraphIR& g, NodeId id) -> std::optional<PatternMatch> {
    const auto& mm = g.node(id);
    if (mm.op_type != "MatMul" || !default_domain(mm) || mm.inputs.size() != 2 || mm.outputs.size() != 1) {
      return std::nullopt;
    }
    const auto& x = g.value(mm.inputs[0]);
    const auto* w = parameter_operand(g, mm, 1);
    if (!x.shape.rank_known() || x.shape.rank() != 2 || !w || !w->shape.fully_known() || w->shape.rank() != 2) {
      return std::nullopt;
    }
    auto add_id = sole_consumer(g, mm.outputs[0]);
    if (!add_id) return std::nullopt;
    const auto& add = g.node(*add_id);
    if (add.op_type != "Add" || !default_domain(add) || add.outputs.size() != 1) return std::nullopt;
    auto bias_slot = other_operand(add, mm.outputs[0]);
    if (!bias_slot) return std::nullopt;
    const auto* b = parameter_operand(g, add, *bias_slot);
    if (!b || !b->shape.fully_known() || b->shape.rank() > 2) return std::nullopt;
    const auto rows = x.shape[0];
    const auto cols = *w->shape[1];
    const auto bd = b->shape.concrete();
    if (bd.size() == 1 && bd[0] != 1 && bd[0] != cols) return std::nullopt;
    if (bd.size() == 2) {
      if (bd[1] != 1 && bd[1] != cols) return std::nullopt;
      if (bd[0] != 1 && (!rows || *rows != bd[0])) return std::nullopt;
    }
    return PatternMatch{{id, *add_id}};
  };
  rule.build = [](const GraphIR& g, const PatternMatch& m) {
    const auto& mm = g.node(m.nodes[0]);
    const auto& add = g.node(m.nodes[1]);
    const std::string bias = add.inputs[*other_operand(add, mm.outputs[0])];
    const auto& w = g.value(mm.inputs[1]);
    Replacement r;
    if (decodable(&w)) {
      const std::string name = fresh_name(g, w.name + "_transposed");
      r.new_parameters.push_back(make_parameter(name, transpose_2d(*w.data)));
      r.inputs = {mm.inputs[0], name, bias};
      r.attributes["transB"] = std::int64_t{1};
    } else {
      r.inputs = {mm.inputs[0], mm.inputs[1], bias};
    }
    return r;
  };
  return rule;
}

PatternRule conv_bias_rule() {
  PatternRule rule;
  rule.name = "conv_bias";
  rule.replacement_op = "Conv";
  rule.matcher = [](const GraphIR& g, NodeId id) -> std::optional<PatternMatch> {
    const auto& conv = g.node(id);
    if (conv.op_type != "Conv" || !default_domain(conv) || conv.outputs.size() != 1) return std::nullopt;
    if (conv.inputs.size() < 2 || conv.inputs.size() > 3) return std::nullopt;
    if (conv.inputs.size() == 3 && !conv.inputs[2].empty()) return std::nullopt;
    const auto* w = parameter_operand(g, conv, 1);
    if (!w || !w->shape.rank_known() || w->shape.rank() < 3 || !w->shape[0]) return std::nullopt;
    auto add_id = sole_consumer(g, conv.outputs[0]);
    if (!add_id) return std::nullopt;
    const auto& add = g.node(*add_id);
    if (add.op_type != "Add" || !default_domain(add) || add.outputs.size() != 1) return std::nullopt;
    auto slot = other_operand(add, conv.outputs[0]);
    if (!slot) return std::nullopt;
    const auto* b = parameter_operand(g, add, *slot);
    if (!b || !b->shape.fully_known()) return std::nullopt;
    const auto channels = *w->shape[0];
    const auto rank = w->shape.rank();
    const auto bd = b->shape.concrete();
    // Per-channel addend: [1, C, 1, ...] or [C, 1, ...].
    std::size_t channel_axis;
    if (bd.size() == rank && bd[0] == 1) channel_axis = 1;
    else if (bd.size() == rank - 1) channel_axis = 0;
    else return std::nullopt;
    for (std::size_t i = 0; i < bd.size(); ++i) {
      if (i == channel_axis ? bd[i] != channels : bd[i] != 1) return std::nullopt;
    }
    return PatternMatch{{id, *add_id}};
  };
  rule.build = [](const GraphIR& g, const PatternMatch& m) {
    const auto& conv = g.node(m.nodes[0]);
    const auto& add = g.node(m.nodes[1]);
    const auto& b = g.value(add.inputs[*other_operand(add, conv.outputs[0])]);
    TensorData flat = *b.data;
    flat.dims = {flat.num_elements()};
    Replacement r;
    const std::string name = fresh_name(g, b.name + "_bias");
    r.new_parameters.push_back(make_parameter(name, std::move(flat)));
    r.inputs = {conv.inputs[0], conv.inputs[1], name};
    r.attributes = conv.attributes;
    return r;
  };
  return rule;
}

PatternRule batchnorm_folding_rule() {
  PatternRule rule;
  rule.name = "batchnorm_folding";
  rule.replacement_op = "Conv";
  rule.matcher = [](const GraphIR& g, NodeId id) -> std::optional<PatternMatch> {
    const auto& conv = g.node(id);
    if (conv.op_type != "Conv" || !default_domain(conv) || conv.outputs.size() != 1) return std::nullopt;
    if (conv.inputs.size() < 2) return std::nullopt;
    const auto* w = parameter_operand(g, conv, 1);
    if (!decodable(w) || w->shape.rank() < 3) return std::nullopt;
    if (conv.inputs.size() > 2 && !conv.inputs[2].empty() && !decodable(parameter_operand(g, conv, 2))) {
      return std::nullopt;
    }
    auto bn_id = sole_consumer(g, conv.outputs[0]);
    if (!bn_id) return std::nullopt;
    const auto& bn = g.node(*bn_id);
    if (bn.op_type != "BatchNormalization" || !default_domain(bn) || bn.inputs.size() != 5) return std::nullopt;
    if (bn.inputs[0] != conv.outputs[0] || bn.attr_int("training_mode").value_or(0) != 0) return std::nullopt;
    for (std::size_t k = 1; k < bn.outputs.size(); ++k) {
      if (!bn.outputs[k].empty() && (g.use_count(bn.outputs[k]) > 0 || g.is_graph_output(bn.outputs[k]))) {
        return std::nullopt;
      }
    }
    const auto channels = *w->shape[0];
    for (std::size_t k = 1; k < 5; ++k) {
      const auto* p = parameter_operand(g, bn, k);
      if (!decodable(p) || p->data->num_elements() != channels) return std::nullopt;
    }
    return PatternMatch{{id, *bn_id}};
  };
  rule.build = [](const GraphIR& g, const PatternMatch& m) {
    const auto& conv = g.node(m.nodes[0]);
    const auto& bn = g.node(m.nodes[1]);
    const auto& w = g.value(conv.inputs[1]);
    const auto weights = w.data->as_doubles();
    const auto scale = g.value(bn.inputs[1]).data->as_doubles();
    const auto shift = g.value(bn.inputs[2]).data->as_doubles();
    const auto mean = g.value(bn.inputs[3]).data->as_doubles();
    const auto var = g.value(bn.inputs[4]).data->as_doubles();
    const double eps = bn.attr_float("epsilon").value_or(1e-5f);
    const std::size_t channels = scale.size();
    std::vector<double> bias(channels, 0.0);
    if (conv.inputs.size() > 2 && !conv.inputs[2].empty()) bias = g.value(conv.inputs[2]).data->as_doubles();
    std::vector<double> new_w(weights.size());
    const std::size_t per_channel = weights.size() / channels;
    std::vector<double> new_b(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      const double factor = scale[c] / std::sqrt(var[c] + eps);
      for (std::size_t i = 0; i < per_channel; ++i) new_w[c * per_channel + i] = weights[c * per_channel + i] * factor;
      new_b[c] = (bias[c] - mean[c]) * factor + shift[c];
    }
    Replacement r;
    const std::string w_name = fresh_name(g, w.name + "_bnfolded");
    const std::string b_name = fresh_name(g, w.name + "_bnfolded_bias");
    r.new_parameters.push_back(make_parameter(w_name, TensorData::from_doubles(w.data->elem_type, w.data->dims, new_w)));
    r.new_parameters.push_back(make_parameter(
        b_name, TensorData::from_doubles(w.data->elem_type, {static_cast<std::int64_t>(channels)}, new_b)));
    r.inputs = {conv.inputs[0], w_name, b_name};
    r.attributes = conv.attributes;
    return r;
  };
  return rule;
}

std::vector<PatternRule> default_rules() { return {linear_layer_rule(), conv_bias_rule()}; }

std::pair<GraphIR, PassReport> merge_patterns(const GraphIR& input, const std::vector<PatternRule>& rules) {
  GraphIR g = infer_shapes(input);
  PassReport report{"merge_patterns", 0, 0, 1};

  std::vector<std::pair<const PatternRule*, PatternMatch>> matches;
  std::set<NodeId> claimed;
  for (NodeId id : topo_order(g)) {
    if (claimed.count(id)) continue;
    for (const auto& rule : rules) {
      auto m = rule.matcher(g, id);
      if (!m) continue;
      if (std::any_of(m->nodes.begin(), m->nodes.end(), [&](NodeId n) { return claimed.count(n) > 0; })) continue;
      claimed.insert(m->nodes.begin(), m->nodes.end());
      matches.emplace_back(&rule, std::move(*m));
      break;
    }
  }

  for (const auto& [rule, m] : matches) {
    Replacement rep = rule->build(g, m);
    const NodeId keep = *std::min_element(m.nodes.begin(), m.nodes.end());
    const NodeSpec& last = g.node(m.nodes.back());
    NodeSpec merged;
    merged.id = keep;
    merged.op_type = rule->replacement_op;
    merged.name = last.name;
    merged.inputs = std::move(rep.inputs);
    merged.outputs = last.outputs;
    merged.attributes = std::move(rep.attributes);
    std::set<NodeId> origin;
    for (NodeId n : m.nodes) {
      auto it = g.provenance.find(n);
      if (it != g.provenance.end()) {
        origin.insert(it->second.begin(), it->second.end());
        g.provenance.erase(it);
      }
      g.nodes.erase(n);
    }
    g.provenance[keep] = std::move(origin);
    for (auto& p : rep.new_parameters) {
      const std::string name = p.name;
      g.values.insert_or_assign(name, std::move(p));
    }
    g.nodes.emplace(keep, std::move(merged));
    relink(g);
    report.nodes_merged += m.nodes.size() - 1;
  }
  return {infer_shapes(g), report};
}

// ---------------------------------------------------------------------------

std::pair<GraphIR, std::vector<PassReport>> simplify(const GraphIR& input, const SimplifyOptions& options) {
  GraphIR g = infer_shapes(input);
  PassReport removal{"remove_low_importance", 0, 0, 0};
  PassReport folding{"fold_constants", 0, 0, 0};
  PassReport merging{"merge_patterns", 0, 0, 0};
  std::size_t iteration = 0;
  for (;;) {
    if (iteration == options.max_iterations) {
      throw Error(ErrorCode::FixpointNotReached,
                  "simplification still changing the graph after " + std::to_string(iteration) + " iterations");
    }
    ++iteration;
    auto [removed, r1] = remove_low_importance(g, options.removal);
    auto [folded, r2] = fold_constants(removed, options.fold);
    auto [merged, r3] = merge_patterns(folded, options.rules);
    g = std::move(merged);
    removal.nodes_removed += r1.nodes_removed;
    folding.nodes_removed += r2.nodes_removed;
    merging.nodes_merged += r3.nodes_merged;
    if (r1.nodes_removed + r2.nodes_removed + r3.nodes_merged == 0) break;
  }
  removal.iterations = folding.iterations = merging.iterations = iteration;
  validate(g);
  return {std::move(g), {removal, folding, merging}};
}

}  // namespace onnxnet
