#include "onnxnet/shape_inference.hpp"

#include <algorithm>
#include <string>

namespace onnxnet {

namespace {

[[noreturn]] void mismatch(const NodeSpec& n, const std::string& why) {
  throw Error(ErrorCode::ShapeMismatch, n.op_type + " '" + n.name + "': " + why);
}

Dim mul(Dim a, Dim b) { return a && b ? Dim(*a * *b) : Dim(); }

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

std::int64_t normalize_axis(const NodeSpec& n, std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) mismatch(n, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  return axis < 0 ? axis + r : axis;
}

// Merges two extents that must agree; unknown on either side yields the other.
Dim unify(const NodeSpec& n, Dim a, Dim b, const char* what) {
  if (a && b && *a != *b) {
    mismatch(n, std::string(what) + " " + std::to_string(*a) + " vs " + std::to_string(*b));
  }
  return a ? a : b;
}

struct Context {
  const GraphIR& g;

  const ValueInfo* operand(const NodeSpec& n, std::size_t i) const {
    if (i >= n.inputs.size() || n.inputs[i].empty()) return nullptr;
    return g.find_value(n.inputs[i]);
  }
  TensorShape shape(const NodeSpec& n, std::size_t i) const {
    const auto* v = operand(n, i);
    return v ? v->shape : TensorShape::unknown_rank();
  }
  std::optional<std::vector<std::int64_t>> constant_ints(const NodeSpec& n, std::size_t i) const {
    const auto* v = operand(n, i);
    if (!v || !v->data || !v->data->has_payload) return std::nullopt;
    return v->data->as_int64s();
  }
};

TensorShape infer_conv(const Context& ctx, const NodeSpec& n) {
  const TensorShape x = ctx.shape(n, 0);
  const TensorShape w = ctx.shape(n, 1);
  const std::int64_t group = n.attr_int("group").value_or(1);
  std::vector<std::int64_t> kernel;
  if (auto ks = n.attr_ints("kernel_shape")) {
    kernel = *ks;
  } else if (w.fully_known() && w.rank() >= 3) {
    for (std::size_t i = 2; i < w.rank(); ++i) kernel.push_back(*w[i]);
  }
  if (!x.rank_known() && !w.rank_known()) return TensorShape::unknown_rank();
  const std::size_t rank = x.rank_known() ? x.rank() : w.rank();
  if (rank < 3) mismatch(n, "expects an input of rank >= 3");
  if (x.rank_known() && w.rank_known() && w.rank() != x.rank()) mismatch(n, "weight rank differs from input rank");
  if (x.rank_known() && w.rank_known() && x[1] && w[1] && *x[1] != *w[1] * group) {
    mismatch(n, "input has " + std::to_string(*x[1]) + " channels but weight expects " +
                    std::to_string(*w[1] * group));
  }
  if (auto bias = ctx.operand(n, 2); bias && bias->shape.fully_known() && w.rank_known() && w[0]) {
    if (bias->shape.rank() != 1 || *bias->shape[0] != *w[0]) mismatch(n, "bias does not match output channels");
  }
  std::vector<Dim> out(rank);
  out[0] = x.rank_known() ? x[0] : Dim();
  out[1] = w.rank_known() ? w[0] : Dim();
  if (kernel.size() != rank - 2) {
    return TensorShape(out);  // spatial extents unknown without the kernel
  }
  std::vector<Dim> spatial(rank - 2);
  if (x.rank_known()) std::copy(x.dims().begin() + 2, x.dims().end(), spatial.begin());
  const auto geo = window_geometry(n, kernel, spatial);
  std::copy(geo.output.begin(), geo.output.end(), out.begin() + 2);
  return TensorShape(out);
}

TensorShape infer_pool(const Context& ctx, const NodeSpec& n) {
  const TensorShape x = ctx.shape(n, 0);
  if (!x.rank_known()) return x;
  if (x.rank() < 3) mismatch(n, "expects an input of rank >= 3");
  auto kernel = n.attr_ints("kernel_shape");
  if (!kernel || kernel->size() != x.rank() - 2) mismatch(n, "kernel_shape missing or of wrong length");
  std::vector<Dim> spatial(x.dims().begin() + 2, x.dims().end());
  const auto geo = window_geometry(n, *kernel, spatial);
  std::vector<Dim> out{x[0], x[1]};
  out.insert(out.end(), geo.output.begin(), geo.output.end());
  return TensorShape(out);
}

TensorShape infer_gemm(const Context& ctx, const NodeSpec& n) {
  const TensorShape a = ctx.shape(n, 0);
  const TensorShape b = ctx.shape(n, 1);
  if ((a.rank_known() && a.rank() != 2) || (b.rank_known() && b.rank() != 2)) mismatch(n, "operands must be 2-D");
  const bool ta = n.attr_int("transA").value_or(0) != 0;
  const bool tb = n.attr_int("transB").value_or(0) != 0;
  Dim m, ka, kb, cols;
  if (a.rank_known()) {
    m = ta ? a[1] : a[0];
    ka = ta ? a[0] : a[1];
  }
  if (b.rank_known()) {
    kb = tb ? b[1] : b[0];
    cols = tb ? b[0] : b[1];
  }
  unify(n, ka, kb, "inner dimension");
  TensorShape out(std::vector<Dim>{m, cols});
  if (auto c = ctx.operand(n, 2); c && c->shape.rank_known()) {
    if (c->shape.rank() > 2) mismatch(n, "bias has rank > 2");
    const TensorShape joined = broadcast_shapes(out, c->shape);
    if (joined.rank() != 2) mismatch(n, "bias does not broadcast to the output");
  }
  return out;
}

TensorShape infer_matmul(const Context& ctx, const NodeSpec& n) {
  TensorShape a = ctx.shape(n, 0);
  TensorShape b = ctx.shape(n, 1);
  if (!a.rank_known() || !b.rank_known()) return TensorShape::unknown_rank();
  if (a.rank() == 0 || b.rank() == 0) mismatch(n, "operands must have rank >= 1");
  std::vector<Dim> ad = a.dims(), bd = b.dims();
  const bool a_vec = ad.size() == 1, b_vec = bd.size() == 1;
  if (a_vec) ad.insert(ad.begin(), Dim(1));
  if (b_vec) bd.push_back(Dim(1));
  unify(n, ad.back(), bd[bd.size() - 2], "inner dimension");
  const TensorShape batch_a(std::vector<Dim>(ad.begin(), ad.end() - 2));
  const TensorShape batch_b(std::vector<Dim>(bd.begin(), bd.end() - 2));
  std::vector<Dim> out = broadcast_shapes(batch_a, batch_b).dims();
  if (!a_vec) out.push_back(ad[ad.size() - 2]);
  if (!b_vec) out.push_back(bd.back());
  return TensorShape(out);
}

TensorShape infer_concat(const Context& ctx, const NodeSpec& n) {
  auto axis_attr = n.attr_int("axis");
  if (!axis_attr) mismatch(n, "missing axis attribute");
  std::optional<std::vector<Dim>> out;
  std::size_t axis = 0;
  for (std::size_t i = 0; i < n.inputs.size(); ++i) {
    const TensorShape s = ctx.shape(n, i);
    if (!s.rank_known()) return TensorShape::unknown_rank();
    if (!out) {
      axis = static_cast<std::size_t>(normalize_axis(n, *axis_attr, s.rank()));
      out = s.dims();
      continue;
    }
    if (s.rank() != out->size()) mismatch(n, "operands differ in rank");
    for (std::size_t d = 0; d < s.rank(); ++d) {
      if (d == axis) {
        (*out)[d] = (*out)[d] && s[d] ? Dim(*(*out)[d] + *s[d]) : Dim();
      } else {
        (*out)[d] = unify(n, (*out)[d], s[d], "non-axis dimension");
      }
    }
  }
  if (!out) mismatch(n, "needs at least one operand");
  return TensorShape(*out);
}

TensorShape infer_reduce_mean(const Context& ctx, const NodeSpec& n) {
  const TensorShape x = ctx.shape(n, 0);
  if (!x.rank_known()) return x;
  const bool keepdims = n.attr_int("keepdims").value_or(1) != 0;
  std::optional<std::vector<std::int64_t>> axes = n.attr_ints("axes");
  if (!axes && n.inputs.size() > 1 && !n.inputs[1].empty()) {
    axes = ctx.constant_ints(n, 1);
    if (!axes) return TensorShape::unknown_rank();  // runtime-provided axes
  }
  if (!axes || axes->empty()) {
    if (n.attr_int("noop_with_empty_axes").value_or(0) != 0) return x;
    axes = std::vector<std::int64_t>();
    for (std::size_t i = 0; i < x.rank(); ++i) axes->push_back(static_cast<std::int64_t>(i));
  }
  std::vector<bool> reduced(x.rank(), false);
  for (auto a : *axes) reduced[static_cast<std::size_t>(normalize_axis(n, a, x.rank()))] = true;
  std::vector<Dim> out;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (!reduced[i]) out.push_back(x[i]);
    else if (keepdims) out.emplace_back(1);
  }
  return TensorShape(out);
}

TensorShape infer_flatten(const Context& ctx, const NodeSpec& n) {
  const TensorShape x = ctx.shape(n, 0);
  if (!x.rank_known()) return TensorShape(std::vector<Dim>(2));
  std::int64_t axis = n.attr_int("axis").value_or(1);
  const auto r = static_cast<std::int64_t>(x.rank());
  if (axis < -r || axis > r) mismatch(n, "axis out of range");
  if (axis < 0) axis += r;
  Dim outer(1), inner(1);
  for (std::int64_t i = 0; i < r; ++i) {
    if (i < axis) outer = mul(outer, x[static_cast<std::size_t>(i)]);
    else inner = mul(inner, x[static_cast<std::size_t>(i)]);
  }
  return TensorShape(std::vector<Dim>{outer, inner});
}

TensorShape infer_reshape(const Context& ctx, const NodeSpec& n) {
  const TensorShape x = ctx.shape(n, 0);
  const auto target = ctx.constant_ints(n, 1);
  if (!target) return TensorShape::unknown_rank();
  const bool allowzero = n.attr_int("allowzero").value_or(0) != 0;
  std::vector<Dim> out(target->size());
  std::optional<std::size_t> infer_at;
  for (std::size_t i = 0; i < target->size(); ++i) {
    const std::int64_t t = (*target)[i];
    if (t == -1) {
      if (infer_at) mismatch(n, "more than one -1 in target shape");
      infer_at = i;
    } else if (t == 0 && !allowzero) {
      if (x.rank_known() && i >= x.rank()) mismatch(n, "0 in target refers past the input rank");
      out[i] = x.rank_known() ? x[i] : Dim();
    } else if (t < 0) {
      mismatch(n, "negative target extent");
    } else {
      out[i] = t;
    }
  }
  const auto total = x.num_elements();
  if (infer_at) {
    Dim known(1);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (i != *infer_at) known = mul(known, out[i]);
    }
    if (total && known && *known != 0) {
      if (*total % *known != 0) mismatch(n, "cannot infer -1 extent");
      out[*infer_at] = *total / *known;
    }
  } else if (total) {
    Dim produced(1);
    for (const auto& d : out) produced = mul(produced, d);
    if (produced && *produced != *total) {
      mismatch(n, "target has " + std::to_string(*produced) + " elements, input has " + std::to_string(*total));
    }
  }
  return TensorShape(out);
}

TensorShape infer_global_pool(const Context& ctx, const NodeSpec& n) {
  const TensorShape x = ctx.shape(n, 0);
  if (!x.rank_known()) return x;
  if (x.rank() < 3) mismatch(n, "expects an input of rank >= 3");
  std::vector<Dim> out{x[0], x[1]};
  out.resize(x.rank(), Dim(1));
  return TensorShape(out);
}

}  // namespace

std::optional<TensorData> constant_node_value(const NodeSpec& n) {
  if (const auto* a = n.attr("value")) {
    if (const auto* t = std::get_if<TensorData>(a)) return *t;
  }
  if (auto v = n.attr_int("value_int")) return TensorData::from_int64s({}, std::vector<std::int64_t>{*v});
  if (auto v = n.attr_ints("value_ints"); v && n.attr("value_ints")) {
    return TensorData::from_int64s({static_cast<std::int64_t>(v->size())}, *v);
  }
  if (const auto* a = n.attr("value_float")) {
    if (const auto* f = std::get_if<float>(a)) return TensorData::from_floats({}, std::vector<float>{*f});
  }
  if (const auto* a = n.attr("value_floats")) {
    if (const auto* f = std::get_if<std::vector<float>>(a)) {
      return TensorData::from_floats({static_cast<std::int64_t>(f->size())}, *f);
    }
  }
  return std::nullopt;
}

namespace {

bool same_shape_op(const std::string& op) {
  return op == "Relu" || op == "Identity" || op == "Softmax";
}

}  // namespace

TensorShape broadcast_shapes(const TensorShape& a, const TensorShape& b) {
  if (!a.rank_known() || !b.rank_known()) return TensorShape::unknown_rank();
  const std::size_t rank = std::max(a.rank(), b.rank());
  std::vector<Dim> out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const Dim da = i < rank - a.rank() ? Dim(1) : a[i - (rank - a.rank())];
    const Dim db = i < rank - b.rank() ? Dim(1) : b[i - (rank - b.rank())];
    if (da && db) {
      if (*da != *db && *da != 1 && *db != 1) {
        throw Error(ErrorCode::ShapeMismatch,
                    "cannot broadcast " + a.to_string() + " with " + b.to_string());
      }
      out[i] = *da == 1 ? *db : *da;
    } else if (da && *da != 1) {
      out[i] = da;
    } else if (db && *db != 1) {
      out[i] = db;
    }
  }
  return TensorShape(out);
}

WindowGeometry window_geometry(const NodeSpec& node, std::span<const std::int64_t> kernel,
                               std::span<const Dim> input) {
  const std::size_t n = kernel.size();
  WindowGeometry geo;
  geo.kernel.assign(kernel.begin(), kernel.end());
  geo.strides = node.attr_ints("strides").value_or(std::vector<std::int64_t>(n, 1));
  geo.dilations = node.attr_ints("dilations").value_or(std::vector<std::int64_t>(n, 1));
  const auto pads = node.attr_ints("pads").value_or(std::vector<std::int64_t>(2 * n, 0));
  if (geo.strides.size() != n || geo.dilations.size() != n || pads.size() != 2 * n || input.size() != n) {
    mismatch(node, "window attributes do not match the number of spatial axes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (geo.strides[i] <= 0 || geo.dilations[i] <= 0 || kernel[i] <= 0) mismatch(node, "non-positive window parameter");
  }
  geo.pads_begin.assign(pads.begin(), pads.begin() + static_cast<std::ptrdiff_t>(n));
  geo.pads_end.assign(pads.begin() + static_cast<std::ptrdiff_t>(n), pads.end());
  const std::string auto_pad = node.attr_string("auto_pad").value_or("NOTSET");
  const bool ceil_mode = node.attr_int("ceil_mode").value_or(0) != 0;
  geo.output.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!input[i]) continue;
    const std::int64_t in = *input[i];
    const std::int64_t extent = geo.dilations[i] * (kernel[i] - 1) + 1;
    std::int64_t out = 0;
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
      out = ceil_div(in, geo.strides[i]);
      const std::int64_t total = std::max<std::int64_t>(0, (out - 1) * geo.strides[i] + extent - in);
      const std::int64_t small = total / 2;
      geo.pads_begin[i] = auto_pad == "SAME_UPPER" ? small : total - small;
      geo.pads_end[i] = total - geo.pads_begin[i];
    } else if (auto_pad == "VALID") {
      geo.pads_begin[i] = geo.pads_end[i] = 0;
      out = floor_div(in - extent, geo.strides[i]) + 1;
    } else {
      const std::int64_t span = in + geo.pads_begin[i] + geo.pads_end[i] - extent;
      out = (ceil_mode ? ceil_div(span, geo.strides[i]) : floor_div(span, geo.strides[i])) + 1;
    }
    if (out <= 0) mismatch(node, "window larger than the padded input");
    geo.output[i] = out;
  }
  return geo;
}

GraphIR infer_shapes(const GraphIR& input) {
  GraphIR g = input;
  const Context ctx{g};
  for (NodeId id : topo_order(g)) {
    const NodeSpec& n = g.node(id);
    const std::string& op = n.op_type;
    const bool default_domain = n.domain.empty() || n.domain == "ai.onnx";
    std::optional<std::vector<TensorShape>> shapes;
    std::optional<ElemType> type;
    if (const auto* first = ctx.operand(n, 0)) type = first->elem_type;

    if (!default_domain) {
      type.reset();
    } else if (same_shape_op(op)) {
      shapes = {{ctx.shape(n, 0)}};
    } else if (op == "Conv") {
      shapes = {{infer_conv(ctx, n)}};
    } else if (op == "MaxPool" || op == "AveragePool") {
      const TensorShape out = infer_pool(ctx, n);
      shapes = {{out, out}};  // MaxPool's optional Indices output
    } else if (op == "GlobalAveragePool") {
      shapes = {{infer_global_pool(ctx, n)}};
    } else if (op == "Gemm") {
      shapes = {{infer_gemm(ctx, n)}};
    } else if (op == "MatMul") {
      shapes = {{infer_matmul(ctx, n)}};
    } else if (op == "Add" || op == "Mul") {
      shapes = {{broadcast_shapes(ctx.shape(n, 0), ctx.shape(n, 1))}};
    } else if (op == "Concat") {
      shapes = {{infer_concat(ctx, n)}};
    } else if (op == "ReduceMean") {
      shapes = {{infer_reduce_mean(ctx, n)}};
    } else if (op == "Flatten") {
      shapes = {{infer_flatten(ctx, n)}};
    } else if (op == "Reshape") {
      shapes = {{infer_reshape(ctx, n)}};
    } else if (op == "BatchNormalization") {
      const TensorShape x = ctx.shape(n, 0);
      const TensorShape stat = ctx.shape(n, 3);
      shapes = {{x, stat, stat, stat, stat}};
    } else if (op == "Constant") {
      if (auto value = constant_node_value(n)) {
        shapes = {{TensorShape::from_dims(value->dims)}};
        type = value->elem_type;
      }
    } else if (op == "Cast") {
      if (auto to = n.attr_int("to")) type = static_cast<ElemType>(*to);
    } else if (op == "Shape") {
      type = ElemType::Int64;
    } else {
      type.reset();
    }

    for (std::size_t k = 0; k < n.outputs.size(); ++k) {
      if (n.outputs[k].empty()) continue;
      auto& v = g.values.at(n.outputs[k]);
      if (shapes) {
        v.shape = k < shapes->size() ? (*shapes)[k] : TensorShape::unknown_rank();
      }
      if (type && (k == 0 || op == "MaxPool")) v.elem_type = *type;
      if (op == "MaxPool" && k == 1) v.elem_type = ElemType::Int64;
    }
  }
  return g;
}

}  // namespace onnxnet
