#include "onnxnet/refexec.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "onnxnet/rng.hpp"
#include "onnxnet/shape_inference.hpp"

namespace onnxnet {

DenseTensor::DenseTensor(std::vector<std::int64_t> dims, std::vector<float> values)
    : shape(TensorShape::from_dims(dims)), data(std::move(values)) {
  const auto n = std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
  if (n != static_cast<std::int64_t>(data.size())) {
    throw Error(ErrorCode::ShapeMismatch, "tensor of shape " + shape.to_string() + " given " +
                                              std::to_string(data.size()) + " values");
  }
}

DenseTensor DenseTensor::filled(std::vector<std::int64_t> dims, float value) {
  const auto n = std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
  return DenseTensor(std::move(dims), std::vector<float>(static_cast<std::size_t>(n), value));
}

const std::set<std::string>& supported_ops() {
  static const std::set<std::string> ops{"Conv",    "Relu",   "MaxPool",  "AveragePool", "GlobalAveragePool",
                                         "Gemm",    "MatMul", "Add",      "Mul",         "Concat",
                                         "ReduceMean", "Identity", "Flatten", "Reshape",  "Softmax",
                                         "BatchNormalization"};
  return ops;
}

namespace {

using Dims = std::vector<std::int64_t>;

std::int64_t count(const Dims& d) {
  return std::accumulate(d.begin(), d.end(), std::int64_t{1}, std::multiplies<>());
}

std::int64_t count(const Dims& d, std::size_t from, std::size_t to) {
  return std::accumulate(d.begin() + static_cast<std::ptrdiff_t>(from), d.begin() + static_cast<std::ptrdiff_t>(to),
                         std::int64_t{1}, std::multiplies<>());
}

Dims row_major_strides(const Dims& d) {
  Dims s(d.size(), 1);
  for (std::size_t i = d.size(); i-- > 1;) s[i - 1] = s[i] * d[i];
  return s;
}

DenseTensor make(const Dims& dims, const std::vector<double>& values) {
  std::vector<float> data(values.size());
  std::transform(values.begin(), values.end(), data.begin(), [](double v) { return static_cast<float>(v); });
  return DenseTensor(dims, std::move(data));
}

[[noreturn]] void mismatch(const NodeSpec& n, const std::string& why) {
  throw Error(ErrorCode::ShapeMismatch, n.op_type + " '" + n.name + "': " + why);
}

std::size_t axis_of(const NodeSpec& n, std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) mismatch(n, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Offsets into `src` (shape `from`) for each element of the broadcast shape `to`.
std::vector<std::int64_t> broadcast_offsets(const Dims& from, const Dims& to) {
  const std::size_t pad = to.size() - from.size();
  Dims src_strides = row_major_strides(from);
  const std::int64_t total = count(to);
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(total));
  Dims index(to.size(), 0);
  for (std::int64_t flat = 0; flat < total; ++flat) {
    std::int64_t off = 0;
    for (std::size_t d = 0; d < from.size(); ++d) {
      if (from[d] != 1) off += index[d + pad] * src_strides[d];
    }
    offsets[static_cast<std::size_t>(flat)] = off;
    for (std::size_t d = to.size(); d-- > 0;) {
      if (++index[d] < to[d]) break;
      index[d] = 0;
    }
  }
  return offsets;
}

Dims broadcast_dims(const NodeSpec& n, const Dims& a, const Dims& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Dims out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) mismatch(n, "operands do not broadcast");
    out[i] = da == 1 ? db : da;
  }
  return out;
}

DenseTensor elementwise(const NodeSpec& n, const DenseTensor& a, const DenseTensor& b,
                        const std::function<double(double, double)>& f) {
  const Dims ad = a.dims(), bd = b.dims();
  const Dims out = broadcast_dims(n, ad, bd);
  const auto oa = broadcast_offsets(ad, out), ob = broadcast_offsets(bd, out);
  std::vector<double> values(oa.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = f(a.data[static_cast<std::size_t>(oa[i])], b.data[static_cast<std::size_t>(ob[i])]);
  }
  return make(out, values);
}

struct Window2d {
  WindowGeometry geo;
  std::int64_t n, c, h, w, oh, ow;
};

Window2d window_2d(const NodeSpec& node, const Dims& x, const Dims& kernel) {
  if (x.size() != 4) throw Error(ErrorCode::UnsupportedOp, node.op_type + " supported for 2-D spatial inputs only");
  const std::vector<Dim> spatial{x[2], x[3]};
  Window2d win{window_geometry(node, kernel, spatial), x[0], x[1], x[2], x[3], 0, 0};
  win.oh = *win.geo.output[0];
  win.ow = *win.geo.output[1];
  if (win.oh <= 0 || win.ow <= 0) mismatch(node, "window larger than the padded input");
  return win;
}

DenseTensor conv(const NodeSpec& node, const DenseTensor& x, const DenseTensor& w, const DenseTensor* bias) {
  const Dims xd = x.dims(), wd = w.dims();
  if (wd.size() != 4) mismatch(node, "weight must be 4-D");
  const std::int64_t group = node.attr_int("group").value_or(1);
  const std::int64_t m = wd[0], cg = wd[1];
  if (group <= 0 || xd.size() != 4 || xd[1] != cg * group || m % group != 0) mismatch(node, "channel mismatch");
  if (bias && bias->size() != static_cast<std::size_t>(m)) mismatch(node, "bias length");
  const auto win = window_2d(node, xd, {wd[2], wd[3]});
  const auto& g = win.geo;
  const std::int64_t per_group = m / group;
  std::vector<double> out(static_cast<std::size_t>(win.n * m * win.oh * win.ow));
  std::size_t o = 0;
  for (std::int64_t b = 0; b < win.n; ++b) {
    for (std::int64_t oc = 0; oc < m; ++oc) {
      const std::int64_t first_c = (oc / per_group) * cg;
      for (std::int64_t y = 0; y < win.oh; ++y) {
        for (std::int64_t xo = 0; xo < win.ow; ++xo) {
          double acc = bias ? bias->data[static_cast<std::size_t>(oc)] : 0.0;
          for (std::int64_t ic = 0; ic < cg; ++ic) {
            for (std::int64_t ky = 0; ky < wd[2]; ++ky) {
              const std::int64_t iy = y * g.strides[0] - g.pads_begin[0] + ky * g.dilations[0];
              if (iy < 0 || iy >= win.h) continue;
              for (std::int64_t kx = 0; kx < wd[3]; ++kx) {
                const std::int64_t ix = xo * g.strides[1] - g.pads_begin[1] + kx * g.dilations[1];
                if (ix < 0 || ix >= win.w) continue;
                const double xv = x.data[static_cast<std::size_t>(((b * xd[1] + first_c + ic) * win.h + iy) * win.w + ix)];
                const double wv = w.data[static_cast<std::size_t>(((oc * cg + ic) * wd[2] + ky) * wd[3] + kx)];
                acc += xv * wv;
              }
            }
          }
          out[o++] = acc;
        }
      }
    }
  }
  return make({win.n, m, win.oh, win.ow}, out);
}

DenseTensor pool(const NodeSpec& node, const DenseTensor& x, bool is_max) {
  const auto kernel = node.attr_ints("kernel_shape");
  if (!kernel || kernel->size() != 2) mismatch(node, "kernel_shape must have two entries");
  const Dims xd = x.dims();
  const auto win = window_2d(node, xd, *kernel);
  const auto& g = win.geo;
  const bool include_pad = node.attr_int("count_include_pad").value_or(0) != 0;
  std::vector<double> out(static_cast<std::size_t>(win.n * win.c * win.oh * win.ow));
  std::size_t o = 0;
  for (std::int64_t plane = 0; plane < win.n * win.c; ++plane) {
    for (std::int64_t y = 0; y < win.oh; ++y) {
      for (std::int64_t xo = 0; xo < win.ow; ++xo) {
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        std::int64_t used = 0, padded = 0;
        for (std::int64_t ky = 0; ky < (*kernel)[0]; ++ky) {
          const std::int64_t iy = y * g.strides[0] - g.pads_begin[0] + ky * g.dilations[0];
          for (std::int64_t kx = 0; kx < (*kernel)[1]; ++kx) {
            const std::int64_t ix = xo * g.strides[1] - g.pads_begin[1] + kx * g.dilations[1];
            const bool inside = iy >= 0 && iy < win.h && ix >= 0 && ix < win.w;
            if (iy >= -g.pads_begin[0] && iy < win.h + g.pads_end[0] && ix >= -g.pads_begin[1] &&
                ix < win.w + g.pads_end[1]) {
              ++padded;
            }
            if (!inside) continue;
            const double v = x.data[static_cast<std::size_t>((plane * win.h + iy) * win.w + ix)];
            acc = is_max ? std::max(acc, v) : acc + v;
            ++used;
          }
        }
        if (!is_max) acc /= static_cast<double>(include_pad ? padded : std::max<std::int64_t>(used, 1));
        out[o++] = acc;
      }
    }
  }
  return make({win.n, win.c, win.oh, win.ow}, out);
}

DenseTensor gemm(const NodeSpec& node, const DenseTensor& a, const DenseTensor& b, const DenseTensor* c) {
  const Dims ad = a.dims(), bd = b.dims();
  if (ad.size() != 2 || bd.size() != 2) mismatch(node, "operands must be 2-D");
  const bool ta = node.attr_int("transA").value_or(0) != 0;
  const bool tb = node.attr_int("transB").value_or(0) != 0;
  const double alpha = node.attr_float("alpha").value_or(1.0f);
  const double beta = node.attr_float("beta").value_or(1.0f);
  const std::int64_t m = ta ? ad[1] : ad[0], k = ta ? ad[0] : ad[1];
  const std::int64_t kb = tb ? bd[1] : bd[0], cols = tb ? bd[0] : bd[1];
  if (k != kb) mismatch(node, "inner dimensions differ");
  std::vector<std::int64_t> c_offsets;
  if (c) {
    const Dims cd = c->dims();
    if (broadcast_dims(node, cd, {m, cols}) != Dims{m, cols}) mismatch(node, "bias does not broadcast");
    c_offsets = broadcast_offsets(cd, {m, cols});
  }
  std::vector<double> out(static_cast<std::size_t>(m * cols));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = a.data[static_cast<std::size_t>(ta ? p * ad[1] + i : i * ad[1] + p)];
        const double bv = b.data[static_cast<std::size_t>(tb ? j * bd[1] + p : p * bd[1] + j)];
        acc += av * bv;
      }
      const auto flat = static_cast<std::size_t>(i * cols + j);
      out[flat] = alpha * acc + (c ? beta * c->data[static_cast<std::size_t>(c_offsets[flat])] : 0.0);
    }
  }
  return make({m, cols}, out);
}

DenseTensor matmul(const NodeSpec& node, const DenseTensor& a, const DenseTensor& b) {
  Dims ad = a.dims(), bd = b.dims();
  if (ad.empty() || bd.empty()) mismatch(node, "operands must have rank >= 1");
  const bool a_vec = ad.size() == 1, b_vec = bd.size() == 1;
  if (a_vec) ad.insert(ad.begin(), 1);
  if (b_vec) bd.push_back(1);
  const std::int64_t m = ad[ad.size() - 2], k = ad.back(), cols = bd.back();
  if (bd[bd.size() - 2] != k) mismatch(node, "inner dimensions differ");
  const Dims batch_a(ad.begin(), ad.end() - 2), batch_b(bd.begin(), bd.end() - 2);
  const Dims batch = broadcast_dims(node, batch_a, batch_b);
  const auto oa = broadcast_offsets(batch_a, batch), ob = broadcast_offsets(batch_b, batch);
  std::vector<double> out(static_cast<std::size_t>(count(batch) * m * cols));
  std::size_t o = 0;
  for (std::size_t bi = 0; bi < oa.size(); ++bi) {
    const std::int64_t abase = oa[bi] * m * k, bbase = ob[bi] * k * cols;
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < k; ++p) {
          acc += static_cast<double>(a.data[static_cast<std::size_t>(abase + i * k + p)]) *
                 b.data[static_cast<std::size_t>(bbase + p * cols + j)];
        }
        out[o++] = acc;
      }
    }
  }
  Dims od = batch;
  if (!a_vec) od.push_back(m);
  if (!b_vec) od.push_back(cols);
  return make(od, out);
}

DenseTensor concat(const NodeSpec& node, const std::vector<const DenseTensor*>& parts) {
  if (parts.empty()) mismatch(node, "no operands");
  const auto axis_attr = node.attr_int("axis");
  if (!axis_attr) mismatch(node, "missing axis");
  Dims out = parts[0]->dims();
  const std::size_t axis = axis_of(node, *axis_attr, out.size());
  out[axis] = 0;
  for (const auto* p : parts) {
    const Dims d = p->dims();
    if (d.size() != out.size()) mismatch(node, "operands differ in rank");
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i != axis && d[i] != out[i]) mismatch(node, "non-axis dimensions differ");
    }
    out[axis] += d[axis];
  }
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(count(out)));
  const std::int64_t outer = count(out, 0, axis);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const auto* p : parts) {
      const Dims d = p->dims();
      const std::int64_t block = count(d, axis, d.size());
      const auto begin = p->data.begin() + static_cast<std::ptrdiff_t>(o * block);
      data.insert(data.end(), begin, begin + static_cast<std::ptrdiff_t>(block));
    }
  }
  return DenseTensor(out, std::move(data));
}

DenseTensor reduce_mean(const NodeSpec& node, const DenseTensor& x, const DenseTensor* axes_input) {
  const Dims xd = x.dims();
  std::vector<std::int64_t> axes;
  if (auto a = node.attr_ints("axes")) {
    axes = *a;
  } else if (axes_input) {
    for (float v : axes_input->data) axes.push_back(static_cast<std::int64_t>(v));
  }
  const bool keep = node.attr_int("keepdims").value_or(1) != 0;
  if (axes.empty()) {
    if (node.attr_int("noop_with_empty_axes").value_or(0) != 0) return x;
    axes.resize(xd.size());
    std::iota(axes.begin(), axes.end(), 0);
  }
  std::vector<bool> reduced(xd.size(), false);
  for (auto a : axes) reduced[axis_of(node, a, xd.size())] = true;
  Dims kept(xd);
  for (std::size_t i = 0; i < xd.size(); ++i) {
    if (reduced[i]) kept[i] = 1;
  }
  std::vector<double> sums(static_cast<std::size_t>(count(kept)), 0.0);
  const auto offsets = broadcast_offsets(kept, xd);
  for (std::size_t i = 0; i < x.data.size(); ++i) sums[static_cast<std::size_t>(offsets[i])] += x.data[i];
  const double denom = static_cast<double>(x.data.size()) / static_cast<double>(std::max<std::size_t>(sums.size(), 1));
  for (auto& s : sums) s /= denom;
  Dims out;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    if (!reduced[i] || keep) out.push_back(kept[i]);
  }
  return make(out, sums);
}

DenseTensor reshape(const NodeSpec& node, const DenseTensor& x, const DenseTensor& target) {
  const Dims xd = x.dims();
  const bool allowzero = node.attr_int("allowzero").value_or(0) != 0;
  Dims out;
  std::optional<std::size_t> infer;
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    auto v = static_cast<std::int64_t>(target.data[i]);
    if (v == 0 && !allowzero) {
      if (i >= xd.size()) mismatch(node, "0 refers past the input rank");
      v = xd[i];
    }
    if (v == -1) {
      if (infer) mismatch(node, "more than one -1");
      infer = i;
      v = 1;
    } else if (v < 0) {
      mismatch(node, "negative extent");
    }
    out.push_back(v);
  }
  const std::int64_t known = count(out);
  if (infer) {
    if (known == 0 || count(xd) % known != 0) mismatch(node, "cannot infer the -1 extent");
    out[*infer] = count(xd) / known;
  }
  if (count(out) != count(xd)) mismatch(node, "element count changes");
  return DenseTensor(out, x.data);
}

DenseTensor softmax(const NodeSpec& node, const DenseTensor& x, std::int64_t opset) {
  const Dims xd = x.dims();
  std::int64_t outer, extent, inner;
  if (opset >= 13) {
    const std::size_t axis = axis_of(node, node.attr_int("axis").value_or(-1), xd.size());
    outer = count(xd, 0, axis);
    extent = xd[axis];
    inner = count(xd, axis + 1, xd.size());
  } else {
    const std::size_t axis = axis_of(node, node.attr_int("axis").value_or(1), xd.size());
    outer = count(xd, 0, axis);
    extent = count(xd, axis, xd.size());
    inner = 1;
  }
  std::vector<double> out(x.data.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      auto at = [&](std::int64_t e) { return static_cast<std::size_t>((o * extent + e) * inner + i); };
      double peak = -std::numeric_limits<double>::infinity();
      for (std::int64_t e = 0; e < extent; ++e) peak = std::max<double>(peak, x.data[at(e)]);
      double total = 0.0;
      for (std::int64_t e = 0; e < extent; ++e) total += out[at(e)] = std::exp(x.data[at(e)] - peak);
      for (std::int64_t e = 0; e < extent; ++e) out[at(e)] /= total;
    }
  }
  return make(xd, out);
}

DenseTensor batch_norm(const NodeSpec& node, const std::vector<const DenseTensor*>& in) {
  const Dims xd = in[0]->dims();
  if (xd.size() < 2) mismatch(node, "input rank < 2");
  const std::int64_t c = xd[1], inner = count(xd, 2, xd.size());
  for (std::size_t k = 1; k < 5; ++k) {
    if (static_cast<std::int64_t>(in[k]->size()) != c) mismatch(node, "statistics length differs from channels");
  }
  const double eps = node.attr_float("epsilon").value_or(1e-5f);
  std::vector<double> out(in[0]->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto ch = static_cast<std::size_t>((static_cast<std::int64_t>(i) / inner) % c);
    out[i] = (in[0]->data[i] - in[3]->data[ch]) / std::sqrt(static_cast<double>(in[4]->data[ch]) + eps) *
                 in[1]->data[ch] +
             in[2]->data[ch];
  }
  return make(xd, out);
}

DenseTensor global_average_pool(const NodeSpec& node, const DenseTensor& x) {
  const Dims xd = x.dims();
  if (xd.size() < 3) mismatch(node, "input rank < 3");
  const std::int64_t planes = xd[0] * xd[1], area = count(xd, 2, xd.size());
  std::vector<double> out(static_cast<std::size_t>(planes));
  for (std::int64_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < area; ++i) acc += x.data[static_cast<std::size_t>(p * area + i)];
    out[static_cast<std::size_t>(p)] = acc / static_cast<double>(area);
  }
  Dims od{xd[0], xd[1]};
  od.resize(xd.size(), 1);
  return make(od, out);
}

DenseTensor from_tensor_data(const TensorData& t) {
  if (!t.has_payload) throw Error(ErrorCode::InvalidArgument, "initializer without decodable payload");
  const auto values = t.as_doubles();
  return make(t.dims, values);
}

}  // namespace

TensorMap parameters_of(const GraphIR& g) {
  TensorMap out;
  for (const auto& [name, v] : g.values) {
    if (v.role == ValueRole::Parameter && v.data && v.data->has_payload) out.emplace(name, from_tensor_data(*v.data));
  }
  return out;
}

TensorMap execute(const GraphIR& g, const TensorMap& inputs, const TensorMap& params) {
  TensorMap env;
  for (const auto& [name, v] : g.values) {
    if (v.role != ValueRole::Parameter) continue;
    if (auto it = params.find(name); it != params.end()) {
      env[name] = it->second;
    } else if (v.data && v.data->has_payload) {
      env[name] = from_tensor_data(*v.data);
    }
  }
  for (const auto& name : g.graph_inputs) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw Error(ErrorCode::InvalidArgument, "no value supplied for graph input '" + name + "'");
    env[name] = it->second;
  }

  for (NodeId id : topo_order(g)) {
    const NodeSpec& n = g.node(id);
    if (!supported_ops().count(n.op_type) || !(n.domain.empty() || n.domain == "ai.onnx")) {
      throw Error(ErrorCode::UnsupportedOp, "reference executor does not implement " + n.op_type);
    }
    std::vector<const DenseTensor*> in;
    for (const auto& name : n.inputs) {
      if (name.empty()) {
        in.push_back(nullptr);
        continue;
      }
      auto it = env.find(name);
      if (it == env.end()) throw Error(ErrorCode::InvalidArgument, "value '" + name + "' is not available");
      in.push_back(&it->second);
    }
    auto arg = [&](std::size_t i) -> const DenseTensor& {
      if (i >= in.size() || !in[i]) mismatch(n, "missing operand " + std::to_string(i));
      return *in[i];
    };
    auto optional_arg = [&](std::size_t i) { return i < in.size() ? in[i] : nullptr; };

    const std::string& op = n.op_type;
    DenseTensor y;
    if (op == "Conv") {
      y = conv(n, arg(0), arg(1), optional_arg(2));
    } else if (op == "Relu") {
      y = arg(0);
      for (auto& v : y.data) v = std::max(v, 0.0f);
    } else if (op == "MaxPool" || op == "AveragePool") {
      y = pool(n, arg(0), op == "MaxPool");
    } else if (op == "GlobalAveragePool") {
      y = global_average_pool(n, arg(0));
    } else if (op == "Gemm") {
      y = gemm(n, arg(0), arg(1), optional_arg(2));
    } else if (op == "MatMul") {
      y = matmul(n, arg(0), arg(1));
    } else if (op == "Add") {
      y = elementwise(n, arg(0), arg(1), std::plus<double>());
    } else if (op == "Mul") {
      y = elementwise(n, arg(0), arg(1), std::multiplies<double>());
    } else if (op == "Concat") {
      for (std::size_t i = 0; i < in.size(); ++i) arg(i);
      y = concat(n, in);
    } else if (op == "ReduceMean") {
      y = reduce_mean(n, arg(0), optional_arg(1));
    } else if (op == "Identity") {
      y = arg(0);
    } else if (op == "Flatten") {
      const Dims xd = arg(0).dims();
      const std::size_t axis = n.attr_int("axis").value_or(1) == static_cast<std::int64_t>(xd.size())
                                   ? xd.size()
                                   : axis_of(n, n.attr_int("axis").value_or(1), xd.size());
      y = DenseTensor({count(xd, 0, axis), count(xd, axis, xd.size())}, arg(0).data);
    } else if (op == "Reshape") {
      y = reshape(n, arg(0), arg(1));
    } else if (op == "Softmax") {
      y = softmax(n, arg(0), g.meta.opset);
    } else if (op == "BatchNormalization") {
      for (std::size_t i = 0; i < 5; ++i) arg(i);
      y = batch_norm(n, in);
    }
    if (n.outputs.empty() || n.outputs[0].empty()) continue;
    env[n.outputs[0]] = std::move(y);
  }

  TensorMap out;
  for (const auto& name : g.graph_outputs) {
    auto it = env.find(name);
    if (it == env.end()) throw Error(ErrorCode::InvalidArgument, "graph output '" + name + "' was not computed");
    out[name] = it->second;
  }
  return out;
}

TensorMap random_inputs(const GraphIR& g, std::uint64_t seed) {
  Rng rng(seed);
  TensorMap out;
  for (const auto& name : g.graph_inputs) {
    const auto dims = g.value(name).shape.concrete();
    std::vector<float> data(static_cast<std::size_t>(count(dims)));
    for (auto& v : data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    out.emplace(name, DenseTensor(dims, std::move(data)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random instances

namespace {

class Generator {
 public:
  Generator(const InstanceSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {}

  GraphIR run() {
    b_.opset(17);
    const Dims x{1, rng_.between(1, 3), rng_.between(6, 12), rng_.between(6, 12)};
    b_.input("x", TensorShape::from_dims(x));
    pool_.push_back({"x", x});

    const std::size_t reserved = spec_.identities + 3 * spec_.linear_pairs;
    const std::size_t budget = spec_.max_nodes > reserved ? spec_.max_nodes - reserved : 1;
    while (nodes_ < budget) step(budget - nodes_);
    while (linear_pairs_ < spec_.linear_pairs) {
      Tensor t = pool_.back();
      if (t.dims.size() != 2) t = flatten(t);
      linear(t);
    }
    for (const auto& t : pool_) {
      if (!consumed_.count(t.name)) b_.output(t.name);
    }
    return b_.build();
  }

 private:
  struct Tensor {
    std::string name;
    Dims dims;
  };

  bool allowed(const std::string& op) const { return spec_.ops.count(op) > 0; }

  std::string fresh(const std::string& stem) { return stem + std::to_string(counter_++); }

  std::string param(const std::string& stem, const Dims& dims, double scale, double offset = 0.0) {
    std::vector<float> values(static_cast<std::size_t>(count(dims)));
    for (auto& v : values) v = static_cast<float>(offset + scale * rng_.uniform(-1.0, 1.0));
    const std::string name = fresh(stem);
    b_.parameter(name, TensorData::from_floats(dims, values));
    return name;
  }

  Tensor emit(const std::string& op, std::vector<std::string> inputs, const Dims& out, Attributes attrs = {}) {
    for (const auto& in : inputs) consumed_.insert(in);
    Tensor t{fresh("t"), out};
    b_.node(op, std::move(inputs), {t.name}, std::move(attrs));
    pool_.push_back(t);
    ++nodes_;
    return t;
  }

  static std::vector<std::int64_t> repeat(std::int64_t v, std::size_t n) { return std::vector<std::int64_t>(n, v); }

  Tensor flatten(const Tensor& t) {
    return emit("Flatten", {t.name}, {t.dims[0], count(t.dims, 1, t.dims.size())}, {{"axis", std::int64_t{1}}});
  }

  void linear(const Tensor& t) {
    const std::int64_t f = t.dims[1], out = rng_.between(1, 8);
    const auto w = param("W", {f, out}, 1.0 / std::sqrt(static_cast<double>(f)));
    const Tensor mm = emit("MatMul", {t.name, w}, {t.dims[0], out});
    const auto bias = param("b", {out}, 0.5);
    if (rng_.chance(0.5)) emit("Add", {mm.name, bias}, mm.dims);
    else emit("Add", {bias, mm.name}, mm.dims);
    ++linear_pairs_;
  }

  const Tensor* partner(const Tensor& t, bool same_shape) {
    std::vector<const Tensor*> found;
    for (const auto& p : pool_) {
      if (p.name == t.name || p.dims.size() != t.dims.size()) continue;
      bool ok = true;
      for (std::size_t i = 0; i < p.dims.size(); ++i) {
        if ((same_shape || i != 1) && p.dims[i] != t.dims[i]) ok = false;
      }
      if (ok) found.push_back(&p);
    }
    return found.empty() ? nullptr : found[static_cast<std::size_t>(rng_.below(found.size()))];
  }

  void step(std::size_t remaining) {
    const Tensor t = rng_.chance(0.7) ? pool_.back() : rng_.pick(pool_);
    const bool spatial = t.dims.size() == 4;
    std::vector<std::string> ops;
    auto offer = [&](const std::string& op, bool ok) {
      if (ok && allowed(op)) ops.push_back(op);
    };
    const std::int64_t h = spatial ? t.dims[2] : 0, w = spatial ? t.dims[3] : 0;
    offer("Conv", spatial);
    offer("Relu", true);
    offer("MaxPool", spatial && h >= 2 && w >= 2);
    offer("AveragePool", spatial && h >= 2 && w >= 2);
    offer("GlobalAveragePool", spatial);
    offer("BatchNormalization", spatial);
    offer("Add", true);
    offer("Mul", true);
    offer("Concat", t.dims[1] <= 8);
    offer("ReduceMean", spatial);
    offer("Identity", true);
    offer("Flatten", spatial);
    offer("Reshape", spatial);
    offer("Gemm", !spatial);
    offer("MatMul", !spatial);
    offer("Softmax", !spatial);
    if (ops.empty()) {
      // Nothing in the subset applies to this tensor; fall back to a no-op.
      emit("Identity", {t.name}, t.dims);
      return;
    }
    const std::string op = rng_.pick(ops);
    const std::int64_t c = t.dims[1];

    if (op == "Conv") {
      const std::int64_t k = std::min({rng_.chance(0.5) ? std::int64_t{3} : std::int64_t{1}, h + 2, w + 2});
      const std::int64_t pad = k == 3 && (rng_.chance(0.6) || h < 3 || w < 3) ? 1 : 0;
      const std::int64_t stride = rng_.chance(0.25) && h >= 4 && w >= 4 ? 2 : 1;
      std::int64_t m = rng_.between(1, 4), group = 1;
      if (c > 1 && rng_.chance(0.2)) m = group = c;
      const auto weight = param("W", {m, c / group, k, k}, 1.0 / std::sqrt(static_cast<double>(c / group * k * k)));
      std::vector<std::string> ins{t.name, weight};
      if (rng_.chance(0.4)) ins.push_back(param("b", {m}, 0.5));
      Attributes a{{"kernel_shape", repeat(k, 2)},
                   {"pads", repeat(pad, 4)},
                   {"strides", repeat(stride, 2)},
                   {"dilations", repeat(1, 2)}};
      if (group != 1) a["group"] = group;
      emit("Conv", ins, {t.dims[0], m, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1}, a);
    } else if (op == "Relu" || op == "Identity") {
      emit(op, {t.name}, t.dims);
    } else if (op == "MaxPool" || op == "AveragePool") {
      const std::int64_t k = h >= 3 && w >= 3 && rng_.chance(0.3) ? 3 : 2;
      const std::int64_t stride = rng_.chance(0.5) ? 2 : 1;
      emit(op, {t.name}, {t.dims[0], c, (h - k) / stride + 1, (w - k) / stride + 1},
           {{"kernel_shape", repeat(k, 2)}, {"strides", repeat(stride, 2)}});
    } else if (op == "GlobalAveragePool") {
      emit(op, {t.name}, {t.dims[0], c, 1, 1});
    } else if (op == "BatchNormalization") {
      emit(op,
           {t.name, param("gamma", {c}, 0.5, 1.0), param("beta", {c}, 0.5), param("mean", {c}, 0.5),
            param("var", {c}, 0.4, 1.0)},
           t.dims);
    } else if (op == "Add" || op == "Mul") {
      if (const Tensor* other = partner(t, true); other && rng_.chance(0.5)) {
        emit(op, {t.name, other->name}, t.dims);
      } else {
        const Dims pd = spatial ? (rng_.chance(0.5) ? Dims{1, c, 1, 1} : Dims{c, 1, 1}) : Dims{c};
        emit(op, {t.name, param(op == "Add" ? "bias" : "scale", pd, 0.5, op == "Mul" ? 1.0 : 0.0)}, t.dims);
      }
    } else if (op == "Concat") {
      const Tensor* other = partner(t, false);
      const Tensor& rhs = other && other->dims[1] <= 8 ? *other : t;
      Dims out = t.dims;
      out[1] += rhs.dims[1];
      emit(op, {t.name, rhs.name}, out, {{"axis", std::int64_t{1}}});
    } else if (op == "ReduceMean") {
      const bool keep = rng_.chance(0.5);
      emit(op, {t.name}, keep ? Dims{t.dims[0], c, 1, 1} : Dims{t.dims[0], c},
           {{"axes", std::vector<std::int64_t>{2, 3}}, {"keepdims", std::int64_t{keep}}});
    } else if (op == "Flatten") {
      flatten(t);
    } else if (op == "Reshape") {
      const std::string shape = fresh("shape");
      const std::vector<std::int64_t> target{1, -1};
      b_.parameter(shape, TensorData::from_int64s({2}, target));
      emit(op, {t.name, shape}, {1, count(t.dims)});
    } else if (op == "Gemm") {
      const std::int64_t out = rng_.between(1, 8);
      const bool trans = rng_.chance(0.5);
      const double scale = 1.0 / std::sqrt(static_cast<double>(c));
      std::vector<std::string> ins{t.name, param("W", trans ? Dims{out, c} : Dims{c, out}, scale)};
      if (rng_.chance(0.7)) ins.push_back(param("b", {out}, 0.5));
      Attributes a;
      if (trans) a["transB"] = std::int64_t{1};
      emit(op, ins, {t.dims[0], out}, a);
    } else if (op == "MatMul") {
      if (remaining >= 2) {
        linear(t);
      } else {
        const std::int64_t out = rng_.between(1, 8);
        const auto w = param("W", {c, out}, 1.0 / std::sqrt(static_cast<double>(c)));
        emit(op, {t.name, w}, {t.dims[0], out});
      }
    } else if (op == "Softmax") {
      emit(op, {t.name}, t.dims, {{"axis", std::int64_t{1}}});
    }
  }

  const InstanceSpec& spec_;
  Rng rng_;
  GraphBuilder b_;
  std::vector<Tensor> pool_;
  std::set<std::string> consumed_;
  std::size_t nodes_ = 0;
  std::size_t linear_pairs_ = 0;
  std::size_t counter_ = 0;
};

}  // namespace

Instance random_instance(const InstanceSpec& spec, std::uint64_t seed) {
  if (spec.max_nodes == 0) throw Error(ErrorCode::InvalidArgument, "max_nodes must be positive");
  Instance inst;
  inst.graph = Generator(spec, seed).run();
  if (spec.identities) inst.graph = inject_identities(inst.graph, spec.identities, seed ^ 0x9e3779b97f4a7c15ULL);
  inst.inputs = random_inputs(inst.graph, seed + 1);
  inst.params = parameters_of(inst.graph);
  return inst;
}

GraphIR inject_identities(const GraphIR& input, std::size_t count, std::uint64_t seed) {
  GraphIR g = input;
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    // Candidate sites: every non-parameter input slot, plus every produced graph output.
    std::vector<std::pair<NodeId, std::size_t>> edges;
    for (const auto& [id, n] : g.nodes) {
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        if (!n.inputs[s].empty() && !g.is_parameter(n.inputs[s])) edges.emplace_back(id, s);
      }
    }
    std::vector<std::string> outs;
    for (const auto& o : g.graph_outputs) {
      if (g.value(o).producer) outs.push_back(o);
    }
    const std::size_t total = edges.size() + outs.size();
    if (total == 0) break;
    const std::size_t pick = static_cast<std::size_t>(rng.below(total));
    const NodeId id = g.next_node_id();
    std::string fresh;
    for (int i = 0;; ++i) {
      fresh = "identity_" + std::to_string(id) + (i ? "_" + std::to_string(i) : "");
      if (!g.values.count(fresh)) break;
    }
    NodeSpec node;
    node.id = id;
    node.op_type = "Identity";
    node.name = "Identity_" + std::to_string(id);
    if (pick < edges.size()) {
      auto& target = g.nodes.at(edges[pick].first);
      std::string& slot = target.inputs[edges[pick].second];
      node.inputs = {slot};
      node.outputs = {fresh};
      slot = fresh;
    } else {
      const std::string& out = outs[pick - edges.size()];
      auto& producer = g.nodes.at(*g.value(out).producer);
      for (auto& o : producer.outputs) {
        if (o == out) o = fresh;
      }
      for (auto& [nid, n] : g.nodes) {
        std::replace(n.inputs.begin(), n.inputs.end(), out, fresh);
      }
      g.values[fresh].name = fresh;
      node.inputs = {fresh};
      node.outputs = {out};
    }
    g.values[fresh].name = fresh;
    g.nodes.emplace(id, std::move(node));
    g.provenance[id] = {id};
    relink(g);
  }
  validate(g);
  return infer_shapes(g);
}

}  // namespace onnxnet
