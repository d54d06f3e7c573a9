#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

// Computes output shapes (and element types) for every activation, following
// ONNX operator semantics for Conv, Relu, MaxPool, AveragePool, Gemm, MatMul,
// Add, Mul, Concat, ReduceMean, Identity, Flatten, Reshape (constant target),
// BatchNormalization, GlobalAveragePool, Softmax and Constant. Outputs of
// other ops keep whatever shape the file declared, or become unknown-rank.
// Unknown extents propagate as unknown. Idempotent.
//
// Throws ShapeMismatch when operand shapes are incompatible.
GraphIR infer_shapes(const GraphIR& g);

// Sliding-window geometry of a Conv or pooling node along its spatial axes.
struct WindowGeometry {
  std::vector<std::int64_t> kernel;
  std::vector<std::int64_t> strides;
  std::vector<std::int64_t> dilations;
  std::vector<std::int64_t> pads_begin;
  std::vector<std::int64_t> pads_end;
  std::vector<Dim> output;
};

// `kernel` comes from kernel_shape or the weight dims; `input` holds the
// spatial extents of the data operand. Explicit pads/auto_pad/ceil_mode are
// honored; pads for SAME_* are only resolved for known input extents.
WindowGeometry window_geometry(const NodeSpec& node, std::span<const std::int64_t> kernel,
                               std::span<const Dim> input);

// Value carried by a Constant node (value, value_int(s), value_float(s)).
std::optional<TensorData> constant_node_value(const NodeSpec& node);

// Multidirectional (numpy-style) broadcast; throws ShapeMismatch.
TensorShape broadcast_shapes(const TensorShape& a, const TensorShape& b);

}  // namespace onnxnet
