#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

// Fully known shape plus row-major float32 data.
struct DenseTensor {
  TensorShape shape;
  std::vector<float> data;

  DenseTensor() = default;
  DenseTensor(std::vector<std::int64_t> dims, std::vector<float> values);
  static DenseTensor filled(std::vector<std::int64_t> dims, float value);

  std::vector<std::int64_t> dims() const { return shape.concrete(); }
  std::size_t size() const { return data.size(); }
};

using TensorMap = std::map<std::string, DenseTensor>;

const std::set<std::string>& supported_ops();

// Runs the graph on the supplied tensors and returns every graph output.
// `params` overrides embedded initializer data. Arithmetic is done in double
// and rounded to float after each op.
// Errors: UnsupportedOp, ShapeMismatch, InvalidArgument (missing tensor).
TensorMap execute(const GraphIR& g, const TensorMap& inputs, const TensorMap& params = {});

// Embedded initializer data as dense tensors (non-float payloads converted).
TensorMap parameters_of(const GraphIR& g);

// Standard-normal-ish values for every graph input, reproducible per seed.
TensorMap random_inputs(const GraphIR& g, std::uint64_t seed);

struct InstanceSpec {
  std::set<std::string> ops = supported_ops();
  std::size_t max_nodes = 20;
  // Lower bound on unfused MatMul followed by bias Add pairs.
  std::size_t linear_pairs = 0;
  // Identity nodes spliced onto random edges and outputs (counted in max_nodes).
  std::size_t identities = 0;
};

struct Instance {
  GraphIR graph;
  TensorMap inputs;
  TensorMap params;
};

// Valid, connected, acyclic graph over the op subset enabled in InstanceSpec with a single
// 1xCxHxW input, all shapes concrete. Deterministic per seed.
Instance random_instance(const InstanceSpec& spec, std::uint64_t seed);

// Splices `count` Identity nodes onto random edges; some land in front of
// graph outputs. The result is revalidated.
GraphIR inject_identities(const GraphIR& g, std::size_t count, std::uint64_t seed);

}  // namespace onnxnet
