#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

struct ParseOptions {
  // Accepted range of the default-domain opset.
  std::int64_t min_opset = 9;
  std::int64_t max_opset = 20;
};

// Decodes a serialized ONNX ModelProto into a validated GraphIR whose
// provenance is the identity map. Shapes are taken from the file as-is; run
// infer_shapes() to fill in the rest.
//
// Errors: MalformedFile, CyclicGraph, DanglingReference, MultipleComponents,
// UnsupportedConstruct (subgraph-bearing ops, opset outside the range).
GraphIR parse_onnx(std::string_view bytes, const ParseOptions& options = {});
GraphIR parse_onnx_file(const std::filesystem::path& path, const ParseOptions& options = {});

// Emits a ModelProto with nodes in topological order, initializers for every
// parameter, and value_info for activations whose shape is known.
std::string serialize(const GraphIR& g);
void write_onnx_file(const GraphIR& g, const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);

}  // namespace onnxnet
