#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

struct PassReport {
  std::string pass_name;
  std::size_t nodes_removed = 0;
  // Nodes eliminated by fusion; a two-node match counts one.
  std::size_t nodes_merged = 0;
  std::size_t iterations = 1;
};

struct RemovalConfig {
  // Ops elided when output-preserving: Identity always, Dropout only in its
  // inference form, Cast only when source and target types match.
  std::set<std::string> ops{"Identity", "Dropout", "Cast"};
};

struct FoldConfig {
  std::int64_t max_elements = 1'000'000;
};

struct PatternMatch {
  // Matched nodes in dataflow order; the last node's outputs survive.
  std::vector<NodeId> nodes;
};

struct Replacement {
  std::vector<std::string> inputs;
  Attributes attributes;
  // Parameters introduced by the rewrite (e.g. a transposed weight).
  std::vector<ValueInfo> new_parameters;
};

struct PatternRule {
  std::string name;
  // Called with each node in topological order as the candidate anchor.
  std::function<std::optional<PatternMatch>(const GraphIR&, NodeId)> matcher;
  std::string replacement_op;
  std::function<Replacement(const GraphIR&, const PatternMatch&)> build;
};

// MatMul(x, W) + Add(., b) -> Gemm(x, W^T, b) with transB=1, when x is 2-D
// and W, b are parameters.
PatternRule linear_layer_rule();
// Conv(x, W) + Add(., per-channel b) -> Conv(x, W, b).
PatternRule conv_bias_rule();
// Conv followed by inference BatchNormalization with parameter statistics,
// folded into the convolution weights. Not part of default_rules().
PatternRule batchnorm_folding_rule();

std::vector<PatternRule> default_rules();

std::pair<GraphIR, PassReport> remove_low_importance(const GraphIR& g, const RemovalConfig& config = {});

// Evaluates Constant, Shape, Gather, Unsqueeze, Squeeze and Concat nodes whose
// operands are constant (Shape needs only a fully known input shape) and
// replaces their outputs with parameters, repeating to a fixpoint.
// Throws FoldOverflow when a folded tensor exceeds config.max_elements.
std::pair<GraphIR, PassReport> fold_constants(const GraphIR& g, const FoldConfig& config = {});

// Scans nodes in topological order; the earliest rule that matches at an
// anchor wins and matched nodes are not reused within the scan.
std::pair<GraphIR, PassReport> merge_patterns(const GraphIR& g, const std::vector<PatternRule>& rules);

struct SimplifyOptions {
  RemovalConfig removal;
  FoldConfig fold;
  std::vector<PatternRule> rules = default_rules();
  std::size_t max_iterations = 20;
};

// Runs removal, folding and merging until none of them changes the graph.
// Returns one aggregated report per pass. Throws FixpointNotReached.
std::pair<GraphIR, std::vector<PassReport>> simplify(const GraphIR& g, const SimplifyOptions& options = {});

}  // namespace onnxnet
