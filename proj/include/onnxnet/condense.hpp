#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

struct Chain {
  std::vector<NodeId> nodes;
  // Values read from outside the chain, in order of first use.
  std::vector<std::string> head_inputs;
  // Non-empty outputs of the last node.
  std::vector<std::string> tail_outputs;
};

// Printable label per value: "ValueN", "Out"/"Out2"..., or the shape literal
// of a graph input or parameter.
struct NamingTable {
  std::map<std::string, std::string> labels;

  const std::string& label(const std::string& value) const { return labels.at(value); }
};

// True when b may directly follow a on a line: a's single output feeds only
// b, b reads exactly one non-parameter input, and a is not a join (it reads
// at most one non-parameter input itself).
bool links(const GraphIR& g, NodeId a, NodeId b);

// Maximal branch-free chains, ordered by the topological position of their
// first node, and labels for every value the encoding mentions.
std::pair<std::vector<Chain>, NamingTable> build_chains(const GraphIR& g);

// True iff `chains` partition the nodes, every consecutive pair links, and no
// chain can be extended at either end.
bool chain_cover_check(const GraphIR& g, const std::vector<Chain>& chains);

}  // namespace onnxnet
