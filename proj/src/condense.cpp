#include "onnxnet/condense.hpp"

#include <algorithm>
#include <optional>
#include <set>

namespace onnxnet {

namespace {

std::size_t data_inputs(const GraphIR& g, const NodeSpec& n) {
  std::size_t count = 0;
  for (const auto& in : n.inputs) {
    if (!in.empty() && !g.is_parameter(in)) ++count;
  }
  return count;
}

std::vector<std::string> live_outputs(const NodeSpec& n) {
  std::vector<std::string> out;
  for (const auto& o : n.outputs) {
    if (!o.empty()) out.push_back(o);
  }
  return out;
}

// The node that `a` would hand over to, if any.
std::optional<NodeId> successor(const GraphIR& g, NodeId a) {
  const auto& na = g.node(a);
  const auto outs = live_outputs(na);
  if (outs.size() != 1 || g.is_graph_output(outs[0]) || g.use_count(outs[0]) != 1) return std::nullopt;
  if (data_inputs(g, na) > 1) return std::nullopt;
  const NodeId b = *g.value(outs[0]).consumers.begin();
  if (data_inputs(g, g.node(b)) != 1) return std::nullopt;
  return b;
}

std::optional<NodeId> predecessor(const GraphIR& g, NodeId b) {
  for (const auto& in : g.node(b).inputs) {
    if (in.empty() || g.is_parameter(in)) continue;
    const auto& producer = g.value(in).producer;
    if (producer && successor(g, *producer) == b) return producer;
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

bool links(const GraphIR& g, NodeId a, NodeId b) { return successor(g, a) == b; }

std::pair<std::vector<Chain>, NamingTable> build_chains(const GraphIR& g) {
  const auto order = topo_order(g);
  std::vector<Chain> chains;
  for (NodeId id : order) {
    if (predecessor(g, id)) continue;
    Chain c;
    for (std::optional<NodeId> cur = id; cur; cur = successor(g, *cur)) c.nodes.push_back(*cur);
    std::set<std::string> inside, seen;
    for (NodeId n : c.nodes) {
      const auto& spec = g.node(n);
      for (const auto& in : spec.inputs) {
        if (in.empty() || inside.count(in) || !seen.insert(in).second) continue;
        c.head_inputs.push_back(in);
      }
      for (const auto& o : live_outputs(spec)) inside.insert(o);
    }
    c.tail_outputs = live_outputs(g.node(c.nodes.back()));
    chains.push_back(std::move(c));
  }

  NamingTable names;
  for (const auto& [name, v] : g.values) {
    if (v.role == ValueRole::Parameter || g.is_graph_input(name)) names.labels[name] = v.shape.to_string();
  }
  // Outputs read by nothing take the Out labels; any other output needs a
  // ValueN so later lines can refer to it.
  std::vector<std::string> terminal;
  for (const auto& o : g.graph_outputs) {
    const auto* v = g.find_value(o);
    if (v && v->producer && g.use_count(o) == 0 &&
        std::find(terminal.begin(), terminal.end(), o) == terminal.end()) {
      terminal.push_back(o);
    }
  }
  for (std::size_t i = 0; i < terminal.size(); ++i) {
    names.labels[terminal[i]] = i == 0 ? "Out" : "Out" + std::to_string(i + 1);
  }
  std::size_t next = 1;
  for (const auto& c : chains) {
    for (const auto& o : c.tail_outputs) {
      if (!names.labels.count(o)) names.labels[o] = "Value" + std::to_string(next++);
    }
  }
  return {std::move(chains), std::move(names)};
}

bool chain_cover_check(const GraphIR& g, const std::vector<Chain>& chains) {
  std::set<NodeId> covered;
  for (const auto& c : chains) {
    if (c.nodes.empty()) return false;
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
      if (!g.nodes.count(c.nodes[i]) || !covered.insert(c.nodes[i]).second) return false;
      if (i + 1 < c.nodes.size() && !links(g, c.nodes[i], c.nodes[i + 1])) return false;
    }
    if (successor(g, c.nodes.back())) return false;
    if (predecessor(g, c.nodes.front())) return false;
  }
  return covered.size() == g.nodes.size();
}

}  // namespace onnxnet
