#include <doctest.h>

#include <algorithm>

#include "graphs.hpp"
#include "onnxnet/condense.hpp"
#include "onnxnet/passes.hpp"
#include "onnxnet/refexec.hpp"
#include "onnxnet/shape_inference.hpp"

using namespace onnxnet;

namespace {

std::vector<std::vector<NodeId>> node_lists(const std::vector<Chain>& chains) {
  std::vector<std::vector<NodeId>> out;
  for (const auto& c : chains) out.push_back(c.nodes);
  return out;
}

// Chains recomputed from raw node lists: count reads per value, decide each
// successor link directly, then walk from every node without a linked predecessor.
std::vector<std::vector<NodeId>> oracle_chains(const GraphIR& g) {
  std::set<std::string> params, outputs(g.graph_outputs.begin(), g.graph_outputs.end());
  for (const auto& [name, v] : g.values) {
    if (v.data && !v.producer && !g.is_graph_input(name)) params.insert(name);
  }
  std::map<std::string, std::vector<NodeId>> readers;
  for (const auto& [id, n] : g.nodes) {
    for (const auto& in : n.inputs) {
      if (!in.empty()) readers[in].push_back(id);
    }
  }
  auto activations_in = [&](const NodeSpec& n) {
    std::size_t k = 0;
    for (const auto& in : n.inputs) k += !in.empty() && !params.count(in);
    return k;
  };
  std::map<NodeId, NodeId> next, prev;
  for (const auto& [id, n] : g.nodes) {
    std::vector<std::string> outs;
    for (const auto& o : n.outputs) {
      if (!o.empty()) outs.push_back(o);
    }
    if (outs.size() != 1 || outputs.count(outs[0]) || activations_in(n) > 1) continue;
    const auto& r = readers[outs[0]];
    if (r.size() != 1 || activations_in(g.node(r[0])) != 1) continue;
    next[id] = r[0];
    prev[r[0]] = id;
  }
  const auto order = topo_order(g);
  std::vector<std::vector<NodeId>> chains;
  for (NodeId id : order) {
    if (prev.count(id)) continue;
    std::vector<NodeId> c{id};
    while (next.count(c.back())) c.push_back(next.at(c.back()));
    chains.push_back(c);
  }
  return chains;
}

}  // namespace

TEST_CASE("a linear graph is one chain") {
  const GraphIR g = infer_shapes(testgraphs::linear_chain());
  auto [chains, names] = build_chains(g);
  REQUIRE(chains.size() == 1);
  CHECK(chains[0].nodes == std::vector<NodeId>{0, 1, 2, 3});
  CHECK(chains[0].head_inputs == std::vector<std::string>{"x", "w", "fw"});
  CHECK(chains[0].tail_outputs == std::vector<std::string>{"y"});
  CHECK(names.label("y") == "Out");
  CHECK(names.label("x") == "1x2x4x4");
  CHECK(names.label("fw") == "5x48");
  CHECK(chain_cover_check(g, chains));
}

TEST_CASE("a diamond splits into four chains") {
  const GraphIR g = infer_shapes(testgraphs::diamond());
  auto [chains, names] = build_chains(g);
  CHECK(node_lists(chains) == std::vector<std::vector<NodeId>>{{0}, {1}, {2}, {3}});
  CHECK(names.label("a") == "Value1");
  CHECK(names.label("b") == "Value2");
  CHECK(names.label("c") == "Value3");
  CHECK(names.label("d") == "Out");
  CHECK(!links(g, 0, 1));
  CHECK(!links(g, 1, 3));
}

TEST_CASE("the listing network breaks at every concatenation") {
  const GraphIR g = infer_shapes(simplify(testgraphs::figure_network()).first);
  auto [chains, names] = build_chains(g);
  CHECK(chains.size() == 19);
  std::size_t concat_lines = 0;
  for (const auto& c : chains) {
    const bool concat = g.node(c.nodes.front()).op_type == "Concat";
    concat_lines += concat;
    if (concat) CHECK(c.nodes.size() == 1);
  }
  CHECK(concat_lines == 9);
  CHECK(chains.front().nodes.size() == 6);
  CHECK(chains.back().nodes.size() == 2);
  CHECK(chain_cover_check(g, chains));
}

TEST_CASE("multiple outputs and multi-output nodes") {
  const GraphIR g = infer_shapes(GraphBuilder()
                                     .input("x", {1, 4})
                                     .node("Relu", {"x"}, {"a"})
                                     .node("Softmax", {"a"}, {"y1"})
                                     .node("Relu", {"a"}, {"y2"})
                                     .output("y1")
                                     .output("y2")
                                     .build());
  auto [chains, names] = build_chains(g);
  CHECK(chains.size() == 3);
  CHECK(names.label("y1") == "Out");
  CHECK(names.label("y2") == "Out2");

  // A graph output that is also read internally cannot end a chain silently.
  const GraphIR tap = infer_shapes(GraphBuilder()
                                       .input("x", {1, 4})
                                       .node("Relu", {"x"}, {"a"})
                                       .node("Softmax", {"a"}, {"y"})
                                       .output("a")
                                       .output("y")
                                       .build());
  auto [tchains, tnames] = build_chains(tap);
  CHECK(tchains.size() == 2);
  CHECK(tnames.label("a") == "Value1");
  CHECK(tnames.label("y") == "Out");
}

TEST_CASE("cover check rejects broken partitions") {
  const GraphIR g = infer_shapes(GraphBuilder()
                                     .input("x", {1, 4})
                                     .node("Relu", {"x"}, {"a"})
                                     .node("Relu", {"a"}, {"b"})
                                     .node("Softmax", {"b"}, {"y"})
                                     .output("y")
                                     .build());
  auto [chains, names] = build_chains(g);
  REQUIRE(chains.size() == 1);
  CHECK(chain_cover_check(g, chains));

  Chain head{{0}, {"x"}, {"a"}}, rest{{1, 2}, {"a"}, {"y"}};
  CHECK_FALSE(chain_cover_check(g, {head, rest}));
  Chain dup{{0, 1, 2}, {"x"}, {"y"}};
  CHECK_FALSE(chain_cover_check(g, {dup, head}));
  Chain missing{{0, 1}, {"x"}, {"b"}};
  CHECK_FALSE(chain_cover_check(g, {missing}));
  Chain reversed{{2, 1, 0}, {"x"}, {"y"}};
  CHECK_FALSE(chain_cover_check(g, {reversed}));
}

TEST_CASE("chains agree with a direct recomputation on random graphs") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    InstanceSpec spec;
    spec.linear_pairs = seed % 3;
    const GraphIR g = infer_shapes(random_instance(spec, seed).graph);
    auto [chains, names] = build_chains(g);
    CHECK(node_lists(chains) == oracle_chains(g));
    CHECK(chain_cover_check(g, chains));
    std::size_t total = 0;
    for (const auto& c : chains) total += c.nodes.size();
    CHECK(total == g.nodes.size());
    // Value labels follow chain order.
    int expected = 0;
    for (const auto& c : chains) {
      for (const auto& o : c.tail_outputs) {
        const auto& label = names.label(o);
        if (label.rfind("Value", 0) == 0) CHECK(label == "Value" + std::to_string(++expected));
      }
    }
  }
}
