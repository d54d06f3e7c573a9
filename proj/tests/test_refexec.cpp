#include <doctest.h>

#include <cmath>

#include "graphs.hpp"
#include "testutil.hpp"
#include "onnxnet/onnx_io.hpp"
#include "onnxnet/refexec.hpp"
#include "onnxnet/shape_inference.hpp"

using namespace onnxnet;

namespace {

GraphIR unary(const std::string& op, TensorShape in, Attributes attrs = {}) {
  return GraphBuilder().input("x", std::move(in)).node(op, {"x"}, {"y"}, std::move(attrs)).output("y").build();
}

std::vector<float> run1(const GraphIR& g, DenseTensor x) { return execute(g, {{"x", std::move(x)}}).at("y").data; }

}  // namespace

TEST_CASE("elementwise and normalizing ops") {
  CHECK(run1(unary("Relu", {2}), DenseTensor({2}, {-1.0f, 2.0f})) == std::vector<float>{0.0f, 2.0f});
  const auto sm = run1(unary("Softmax", {1, 3}), DenseTensor({1, 3}, {0.0f, std::log(2.0f), std::log(5.0f)}));
  CHECK(sm[0] == doctest::Approx(0.125));
  CHECK(sm[1] == doctest::Approx(0.25));
  CHECK(sm[2] == doctest::Approx(0.625));
  const auto mean = run1(unary("ReduceMean", {1, 2, 2, 2}, {{"axes", std::vector<std::int64_t>{2, 3}}}),
                         DenseTensor({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40}));
  CHECK(mean == std::vector<float>{2.5f, 25.0f});
}

TEST_CASE("pooling") {
  std::vector<float> x(16);
  for (int i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  CHECK(run1(unary("MaxPool", {1, 1, 4, 4}, testgraphs::pool_attrs(2, 0, 2)), DenseTensor({1, 1, 4, 4}, x)) ==
        std::vector<float>{5, 7, 13, 15});
  CHECK(run1(unary("AveragePool", {1, 1, 4, 4}, testgraphs::pool_attrs(2, 0, 2)), DenseTensor({1, 1, 4, 4}, x)) ==
        std::vector<float>{2.5f, 4.5f, 10.5f, 12.5f});
  // Padding is excluded from the average by default.
  const auto padded = run1(unary("AveragePool", {1, 1, 2, 2}, testgraphs::pool_attrs(3, 1, 1)),
                           DenseTensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(padded == std::vector<float>{2.5f, 2.5f, 2.5f, 2.5f});
  CHECK(run1(unary("GlobalAveragePool", {1, 2, 1, 2}), DenseTensor({1, 2, 1, 2}, {1, 3, 5, 9})) ==
        std::vector<float>{2, 7});
}

TEST_CASE("gemm produces the classifier shape and values") {
  std::vector<float> x(512), w(10 * 512), b(10);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 7) - 3.0f;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(i % 5) * 0.25f;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(i);
  const GraphIR g = GraphBuilder()
                        .input("x", {1, 512})
                        .parameter("W", TensorData::from_floats({10, 512}, w))
                        .parameter("b", TensorData::from_floats({10}, b))
                        .node("Gemm", {"x", "W", "b"}, {"y"}, {{"transB", std::int64_t{1}}})
                        .output("y")
                        .build();
  const DenseTensor y = execute(g, {{"x", DenseTensor({1, 512}, x)}}).at("y");
  CHECK(y.shape.to_string() == "1x10");
  for (std::size_t j = 0; j < 10; ++j) {
    double acc = b[j];
    for (std::size_t k = 0; k < 512; ++k) acc += static_cast<double>(x[k]) * w[j * 512 + k];
    CHECK(y.data[j] == static_cast<float>(acc));
  }
}

TEST_CASE("1x1 convolution with an identity kernel is the identity") {
  const std::int64_t c = 3;
  std::vector<float> k(c * c, 0.0f);
  for (std::int64_t i = 0; i < c; ++i) k[i * c + i] = 1.0f;
  const GraphIR g = GraphBuilder()
                        .input("x", {1, c, 5, 4})
                        .parameter("W", TensorData::from_floats({c, c, 1, 1}, k))
                        .node("Conv", {"x", "W"}, {"y"}, testgraphs::conv_attrs(1, 0))
                        .output("y")
                        .build();
  const TensorMap in = random_inputs(g, 4);
  CHECK(execute(g, in).at("y").data == in.at("x").data);
}

TEST_CASE("3x3 convolution against a direct loop") {
  const GraphIR g = GraphBuilder()
                        .input("x", {1, 2, 5, 5})
                        .parameter("W", {3, 2, 3, 3})
                        .parameter("B", {3})
                        .node("Conv", {"x", "W", "B"}, {"y"}, testgraphs::conv_attrs(3, 1))
                        .output("y")
                        .build();
  const TensorMap in = random_inputs(g, 8);
  const auto p = parameters_of(g);
  const auto& x = in.at("x").data;
  const auto& w = p.at("W").data;
  const auto& b = p.at("B").data;
  const auto y = execute(g, in).at("y").data;
  for (int o = 0; o < 3; ++o) {
    for (int r = 0; r < 5; ++r) {
      for (int s = 0; s < 5; ++s) {
        double acc = b[o];
        for (int ci = 0; ci < 2; ++ci) {
          for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
              const int rr = r + i - 1, ss = s + j - 1;
              if (rr < 0 || rr >= 5 || ss < 0 || ss >= 5) continue;
              acc += static_cast<double>(x[(ci * 5 + rr) * 5 + ss]) * w[((o * 2 + ci) * 3 + i) * 3 + j];
            }
          }
        }
        CHECK(y[(o * 5 + r) * 5 + s] == doctest::Approx(acc).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("unsupported ops and missing tensors") {
  CHECK(error_of([] { execute(unary("Tanh", {2}), {{"x", DenseTensor({2}, {0, 1})}}); }) == ErrorCode::UnsupportedOp);
  CHECK(error_of([] { execute(unary("Relu", {2}), {}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("generator bounds and determinism") {
  InstanceSpec one;
  one.max_nodes = 1;
  const Instance single = random_instance(one, 0);
  CHECK(single.graph.nodes.size() == 1);
  CHECK(supported_ops().count(single.graph.nodes.begin()->second.op_type));

  InstanceSpec spec;
  spec.identities = 2;
  spec.linear_pairs = 1;
  const Instance a = random_instance(spec, 77), b = random_instance(spec, 77);
  CHECK(serialize(a.graph) == serialize(b.graph));
  CHECK(compare_tensors(a.inputs, b.inputs, 0, 0).empty());
}

TEST_CASE("generated instances are sound and shapes agree with inference") {
  InstanceSpec spec;
  spec.identities = 2;
  spec.linear_pairs = 1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Instance inst = random_instance(spec, seed);
    CHECK(inst.graph.nodes.size() <= spec.max_nodes);
    const GraphIR reparsed = parse_onnx(serialize(inst.graph));
    CHECK(same_structure(reparsed, inst.graph));

    // Expose every activation so intermediate shapes can be checked.
    GraphIR probe = inst.graph;
    for (const auto& [name, v] : inst.graph.values) {
      if (v.producer && !probe.is_graph_output(name)) probe.graph_outputs.push_back(name);
    }
    relink(probe);
    const TensorMap got = execute(probe, inst.inputs);
    const GraphIR inferred = infer_shapes(inst.graph);
    for (const auto& [id, n] : inst.graph.nodes) {
      for (const auto& o : n.outputs) {
        if (o.empty()) continue;
        INFO("seed " << seed << " " << n.op_type);
        CHECK(got.at(o).shape == inferred.value(o).shape);
        CHECK(got.at(o).size() == static_cast<std::size_t>(*inferred.value(o).shape.num_elements()));
      }
    }
  }
}
