#include <doctest.h>

#include "graphs.hpp"
#include "testutil.hpp"
#include "onnxnet/shape_inference.hpp"

using namespace onnxnet;
using testgraphs::conv_attrs;
using testgraphs::pool_attrs;

namespace {

std::string shape_of(const GraphIR& g, const std::string& v) { return infer_shapes(g).value(v).shape.to_string(); }

GraphIR unary(const std::string& op, TensorShape in, Attributes attrs = {}) {
  return GraphBuilder().input("x", std::move(in)).node(op, {"x"}, {"y"}, std::move(attrs)).output("y").build();
}

}  // namespace

TEST_CASE("convolution geometry") {
  CHECK(shape_of(testgraphs::single_conv(), "y") == "1x128x32x32");
  const GraphIR strided = GraphBuilder()
                              .input("x", {2, 3, 15, 20})
                              .parameter("W", {8, 3, 3, 5})
                              .node("Conv", {"x", "W"}, {"y"}, {{"strides", std::vector<std::int64_t>{2, 3}}})
                              .output("y")
                              .build();
  // floor((15 - 3) / 2) + 1 = 7, floor((20 - 5) / 3) + 1 = 6
  CHECK(shape_of(strided, "y") == "2x8x7x6");
  const GraphIR dilated = GraphBuilder()
                              .input("x", {1, 1, 10, 10})
                              .parameter("W", {1, 1, 3, 3})
                              .node("Conv", {"x", "W"}, {"y"}, {{"dilations", std::vector<std::int64_t>{2, 2}}})
                              .output("y")
                              .build();
  CHECK(shape_of(dilated, "y") == "1x1x6x6");
  const GraphIR same = GraphBuilder()
                           .input("x", {1, 1, 7, 7})
                           .parameter("W", {4, 1, 3, 3})
                           .node("Conv", {"x", "W"}, {"y"},
                                 {{"auto_pad", std::string("SAME_UPPER")}, {"strides", std::vector<std::int64_t>{2, 2}}})
                           .output("y")
                           .build();
  CHECK(shape_of(same, "y") == "1x4x4x4");
}

TEST_CASE("pooling geometry") {
  CHECK(shape_of(unary("MaxPool", {1, 8, 32, 32}, pool_attrs(2, 0, 2)), "y") == "1x8x16x16");
  CHECK(shape_of(unary("MaxPool", {1, 8, 32, 32}, pool_attrs(3, 1, 1)), "y") == "1x8x32x32");
  Attributes ceil = pool_attrs(2, 0, 2);
  ceil["ceil_mode"] = std::int64_t{1};
  CHECK(shape_of(unary("MaxPool", {1, 1, 5, 5}, ceil), "y") == "1x1x3x3");
  CHECK(shape_of(unary("MaxPool", {1, 1, 5, 5}, pool_attrs(2, 0, 2)), "y") == "1x1x2x2");
  CHECK(shape_of(unary("GlobalAveragePool", {2, 7, 9, 9}), "y") == "2x7x1x1");
}

TEST_CASE("dense and reduction ops") {
  const GraphIR gemm = GraphBuilder()
                           .input("x", {4, 6})
                           .parameter("W", {10, 6})
                           .parameter("b", {10})
                           .node("Gemm", {"x", "W", "b"}, {"y"}, {{"transB", std::int64_t{1}}})
                           .output("y")
                           .build();
  CHECK(shape_of(gemm, "y") == "4x10");
  const GraphIR mm = GraphBuilder()
                         .input("x", {2, 1, 3, 4})
                         .parameter("W", {5, 4, 7})
                         .node("MatMul", {"x", "W"}, {"y"})
                         .output("y")
                         .build();
  CHECK(shape_of(mm, "y") == "2x5x3x7");
  const GraphIR vec = GraphBuilder().input("x", {3, 4}).parameter("v", {4}).node("MatMul", {"x", "v"}, {"y"}).output("y").build();
  CHECK(shape_of(vec, "y") == "3");

  const std::vector<std::int64_t> hw{2, 3};
  CHECK(shape_of(unary("ReduceMean", {1, 512, 4, 4}, {{"axes", hw}, {"keepdims", std::int64_t{0}}}), "y") == "1x512");
  CHECK(shape_of(unary("ReduceMean", {1, 512, 4, 4}, {{"axes", hw}}), "y") == "1x512x1x1");
  CHECK(shape_of(unary("ReduceMean", {2, 3}, {{"keepdims", std::int64_t{0}}}), "y") == "scalar");
  CHECK(shape_of(unary("Flatten", {2, 3, 4, 5}, {{"axis", std::int64_t{2}}}), "y") == "6x20");
  CHECK(shape_of(unary("Softmax", {2, 9}), "y") == "2x9");
}

TEST_CASE("concat, reshape and broadcasting") {
  const GraphIR cat = GraphBuilder()
                          .input("x", {1, 32, 8, 8})
                          .node("Concat", {"x", "x", "x"}, {"y"}, {{"axis", std::int64_t{1}}})
                          .output("y")
                          .build();
  CHECK(shape_of(cat, "y") == "1x96x8x8");
  const std::vector<std::int64_t> target{0, -1, 4};
  const GraphIR reshape = GraphBuilder()
                              .input("x", {2, 3, 8})
                              .parameter("s", TensorData::from_int64s({3}, target))
                              .node("Reshape", {"x", "s"}, {"y"})
                              .output("y")
                              .build();
  CHECK(shape_of(reshape, "y") == "2x6x4");
  CHECK(broadcast_shapes({4, 1, 3}, {5, 1}) == TensorShape{4, 5, 3});
  CHECK(broadcast_shapes({}, {2, 2}) == TensorShape{2, 2});
  CHECK(error_of([] { broadcast_shapes({3}, {4}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("unknown extents propagate") {
  const GraphIR g = GraphBuilder()
                        .input("x", TensorShape(std::vector<Dim>{std::nullopt, 3, 8, 8}))
                        .parameter("W", {4, 3, 1, 1})
                        .node("Conv", {"x", "W"}, {"c"})
                        .node("Relu", {"c"}, {"y"})
                        .output("y")
                        .build();
  CHECK(shape_of(g, "y") == "?x4x8x8");
}

TEST_CASE("incompatible operands") {
  const GraphIR channels = GraphBuilder()
                               .input("x", {1, 4, 8, 8})
                               .parameter("W", {8, 3, 3, 3})
                               .node("Conv", {"x", "W"}, {"y"}, conv_attrs(3, 1))
                               .output("y")
                               .build();
  CHECK(error_of([&] { infer_shapes(channels); }) == ErrorCode::ShapeMismatch);
  const GraphIR add = GraphBuilder()
                          .input("x", {2, 3})
                          .parameter("b", {4})
                          .node("Add", {"x", "b"}, {"y"})
                          .output("y")
                          .build();
  CHECK(error_of([&] { infer_shapes(add); }) == ErrorCode::ShapeMismatch);
  const GraphIR gemm = GraphBuilder()
                           .input("x", {2, 3})
                           .parameter("W", {4, 5})
                           .node("Gemm", {"x", "W"}, {"y"})
                           .output("y")
                           .build();
  CHECK(error_of([&] { infer_shapes(gemm); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("inference is idempotent") {
  const GraphIR once = infer_shapes(testgraphs::figure_network());
  const GraphIR twice = infer_shapes(once);
  for (const auto& [name, v] : once.values) CHECK(twice.value(name).shape == v.shape);
  CHECK(once.value("logits").shape.to_string() == "1x10");
  CHECK(once.value("pooled").shape.to_string() == "1x512");
}
