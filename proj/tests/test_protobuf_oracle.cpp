// Decodes serializer output with libprotobuf's schema-less reader, checking
// the ModelProto field layout independently of the library's own codec.

#include <doctest.h>

#include <google/protobuf/unknown_field_set.h>
#include <memory>

#include "graphs.hpp"
#include "onnxnet/onnx_io.hpp"

using namespace onnxnet;
using google::protobuf::UnknownField;
using google::protobuf::UnknownFieldSet;

namespace {

std::vector<const UnknownField*> fields(const UnknownFieldSet& s, int number) {
  std::vector<const UnknownField*> out;
  for (int i = 0; i < s.field_count(); ++i) {
    if (s.field(i).number() == number) out.push_back(&s.field(i));
  }
  return out;
}

using FieldSet = std::unique_ptr<UnknownFieldSet>;

FieldSet nested(const UnknownField* f) {
  auto s = std::make_unique<UnknownFieldSet>();
  REQUIRE(f->type() == UnknownField::TYPE_LENGTH_DELIMITED);
  REQUIRE(s->ParseFromString(f->length_delimited()));
  return s;
}

std::string text(const UnknownFieldSet& s, int number) {
  const auto f = fields(s, number);
  REQUIRE(f.size() == 1);
  return f[0]->length_delimited();
}

}  // namespace

TEST_CASE("serialized models decode as ModelProto") {
  const GraphIR g = testgraphs::figure_network();
  UnknownFieldSet model;
  REQUIRE(model.ParseFromString(serialize(g)));

  const auto ir = fields(model, 1);
  REQUIRE(ir.size() == 1);
  CHECK(ir[0]->varint() == static_cast<std::uint64_t>(g.meta.ir_version));
  const auto opsets = fields(model, 8);
  REQUIRE(opsets.size() == 1);
  const FieldSet opset = nested(opsets[0]);
  CHECK(fields(*opset, 2)[0]->varint() == 17);

  const auto graphs = fields(model, 7);
  REQUIRE(graphs.size() == 1);
  const FieldSet graph = nested(graphs[0]);

  const auto nodes = fields(*graph, 1);
  REQUIRE(nodes.size() == g.nodes.size());
  std::map<std::string, int> ops;
  for (const auto* n : nodes) ops[text(*nested(n), 4)]++;
  CHECK(ops == std::map<std::string, int>{{"Concat", 9}, {"Conv", 10}, {"Gemm", 1}, {"MaxPool", 20},
                                          {"ReduceMean", 1}, {"Relu", 10}});

  // First node in topological order is the stem convolution.
  const FieldSet stem = nested(nodes[0]);
  CHECK(text(*stem, 4) == "Conv");
  const auto inputs = fields(*stem, 1);
  REQUIRE(inputs.size() == 3);
  CHECK(inputs[0]->length_delimited() == "input");
  CHECK(inputs[1]->length_delimited() == "stem_w");

  std::map<std::string, std::vector<std::uint64_t>> dims;
  for (const auto* t : fields(*graph, 5)) {
    const FieldSet tensor = nested(t);
    std::vector<std::uint64_t> d;
    for (const auto* f : fields(*tensor, 1)) d.push_back(f->varint());
    dims[text(*tensor, 8)] = d;
    CHECK(fields(*tensor, 2)[0]->varint() == 1);  // FLOAT
    const auto raw = fields(*tensor, 9);
    REQUIRE(raw.size() == 1);
    std::uint64_t count = 1;
    for (auto x : d) count *= x;
    CHECK(raw[0]->length_delimited().size() == 4 * count);
  }
  CHECK(dims.size() == 20 + 2);
  CHECK(dims.at("stem_w") == std::vector<std::uint64_t>{128, 3, 3, 3});
  CHECK(dims.at("fc_w") == std::vector<std::uint64_t>{10, 512});

  const auto in = fields(*graph, 11), out = fields(*graph, 12);
  REQUIRE(in.size() == 1);
  REQUIRE(out.size() == 1);
  CHECK(text(*nested(in[0]), 1) == "input");
  CHECK(text(*nested(out[0]), 1) == "logits");
}
