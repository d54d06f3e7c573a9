#include <doctest.h>

#include <filesystem>
#include <regex>

#include "graphs.hpp"
#include "testutil.hpp"
#include "onnxnet/onnx_io.hpp"
#include "onnxnet/textenc.hpp"

using namespace onnxnet;

namespace {

const std::string kConvParams = "(dilations=1,kernel_shape=1,pads=0,strides=1)";
const std::string kPool = "MaxPool(prev)(kernel_shape=3,pads=1,strides=1)";

// Expected Full lines for testgraphs::figure_network(), assembled block by block.
std::vector<std::string> figure_lines() {
  std::vector<std::string> lines;
  lines.push_back("Conv(1x3x32x32, 128x3x3x3, 128)(dilations=1,kernel_shape=3,pads=1,strides=1) --> Relu(prev) --> "
                  "Conv(prev, 32x128x1x1, 32)" + kConvParams + " --> Relu(prev) --> " + kPool + " --> " + kPool +
                  " --> Value1:1x32x32x32");
  lines.push_back("Concat(Value1, Value1, Value1, Value1) --> Value2:1x128x32x32");
  int v = 2;
  std::int64_t in_ch = 128;
  for (int stage = 0; stage < 3; ++stage) {
    const std::int64_t w = 32 << stage, hw = 32 >> stage;
    const std::string spatial = std::to_string(hw) + "x" + std::to_string(hw);
    for (int r = (stage == 0 ? 1 : 0); r < 3; ++r) {
      const std::string src = "Value" + std::to_string(v);
      std::string line;
      if (r == 0) {
        line = "MaxPool(" + src + ")(kernel_shape=2,pads=0,strides=2) --> Conv(prev, ";
      } else {
        line = "Conv(" + src + ", ";
      }
      const std::string val = "Value" + std::to_string(v + 1);
      line += std::to_string(w) + "x" + std::to_string(in_ch) + "x1x1, " + std::to_string(w) + ")" + kConvParams +
              " --> Relu(prev) --> " + kPool + " --> " + kPool + " --> " + val + ":1x" + std::to_string(w) + "x" +
              spatial;
      lines.push_back(line);
      lines.push_back("Concat(" + val + ", " + val + ", " + val + ", " + val + ") --> Value" + std::to_string(v + 2) +
                      ":1x" + std::to_string(4 * w) + "x" + spatial);
      v += 2;
      in_ch = 4 * w;
    }
  }
  lines.push_back("ReduceMean(Value18)(axes=[2,3]) --> Gemm(prev, 10x512, 10) --> Out:1x10");
  return lines;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (auto nl = text.find('\n'); nl != std::string::npos; nl = text.find('\n', start)) {
    out.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

// Drops every parenthesized group and output shape, leaving the Base form.
std::string strip_to_base(const std::string& full) {
  static const std::regex groups(R"(\([^()]*\))"), shapes(R"(:[0-9x?]+|:scalar)");
  return std::regex_replace(std::regex_replace(full, groups, ""), shapes, "");
}

}  // namespace

TEST_CASE("single convolution encodes to the golden line") {
  const GraphIR g = prepare_for_encoding(testgraphs::single_conv());
  const EncodedArch full = encode(g, config_for(Variant::Full));
  CHECK(full.text ==
        "Conv(1x3x32x32, 128x3x3x3, 128)(dilations=1,kernel_shape=3,pads=1,strides=1) --> Out:1x128x32x32\n");
  CHECK(full.line_count == 1);
  CHECK(full.token_estimate == 5);
  CHECK(encode(g, config_for(Variant::Full)).text == full.text);
  CHECK(encode(g, config_for(Variant::Base)).text == "Conv --> Out\n");
  CHECK(encode(g, config_for(Variant::Inputs)).text == "Conv(1x3x32x32, 128x3x3x3, 128) --> Out\n");
  CHECK(encode(g, config_for(Variant::Parameters)).text ==
        "Conv(dilations=1,kernel_shape=3,pads=1,strides=1) --> Out\n");
  CHECK(encode(g, config_for(Variant::OutShape)).text == "Conv --> Out:1x128x32x32\n");
}

TEST_CASE("variant names and configs") {
  CHECK(config_for(Variant::Base) == EncodingConfig{});
  CHECK(config_for(Variant::Full) == EncodingConfig{true, true, true});
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_FALSE(parse_variant("everything"));
}

TEST_CASE("the listing network encodes line by line") {
  const GraphIR g = prepare_for_encoding(testgraphs::figure_network());
  const EncodedArch full = encode(g, config_for(Variant::Full));
  const auto want = figure_lines();
  const auto got = split_lines(full.text);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    INFO("line " << i + 1);
    CHECK(got[i] == want[i]);
  }
  CHECK(full.line_count == 19);
  CHECK(validate_encoding(full.text).empty());

  EncodingConfig no_shape = config_for(Variant::Full);
  no_shape.include_out_shape = false;
  CHECK(split_lines(encode(g, no_shape).text).back() == "ReduceMean(Value18)(axes=[2,3]) --> Gemm(prev, 10x512, 10) --> Out");

  // Unfused classifier gives the same text once simplified.
  testgraphs::FigureOptions unfused;
  unfused.unfused_head = true;
  const GraphIR u = prepare_for_encoding(testgraphs::figure_network(unfused));
  CHECK(split_lines(encode(u, config_for(Variant::Full)).text).back() ==
        "ReduceMean(Value18)(axes=[2,3]) --> Gemm(prev, 10x512, 10) --> Out:1x10");
}

TEST_CASE("attribute rendering") {
  const GraphIR g = prepare_for_encoding(
      GraphBuilder()
          .input("x", {1, 2, 9, 9})
          .node("MaxPool", {"x"}, {"y"},
                {{"kernel_shape", std::vector<std::int64_t>{3, 2}},
                 {"strides", std::vector<std::int64_t>{2, 2}},
                 {"auto_pad", std::string("NOTSET")},
                 {"ceil_mode", std::int64_t{0}}})
          .output("y")
          .build());
  CHECK(encode(g, config_for(Variant::Parameters)).text == "MaxPool(kernel_shape=[3,2],strides=2) --> Out\n");
}

TEST_CASE("validator flags malformed text") {
  auto one = [](const std::string& text) {
    const auto v = validate_encoding(text);
    return v.size() == 1 ? v[0].line : 0;
  };
  CHECK(validate_encoding("Relu(1x4) --> Relu(prev) --> Value1:1x4\nSoftmax(Value1) --> Out\n").empty());
  CHECK(validate_encoding("").empty());
  CHECK(one("Relu(1x4) Relu(prev) --> Out\n") == 1);
  CHECK(one("Relu(1x4) --> Out\nRelu(Value2) --> Value3\n") == 2);
  CHECK(one("Relu(1x4) --> Value1\nRelu(Value1) --> Value1\n") == 2);
  CHECK(one("Relu(prev) --> Out\n") == 1);
  CHECK(one("Relu(1x4) --> Add(1x4, 4) --> Out\n") == 1);
  CHECK(one("Relu(1x4) --> Out \n") == 1);
  CHECK(one("Relu(1x4) --> Out") == 1);
  CHECK(one("Relu(1x4)(axes=) --> Out\n") == 1);
  CHECK(one("Relu(1x4)(k=1)(j=2) --> Out\n") == 1);
  CHECK(one("Relu(1x4 --> Out\n") == 1);
  CHECK(one("Relu(1x4) --> Result\n") == 1);
  CHECK(one("Relu(1x4) --> Out:1xfour\n") == 1);
  CHECK(one("Relu --> Out\n\nRelu --> Out2\n") == 2);
}

TEST_CASE("variants of random graphs are valid and ordered") {
  InstanceSpec spec;
  spec.identities = 2;
  spec.linear_pairs = 1;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const GraphIR g = prepare_for_encoding(random_instance(spec, seed).graph);
    std::map<Variant, EncodedArch> enc;
    for (Variant v : kAllVariants) {
      enc[v] = encode(g, config_for(v));
      CHECK(validate_encoding(enc[v].text).empty());
    }
    for (Variant v : kAllVariants) {
      CHECK(enc[v].line_count == enc[Variant::Base].line_count);
      CHECK(enc[v].text.size() >= enc[Variant::Base].text.size());
      CHECK(enc[v].text.size() <= enc[Variant::Full].text.size());
      CHECK(enc[v].token_estimate <= enc[Variant::Full].token_estimate);
    }
    CHECK(strip_to_base(enc[Variant::Full].text) == enc[Variant::Base].text);
    CHECK(encode(g, config_for(Variant::Full)).text == enc[Variant::Full].text);
  }
}

TEST_CASE("encode_file runs the full preparation") {
  const auto dir = std::filesystem::temp_directory_path() / "onnxnet_test_textenc";
  std::filesystem::create_directories(dir);
  testgraphs::FigureOptions opt;
  opt.unfused_head = true;
  write_onnx_file(inject_identities(testgraphs::figure_network(opt), 5, 1), dir / "net.onnx");
  const EncodedArch e = encode_file(dir / "net.onnx", config_for(Variant::Full));
  CHECK(split_lines(e.text) == figure_lines());
  CHECK(error_of([&] { encode_file(dir / "absent.onnx", {}); }) == ErrorCode::Io);
  std::filesystem::remove_all(dir);
}
