#include <doctest.h>

#include <json.hpp>
#include <sstream>

#include "corpus.hpp"
#include "testutil.hpp"
#include "onnxnet/cli.hpp"
#include "onnxnet/diversity.hpp"
#include "onnxnet/onnx_io.hpp"

using namespace onnxnet;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
  args.insert(args.begin(), "onnxnet");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& path) { return path.string(); }

}  // namespace

TEST_CASE("encode prints the golden line") {
  TempDir dir("test_cli_encode");
  write_onnx_file(testgraphs::single_conv(), dir / "net.onnx");
  const auto full = cli({"encode", p(dir / "net.onnx"), "--variant", "full"});
  CHECK(full.code == kExitOk);
  CHECK(full.out ==
        "Conv(1x3x32x32, 128x3x3x3, 128)(dilations=1,kernel_shape=3,pads=1,strides=1) --> Out:1x128x32x32\n");
  CHECK(cli({"encode", p(dir / "net.onnx")}).out == full.out);
  CHECK(cli({"encode", p(dir / "net.onnx"), "--variant", "base"}).out == "Conv --> Out\n");
  CHECK(cli({"encode", p(dir / "net.onnx"), "--out", p(dir / "e.txt")}).out.empty());
  CHECK(slurp(dir / "e.txt") == full.out);
}

TEST_CASE("usage and operational errors") {
  TempDir dir("test_cli_errors");
  write_onnx_file(testgraphs::single_conv(), dir / "net.onnx");
  CHECK(cli({"encode", p(dir / "net.onnx"), "--bogus"}).code == kExitUsage);
  CHECK(cli({"encode", p(dir / "net.onnx"), "--variant", "huge"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  const auto help = cli({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("ingest") != std::string::npos);

  spit(dir / "bad.onnx", "garbage");
  const auto bad = cli({"encode", p(dir / "bad.onnx")});
  CHECK(bad.code == kExitFailure);
  CHECK(bad.out.empty());
  const auto j = json::parse(bad.err);
  CHECK(j.at("error") == "MalformedFile");
  CHECK(bad.err.find('\n') == bad.err.size() - 1);
  CHECK(json::parse(cli({"encode", p(dir / "absent.onnx")}).err).at("error") == "Io");
}

TEST_CASE("simplify and stats") {
  TempDir dir("test_cli_simplify");
  testgraphs::FigureOptions opt;
  opt.unfused_head = true;
  write_onnx_file(inject_identities(testgraphs::figure_network(opt), 4, 2), dir / "net.onnx");
  const auto s = cli({"simplify", p(dir / "net.onnx"), "--out", p(dir / "s.onnx"), "--report"});
  REQUIRE(s.code == kExitOk);
  const auto report = json::parse(s.out);
  CHECK(report.at("nodes_before") == 56);
  CHECK(report.at("nodes_after") == 51);
  CHECK(report.at("passes").size() == 3);
  CHECK(parse_onnx_file(dir / "s.onnx").nodes.size() == 51);
  CHECK(s.out == json::parse(s.out).dump() + "\n");

  const auto st = cli({"stats", p(dir / "net.onnx")});
  REQUIRE(st.code == kExitOk);
  const auto stats = json::parse(st.out);
  CHECK(stats.at("nodes") == 56);
  CHECK(stats.at("simplified_nodes") == 51);
  CHECK(stats.at("op_counts").at("Identity") == 4);
  CHECK(stats.at("variants").at("full").at("lines") == 19);
  CHECK(stats.at("variants").at("base").at("tokens") <= stats.at("variants").at("full").at("tokens"));
}

TEST_CASE("ingest, split, train, predict and eval") {
  TempDir dir("test_cli_flow");
  write_manifest(testcorpus::onnx_corpus(dir.path(), 12, 5), dir / "m.jsonl");

  const auto ingest1 = cli({"ingest", "--manifest", p(dir / "m.jsonl"), "--variant", "full", "--out",
                            p(dir / "e1.jsonl"), "--errors", p(dir / "err.jsonl")});
  REQUIRE(ingest1.code == kExitOk);
  CHECK(json::parse(ingest1.out) == json{{"encoded", 11}, {"failed", 1}});
  CHECK(ingest1.err.find("m5") != std::string::npos);
  CHECK(json::parse(slurp(dir / "err.jsonl")).at("id") == "m5");
  REQUIRE(cli({"ingest", "--manifest", p(dir / "m.jsonl"), "--out", p(dir / "e8.jsonl"), "--workers", "8"}).code ==
          kExitOk);
  CHECK(slurp(dir / "e1.jsonl") == slurp(dir / "e8.jsonl"));
  CHECK(cli({"ingest", "--manifest", p(dir / "m.jsonl"), "--out", p(dir / "x.jsonl"), "--workers", "0"}).code ==
        kExitUsage);

  const auto split = cli({"split", "--manifest", p(dir / "e1.jsonl"), "--fraction", "0.25", "--train-out",
                          p(dir / "train.jsonl"), "--val-out", p(dir / "val.jsonl")});
  REQUIRE(split.code == kExitOk);
  CHECK(json::parse(split.out) == json{{"train", 8}, {"val", 3}});

  const auto train = cli({"train-ranker", "--train", p(dir / "train.jsonl"), "--val", p(dir / "val.jsonl"),
                          "--model-out", p(dir / "model.bin"), "--epochs", "3", "--lr", "0.01"});
  REQUIRE(train.code == kExitOk);
  const auto tj = json::parse(train.out);
  CHECK(tj.at("train_n") == 8);
  CHECK(tj.at("epoch_losses").size() == 3);
  CHECK(tj.at("val_n") == 3);

  REQUIRE(cli({"predict", "--model", p(dir / "model.bin"), "--manifest", p(dir / "e1.jsonl"), "--out",
               p(dir / "pred.jsonl")})
              .code == kExitOk);
  const auto preds = read_predictions(dir / "pred.jsonl");
  CHECK(preds.size() == 11);
  // Predicting from the raw manifest encodes on the fly to the same scores.
  std::vector<ArchRecord> raw = read_manifest(dir / "m.jsonl");
  raw.erase(raw.begin() + 5);
  write_manifest(raw, dir / "raw.jsonl");
  const auto direct = cli({"predict", "--model", p(dir / "model.bin"), "--manifest", p(dir / "raw.jsonl")});
  CHECK(direct.out == slurp(dir / "pred.jsonl"));

  const auto ev = cli({"eval", "--pred", p(dir / "pred.jsonl"), "--truth", p(dir / "e1.jsonl")});
  REQUIRE(ev.code == kExitOk);
  const auto ej = json::parse(ev.out);
  CHECK(ej.at("n") == 11);
  CHECK(ej.at("kendall_tau").get<double>() >= -1.0);
  CHECK(ej.at("kendall_tau").get<double>() <= 1.0);

  // Predictions equal to the truth.
  std::vector<Prediction> perfect;
  for (const auto& r : read_manifest(dir / "e1.jsonl")) perfect.push_back({r.id, *r.accuracy});
  write_text_file(dir / "perfect.jsonl", predictions_to_jsonl(perfect));
  const auto pe = json::parse(cli({"eval", "--pred", p(dir / "perfect.jsonl"), "--truth", p(dir / "e1.jsonl")}).out);
  CHECK(pe.at("kendall_tau") == 1.0);
  CHECK(pe.at("spearman_rho").get<double>() == doctest::Approx(1.0).epsilon(1e-12));

  write_text_file(dir / "stray.jsonl", "{\"id\":\"nobody\",\"score\":1}\n");
  const auto stray = cli({"eval", "--pred", p(dir / "stray.jsonl"), "--truth", p(dir / "e1.jsonl")});
  CHECK(stray.code == kExitFailure);
  CHECK(json::parse(stray.err).at("error") == "MalformedRecord");
}

TEST_CASE("diversity over manifests") {
  TempDir dir("test_cli_div");
  auto records = testcorpus::onnx_corpus(dir.path(), 8, 99);
  std::vector<ArchRecord> a(records.begin(), records.begin() + 4), b(records.begin() + 4, records.end());
  for (auto& r : a) r.space = "A";
  for (auto& r : b) r.space = "B";
  write_manifest(a, dir / "a.jsonl");
  write_manifest(b, dir / "b.jsonl");

  const auto within = cli({"diversity", "--manifest-a", p(dir / "a.jsonl"), "--within"});
  REQUIRE(within.code == kExitOk);
  const auto wj = json::parse(within.out);
  CHECK(wj.at("mode") == "within");
  CHECK(wj.at("pairs") == 6);
  CHECK(wj.at("space_a") == "A");

  std::vector<OpHistogram> ha, hb;
  for (const auto& r : a) ha.push_back(op_histogram(parse_onnx_file(dir / *r.path)));
  for (const auto& r : b) hb.push_back(op_histogram(parse_onnx_file(dir / *r.path)));
  CHECK(wj.at("value_bits").get<double>() == within_space_diversity(ha).value_bits);

  const auto between = cli({"diversity", "--manifest-a", p(dir / "a.jsonl"), "--manifest-b", p(dir / "b.jsonl")});
  REQUIRE(between.code == kExitOk);
  const auto bj = json::parse(between.out);
  CHECK(bj.at("mode") == "between");
  CHECK(bj.at("space_b") == "B");
  CHECK(bj.at("value_bits").get<double>() == between_space_diversity(ha, hb).value_bits);

  const auto sampled = cli({"diversity", "--manifest-a", p(dir / "a.jsonl"), "--within", "-n", "3", "--seed", "5"});
  CHECK(json::parse(sampled.out).at("n") == 3);
  CHECK(sampled.out == cli({"diversity", "--manifest-a", p(dir / "a.jsonl"), "--within", "-n", "3", "--seed", "5"}).out);
}
