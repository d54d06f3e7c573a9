#include <doctest.h>

#include <json.hpp>

#include "corpus.hpp"
#include "testutil.hpp"
#include "onnxnet/datasetio.hpp"

using namespace onnxnet;

namespace {

std::vector<ArchRecord> numbered(std::size_t n) {
  std::vector<ArchRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ArchRecord r;
    r.id = "a" + std::to_string(1000 + i);
    r.text = "Relu --> Out\n";
    r.accuracy = static_cast<double>(i % 100);
    r.extra["seed"] = "s" + std::to_string(i % 3 + 1);
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t count_val(const std::vector<ArchRecord>& rs) {
  return static_cast<std::size_t>(std::count_if(rs.begin(), rs.end(), [](const auto& r) { return r.split == Split::Val; }));
}

}  // namespace

TEST_CASE("manifests round-trip with unknown fields") {
  Rng rng(3);
  std::vector<ArchRecord> records;
  for (int i = 0; i < 100; ++i) {
    ArchRecord r;
    r.id = "arch/" + std::to_string(i);
    if (i % 2) r.path = "models/" + std::to_string(i) + ".onnx";
    else r.text = "Conv(1x3x8x8) --> Out:1x4\n";
    if (i % 5) r.accuracy = rng.uniform(0, 100);
    if (i % 3) r.space = "space" + std::to_string(i % 4);
    r.split = static_cast<Split>(i % 3);
    r.extra["params"] = i * 1000;
    r.extra["meta"] = {{"nested", true}, {"list", {1, 2, 3}}};
    records.push_back(std::move(r));
  }
  TempDir dir("test_datasetio_rt");
  write_manifest(records, dir / "m.jsonl");
  const auto back = read_manifest(dir / "m.jsonl");
  CHECK(back == records);
  CHECK(manifest_to_jsonl(back) == slurp(dir / "m.jsonl"));
}

TEST_CASE("record validation") {
  auto code = [](const std::string& text) { return error_of([&] { parse_manifest(text); }); };
  CHECK(code(R"({"id":"a","text":"x","accuracy":101.0})") == ErrorCode::MalformedRecord);
  CHECK(code(R"({"id":"a","text":"x","accuracy":-0.5})") == ErrorCode::MalformedRecord);
  CHECK(code(R"({"id":"a","text":"x","path":"y.onnx"})") == ErrorCode::MalformedRecord);
  CHECK(code(R"({"id":"a"})") == ErrorCode::MalformedRecord);
  CHECK(code(R"({"text":"x"})") == ErrorCode::MalformedRecord);
  CHECK(code(R"({"id":"a","text":"x","split":"test"})") == ErrorCode::MalformedRecord);
  CHECK(code(R"({"id":"a","text":"x","accuracy":"high"})") == ErrorCode::MalformedRecord);
  CHECK(code("[1,2]") == ErrorCode::MalformedRecord);
  CHECK(code("{not json") == ErrorCode::MalformedRecord);
  CHECK(code("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}") == ErrorCode::DuplicateId);
  try {
    parse_manifest("{\"id\":\"a\",\"text\":\"x\"}\n\n{\"id\":\"b\"}\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("line 3:", 0) == 0);
  }
  CHECK(parse_manifest("\n  \n").empty());

  const auto edge = parse_manifest(R"({"id":"a","text":"x","accuracy":100})" "\n" R"({"id":"b","text":"x","accuracy":0})");
  CHECK(*edge[0].accuracy == 100.0);
  CHECK(edge[1].split == Split::Unassigned);
  ReadOptions frac;
  frac.fraction_accuracy = true;
  CHECK(*parse_manifest(R"({"id":"a","text":"x","accuracy":0.9703})", frac)[0].accuracy == doctest::Approx(97.03));
  CHECK(error_of([&] { parse_manifest(R"({"id":"a","text":"x","accuracy":2})", frac); }) == ErrorCode::MalformedRecord);
}

TEST_CASE("random fraction split") {
  const auto records = numbered(100);
  const auto a = assign_splits(records, RandomFraction{0.2, 42});
  CHECK(count_val(a) == 20);
  for (const auto& r : a) CHECK(r.split != Split::Unassigned);
  CHECK(a == assign_splits(records, RandomFraction{0.2, 42}));
  CHECK_FALSE(a == assign_splits(records, RandomFraction{0.2, 43}));

  // Manifest order does not matter.
  auto reversed = records;
  std::reverse(reversed.begin(), reversed.end());
  const auto b = assign_splits(reversed, RandomFraction{0.2, 42});
  std::map<std::string, Split> by_id;
  for (const auto& r : a) by_id[r.id] = r.split;
  for (const auto& r : b) CHECK(by_id.at(r.id) == r.split);

  CHECK(count_val(assign_splits(numbered(7), RandomFraction{0.2, 1})) == 1);
  CHECK(error_of([&] { assign_splits(records, RandomFraction{1.0, 1}); }) == ErrorCode::InvalidArgument);
  CHECK(error_of([&] { assign_splits(numbered(2), RandomFraction{0.1, 1}); }) == ErrorCode::EmptyVal);
  CHECK(error_of([&] { assign_splits({}, RandomFraction{}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("split by key") {
  const auto out = assign_splits(numbered(30), ByKey{"seed", {"s3"}});
  for (const auto& r : out) CHECK((r.split == Split::Val) == (r.extra.at("seed") == "s3"));
  CHECK(count_val(out) == 10);
  CHECK(error_of([&] { assign_splits(numbered(30), ByKey{"seed", {"s9"}}); }) == ErrorCode::EmptyVal);
  auto spaced = numbered(4);
  spaced[1].space = "nb201";
  CHECK(count_val(assign_splits(spaced, ByKey{"space", {"nb201"}})) == 1);
}

TEST_CASE("batch encoding isolates failures and keeps order") {
  TempDir dir("test_datasetio_batch");
  const auto records = testcorpus::onnx_corpus(dir.path(), 10, 4);
  const auto one = batch_encode(records, config_for(Variant::Full), 1, dir.path());
  REQUIRE(one.records.size() == 9);
  REQUIRE(one.errors.size() == 1);
  CHECK(one.errors[0].id == "m4");
  CHECK(one.errors[0].error.rfind("MalformedFile: ", 0) == 0);
  for (std::size_t i = 0; i < one.records.size(); ++i) {
    const auto& r = one.records[i];
    CHECK(r.id == "m" + std::to_string(i < 4 ? i : i + 1));
    CHECK_FALSE(r.path);
    REQUIRE(r.text);
    CHECK(validate_encoding(*r.text).empty());
    CHECK(r.accuracy == records[i < 4 ? i : i + 1].accuracy);
  }
  const auto eight = batch_encode(records, config_for(Variant::Full), 8, dir.path());
  CHECK(manifest_to_jsonl(eight.records) == manifest_to_jsonl(one.records));
  CHECK(errors_to_jsonl(eight.errors) == errors_to_jsonl(one.errors));

  const auto line = nlohmann::json::parse(errors_to_jsonl(one.errors));
  CHECK(line.at("id") == "m4");

  // Inline text passes through; a missing file is an Io error.
  std::vector<ArchRecord> mixed(2);
  mixed[0].id = "inline";
  mixed[0].text = "Relu --> Out\n";
  mixed[1].id = "gone";
  mixed[1].path = "nowhere.onnx";
  const auto m = batch_encode(mixed, {}, 2, dir.path());
  CHECK(m.records.size() == 1);
  CHECK(m.records[0] == mixed[0]);
  CHECK(m.errors[0].error.rfind("Io: ", 0) == 0);
}

TEST_CASE("predictions") {
  const std::vector<Prediction> preds{{"a", 1.5}, {"b", -0.25}, {"c", 1e-300}};
  CHECK(parse_predictions(predictions_to_jsonl(preds)) == preds);
  TempDir dir("test_datasetio_pred");
  write_text_file(dir / "p.jsonl", predictions_to_jsonl(preds));
  CHECK(read_predictions(dir / "p.jsonl") == preds);
  CHECK(error_of([] { parse_predictions(R"({"id":"a"})"); }) == ErrorCode::MalformedRecord);
  CHECK(error_of([] { parse_predictions("{\"id\":\"a\",\"score\":1}\n{\"id\":\"a\",\"score\":2}"); }) ==
        ErrorCode::DuplicateId);
  CHECK(error_of([&] { read_manifest(dir / "absent.jsonl"); }) == ErrorCode::Io);
}
