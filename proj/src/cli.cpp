#include "onnxnet/cli.hpp"

#include <cstdlib>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "onnxnet/datasetio.hpp"
#include "onnxnet/diversity.hpp"
#include "onnxnet/onnx_io.hpp"
#include "onnxnet/passes.hpp"
#include "onnxnet/ranking.hpp"
#include "onnxnet/shape_inference.hpp"
#include "onnxnet/textenc.hpp"

namespace onnxnet {

namespace {

using nlohmann::json;

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("ONNXNET_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") level_ = LogLevel::Error;
    else if (v == "info") level_ = LogLevel::Info;
    else if (v == "debug") level_ = LogLevel::Debug;
  }

  void warn(const std::string& msg) const { emit(LogLevel::Warn, "warn", msg); }
  void info(const std::string& msg) const { emit(LogLevel::Info, "info", msg); }
  void debug(const std::string& msg) const { emit(LogLevel::Debug, "debug", msg); }

 private:
  void emit(LogLevel level, const char* tag, const std::string& msg) const {
    if (level <= level_) err_ << "[" << tag << "] " << msg << '\n';
  }

  std::ostream& err_;
  LogLevel level_ = LogLevel::Warn;
};

void emit_json(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

void emit_payload(std::ostream& out, const std::string& out_path, const std::string& payload) {
  if (out_path.empty()) out << payload;
  else write_text_file(out_path, payload);
}

Variant variant_flag(const std::string& name) {
  auto v = parse_variant(name);
  if (!v) throw CLI::ValidationError("--variant", "expected base, inputs, parameters, outshape or full");
  return *v;
}

const std::vector<std::string> kVariantNames{"base", "inputs", "parameters", "outshape", "full"};

std::filesystem::path manifest_dir(const std::string& manifest) {
  return std::filesystem::path(manifest).parent_path();
}

std::string record_text(const ArchRecord& r, const std::filesystem::path& base_dir, const EncodingConfig& cfg) {
  if (r.text) return *r.text;
  std::filesystem::path p(*r.path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return encode_file(p, cfg).text;
}

json report_json(const PassReport& r) {
  return {{"pass", r.pass_name},
          {"nodes_removed", r.nodes_removed},
          {"nodes_merged", r.nodes_merged},
          {"iterations", r.iterations}};
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  std::string model, variant = "full", out;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  const EncodedArch enc = encode_file(a.model, config_for(variant_flag(a.variant)));
  emit_payload(out, a.out, enc.text);
  return kExitOk;
}

struct SimplifyArgs {
  std::string input, out;
  bool report = false;
};

int cmd_simplify(const SimplifyArgs& a, std::ostream& out, const Log& log) {
  const GraphIR g = parse_onnx_file(a.input);
  auto [simplified, reports] = simplify(g);
  write_onnx_file(simplified, a.out);
  log.info("simplified " + std::to_string(g.nodes.size()) + " -> " + std::to_string(simplified.nodes.size()) + " nodes");
  if (a.report) {
    json passes = json::array();
    for (const auto& r : reports) passes.push_back(report_json(r));
    emit_json(out, {{"nodes_before", g.nodes.size()}, {"nodes_after", simplified.nodes.size()}, {"passes", passes}});
  }
  return kExitOk;
}

int cmd_stats(const std::string& model, std::ostream& out) {
  const GraphIR g = parse_onnx_file(model);
  const OpHistogram h = op_histogram(g);
  const GraphIR prepared = prepare_for_encoding(g);
  json variants = json::object();
  for (Variant v : kAllVariants) {
    const auto enc = encode(prepared, config_for(v));
    variants[std::string(to_string(v))] = {{"lines", enc.line_count}, {"tokens", enc.token_estimate}};
  }
  emit_json(out, {{"nodes", g.nodes.size()},
                  {"simplified_nodes", prepared.nodes.size()},
                  {"op_counts", h.counts},
                  {"op_histogram", h.probs},
                  {"variants", variants}});
  return kExitOk;
}

struct DiversityArgs {
  std::string manifest_a, manifest_b, pooling = "counts";
  bool within = false;
  std::size_t n = 5000, threads = 1;
  std::uint64_t seed = 0;
};

std::pair<std::string, std::vector<OpHistogram>> load_space(const std::string& manifest, const DiversityArgs& a,
                                                             const Log& log) {
  const auto records = read_manifest(manifest);
  if (records.empty()) throw Error(ErrorCode::InsufficientSamples, manifest + " holds no records");
  const auto picked = sample_indices(records.size(), a.n, a.seed);
  const auto base = manifest_dir(manifest);
  std::vector<OpHistogram> hists;
  for (auto i : picked) {
    const auto& r = records[i];
    if (!r.path) throw Error(ErrorCode::MalformedRecord, "record \"" + r.id + "\" has no ONNX path to count ops from");
    std::filesystem::path p(*r.path);
    if (p.is_relative() && !base.empty()) p = base / p;
    hists.push_back(op_histogram(parse_onnx_file(p)));
  }
  const std::string tag = records.front().space.value_or(std::filesystem::path(manifest).stem().string());
  log.info(tag + ": " + std::to_string(hists.size()) + " of " + std::to_string(records.size()) + " models sampled");
  return {tag, std::move(hists)};
}

int cmd_diversity(const DiversityArgs& a, std::ostream& out, const Log& log) {
  if (a.n < 1) throw Error(ErrorCode::InvalidArgument, "-n must be positive");
  const auto [tag_a, hists_a] = load_space(a.manifest_a, a, log);
  DiversityReport report;
  if (a.within || a.manifest_b.empty()) {
    WithinOptions options;
    options.seed = a.seed;
    options.threads = a.threads;
    report = within_space_diversity(hists_a, options);
  } else {
    const auto [tag_b, hists_b] = load_space(a.manifest_b, a, log);
    report = between_space_diversity(hists_a, hists_b, a.pooling == "average" ? Pooling::Average : Pooling::Counts);
    report.space_b = tag_b;
  }
  report.space_a = tag_a;
  report.seed = a.seed;
  out << report.to_json() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path, std::ostream& out) {
  const auto preds = read_predictions(pred_path);
  std::map<std::string, double> truth;
  for (const auto& r : read_manifest(truth_path)) {
    if (r.accuracy) truth[r.id] = *r.accuracy;
  }
  ScoredSet set;
  for (const auto& p : preds) {
    auto it = truth.find(p.id);
    if (it == truth.end()) throw Error(ErrorCode::MalformedRecord, "no ground-truth accuracy for id \"" + p.id + "\"");
    set.push_back({p.id, p.score, it->second});
  }
  emit_json(out, {{"kendall_tau", kendall_tau(set)}, {"spearman_rho", spearman_rho(set)}, {"n", set.size()}});
  return kExitOk;
}

struct TrainArgs {
  std::string train, val, model_out, schedule = "polynomial", variant = "full";
  TrainConfig cfg;
};

std::vector<std::pair<std::string, double>> labeled_texts(const std::string& manifest, const std::string& variant) {
  const auto base = manifest_dir(manifest);
  const auto cfg = config_for(variant_flag(variant));
  std::vector<std::pair<std::string, double>> data;
  for (const auto& r : read_manifest(manifest)) {
    if (!r.accuracy) throw Error(ErrorCode::MalformedRecord, "record \"" + r.id + "\" has no accuracy");
    data.emplace_back(record_text(r, base, cfg), *r.accuracy);
  }
  return data;
}

int cmd_train(TrainArgs a, std::ostream& out, const Log& log) {
  if (a.schedule == "polynomial") a.cfg.schedule = Schedule::Polynomial;
  else if (a.schedule == "constant") a.cfg.schedule = Schedule::Constant;
  else throw CLI::ValidationError("--schedule", "expected polynomial or constant");
  const auto train = labeled_texts(a.train, a.variant);
  log.info("training on " + std::to_string(train.size()) + " records");
  const TrainResult result = train_ranker(train, a.cfg);
  result.model.save(a.model_out);
  json j{{"train_n", train.size()}, {"epoch_losses", result.epoch_losses}};
  if (!a.val.empty()) {
    const auto val = labeled_texts(a.val, a.variant);
    std::vector<double> scores, accs;
    for (const auto& [text, acc] : val) {
      scores.push_back(predict(result.model, text));
      accs.push_back(acc);
    }
    j["val_n"] = val.size();
    j["val_kendall_tau"] = kendall_tau(scores, accs);
    j["val_spearman_rho"] = spearman_rho(scores, accs);
  }
  emit_json(out, j);
  return kExitOk;
}

struct PredictArgs {
  std::string model, manifest, out, variant = "full";
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const RankerModel model = RankerModel::load(a.model);
  const auto base = manifest_dir(a.manifest);
  const auto cfg = config_for(variant_flag(a.variant));
  std::vector<Prediction> preds;
  for (const auto& r : read_manifest(a.manifest)) preds.push_back({r.id, predict(model, record_text(r, base, cfg))});
  emit_payload(out, a.out, predictions_to_jsonl(preds));
  return kExitOk;
}

struct IngestArgs {
  std::string manifest, variant = "full", out, errors;
  std::size_t workers = 1;
};

int cmd_ingest(const IngestArgs& a, std::ostream& out, const Log& log) {
  const auto records = read_manifest(a.manifest);
  const auto result = batch_encode(records, config_for(variant_flag(a.variant)), a.workers, manifest_dir(a.manifest));
  write_manifest(result.records, a.out);
  if (!a.errors.empty()) write_text_file(a.errors, errors_to_jsonl(result.errors));
  for (const auto& e : result.errors) log.warn("record \"" + e.id + "\" failed: " + e.error);
  emit_json(out, {{"encoded", result.records.size()}, {"failed", result.errors.size()}});
  return kExitOk;
}

struct SplitArgs {
  std::string manifest, out, by_key;
  std::vector<std::string> held_out;
  double fraction = 0.2;
  std::uint64_t seed = 42;
  std::string train_out, val_out;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  SplitSpec spec = RandomFraction{a.fraction, a.seed};
  if (!a.by_key.empty()) spec = ByKey{a.by_key, {a.held_out.begin(), a.held_out.end()}};
  const auto records = assign_splits(read_manifest(a.manifest), spec);
  std::vector<ArchRecord> train, val;
  for (const auto& r : records) (r.split == Split::Val ? val : train).push_back(r);
  if (!a.out.empty()) write_manifest(records, a.out);
  if (!a.train_out.empty()) write_manifest(train, a.train_out);
  if (!a.val_out.empty()) write_manifest(val, a.val_out);
  emit_json(out, {{"train", train.size()}, {"val", val.size()}});
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"ONNX to ONNX-Net text encoding toolchain", "onnxnet"};
  app.require_subcommand(1);

  EncodeArgs encode_args;
  auto* encode_cmd = app.add_subcommand("encode", "Print the text encoding of an ONNX model");
  encode_cmd->add_option("model", encode_args.model, "ONNX file")->required();
  encode_cmd->add_option("--variant", encode_args.variant, "base|inputs|parameters|outshape|full")
      ->check(CLI::IsMember(kVariantNames));
  encode_cmd->add_option("--out", encode_args.out, "write the encoding here instead of stdout");

  SimplifyArgs simplify_args;
  auto* simplify_cmd = app.add_subcommand("simplify", "Write the simplified model");
  simplify_cmd->add_option("input", simplify_args.input, "ONNX file")->required();
  simplify_cmd->add_option("--out", simplify_args.out, "output ONNX file")->required();
  simplify_cmd->add_flag("--report", simplify_args.report, "print per-pass reports as JSON");

  std::string stats_model;
  auto* stats_cmd = app.add_subcommand("stats", "Node counts, op histogram and encoding sizes");
  stats_cmd->add_option("model", stats_model, "ONNX file")->required();

  DiversityArgs div_args;
  auto* div_cmd = app.add_subcommand("diversity", "Jensen-Shannon diversity of op histograms");
  div_cmd->add_option("--manifest-a", div_args.manifest_a, "manifest of the first space")->required();
  div_cmd->add_option("--manifest-b", div_args.manifest_b, "manifest of the second space");
  div_cmd->add_flag("--within", div_args.within, "mean pairwise divergence within --manifest-a");
  div_cmd->add_option("-n", div_args.n, "models sampled per space");
  div_cmd->add_option("--seed", div_args.seed, "sampling seed");
  div_cmd->add_option("--pooling", div_args.pooling, "counts|average")->check(CLI::IsMember({"counts", "average"}));
  div_cmd->add_option("--threads", div_args.threads, "worker threads for pairwise sums");

  std::string pred_path, truth_path;
  auto* eval_cmd = app.add_subcommand("eval", "Rank correlation of predictions against ground truth");
  eval_cmd->add_option("--pred", pred_path, "predictions JSONL")->required();
  eval_cmd->add_option("--truth", truth_path, "manifest with accuracies")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train-ranker", "Train the hashed n-gram pairwise ranker");
  train_cmd->add_option("--train", train_args.train, "training manifest")->required();
  train_cmd->add_option("--val", train_args.val, "validation manifest");
  train_cmd->add_option("--model-out", train_args.model_out, "model file to write")->required();
  train_cmd->add_option("--lr", train_args.cfg.learning_rate, "peak learning rate");
  train_cmd->add_option("--epochs", train_args.cfg.epochs, "passes over the data");
  train_cmd->add_option("--batch", train_args.cfg.batch_size, "batch size");
  train_cmd->add_option("--margin", train_args.cfg.margin, "hinge margin");
  train_cmd->add_option("--seed", train_args.cfg.seed, "shuffle and hash seed");
  train_cmd->add_option("--schedule", train_args.schedule, "polynomial|constant")
      ->check(CLI::IsMember({"polynomial", "constant"}));
  train_cmd->add_option("--end-lr", train_args.cfg.end_learning_rate, "final learning rate (polynomial)");
  train_cmd->add_option("--weight-decay", train_args.cfg.weight_decay, "decoupled weight decay");
  train_cmd->add_option("--warmup", train_args.cfg.warmup_ratio, "fraction of steps spent warming up");
  train_cmd->add_option("--feature-dim", train_args.cfg.feature_dim, "hashed feature buckets");
  train_cmd->add_option("--variant", train_args.variant, "encoding used for path-bearing records")
      ->check(CLI::IsMember(kVariantNames));

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Score every record of a manifest");
  predict_cmd->add_option("--model", predict_args.model, "model file")->required();
  predict_cmd->add_option("--manifest", predict_args.manifest, "records to score")->required();
  predict_cmd->add_option("--out", predict_args.out, "predictions JSONL (stdout if omitted)");
  predict_cmd->add_option("--variant", predict_args.variant, "encoding used for path-bearing records")
      ->check(CLI::IsMember(kVariantNames));

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Encode every ONNX file of a manifest");
  ingest_cmd->add_option("--manifest", ingest_args.manifest, "input manifest")->required();
  ingest_cmd->add_option("--variant", ingest_args.variant, "base|inputs|parameters|outshape|full")
      ->check(CLI::IsMember(kVariantNames));
  ingest_cmd->add_option("--out", ingest_args.out, "encoded manifest")->required();
  ingest_cmd->add_option("--workers", ingest_args.workers, "parallel workers")->check(CLI::PositiveNumber);
  ingest_cmd->add_option("--errors", ingest_args.errors, "error sidecar JSONL");

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Assign train/val splits to a manifest");
  split_cmd->add_option("--manifest", split_args.manifest, "input manifest")->required();
  split_cmd->add_option("--out", split_args.out, "manifest with splits assigned");
  split_cmd->add_option("--train-out", split_args.train_out, "train records only");
  split_cmd->add_option("--val-out", split_args.val_out, "val records only");
  split_cmd->add_option("--fraction", split_args.fraction, "validation fraction (random split)");
  split_cmd->add_option("--seed", split_args.seed, "shuffle seed (random split)");
  split_cmd->add_option("--by-key", split_args.by_key, "field whose value selects validation records");
  split_cmd->add_option("--held-out", split_args.held_out, "values of --by-key sent to validation")->delimiter(',');

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (*encode_cmd) return cmd_encode(encode_args, out);
    if (*simplify_cmd) return cmd_simplify(simplify_args, out, log);
    if (*stats_cmd) return cmd_stats(stats_model, out);
    if (*div_cmd) return cmd_diversity(div_args, out, log);
    if (*eval_cmd) return cmd_eval(pred_path, truth_path, out);
    if (*train_cmd) return cmd_train(train_args, out, log);
    if (*predict_cmd) return cmd_predict(predict_args, out);
    if (*ingest_cmd) return cmd_ingest(ingest_args, out, log);
    if (*split_cmd) return cmd_split(split_args, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace onnxnet
