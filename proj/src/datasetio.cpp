#include "onnxnet/datasetio.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "onnxnet/onnx_io.hpp"
#include "onnxnet/rng.hpp"

namespace onnxnet {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

namespace {

[[noreturn]] void bad_record(std::size_t line, const std::string& why) {
  throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line) + ": " + why);
}

std::vector<std::pair<std::size_t, std::string_view>> lines_of(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::size_t start = 0, number = 0;
  while (start < text.size()) {
    ++number;
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) out.emplace_back(number, line);
    start = nl + 1;
  }
  return out;
}

json parse_object(std::size_t line, std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    bad_record(line, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_record(line, "expected a JSON object");
  return j;
}

ArchRecord to_record(std::size_t line, json j, const ReadOptions& options) {
  ArchRecord r;
  auto take_string = [&](const char* key, bool required) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) bad_record(line, std::string("missing \"") + key + "\"");
      return std::nullopt;
    }
    if (!it->is_string()) bad_record(line, std::string("\"") + key + "\" must be a string");
    std::string v = it->get<std::string>();
    j.erase(it);
    return v;
  };
  r.id = *take_string("id", true);
  if (r.id.empty()) bad_record(line, "empty \"id\"");
  r.path = take_string("path", false);
  r.text = take_string("text", false);
  if (r.path.has_value() == r.text.has_value()) bad_record(line, "exactly one of \"path\" and \"text\" is required");
  if (auto it = j.find("accuracy"); it != j.end()) {
    if (!it->is_number()) bad_record(line, "\"accuracy\" must be a number");
    double acc = it->get<double>();
    if (options.fraction_accuracy) {
      if (!(acc >= 0.0 && acc <= 1.0)) bad_record(line, "fractional accuracy outside [0, 1]");
      acc *= 100.0;
    }
    if (!(acc >= 0.0 && acc <= 100.0)) bad_record(line, "accuracy " + it->dump() + " outside [0, 100]");
    r.accuracy = acc;
    j.erase(it);
  }
  r.space = take_string("space", false);
  if (auto split = take_string("split", false)) {
    if (*split == "train") r.split = Split::Train;
    else if (*split == "val") r.split = Split::Val;
    else if (*split == "unassigned") r.split = Split::Unassigned;
    else bad_record(line, "unknown split \"" + *split + "\"");
  }
  r.extra = std::move(j);
  return r;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<ArchRecord> parse_manifest(std::string_view jsonl, const ReadOptions& options) {
  std::vector<ArchRecord> records;
  std::set<std::string> ids;
  for (const auto& [number, line] : lines_of(jsonl)) {
    ArchRecord r = to_record(number, parse_object(number, line), options);
    if (!ids.insert(r.id).second) {
      throw Error(ErrorCode::DuplicateId, "line " + std::to_string(number) + ": duplicate id \"" + r.id + "\"");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ArchRecord> read_manifest(const std::filesystem::path& path, const ReadOptions& options) {
  return parse_manifest(read_text(path), options);
}

std::string record_to_json(const ArchRecord& r) {
  json j = r.extra.is_object() ? r.extra : json::object();
  j["id"] = r.id;
  if (r.path) j["path"] = *r.path;
  if (r.text) j["text"] = *r.text;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (r.space) j["space"] = *r.space;
  j["split"] = std::string(to_string(r.split));
  return j.dump();
}

std::string manifest_to_jsonl(const std::vector<ArchRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r);
    out += '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  f.close();
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

void write_manifest(const std::vector<ArchRecord>& records, const std::filesystem::path& path) {
  write_text_file(path, manifest_to_jsonl(records));
}

std::optional<std::string> field_value(const ArchRecord& r, const std::string& field) {
  if (field == "id") return r.id;
  if (field == "path") return r.path;
  if (field == "text") return r.text;
  if (field == "space") return r.space;
  if (field == "split") return std::string(to_string(r.split));
  if (field == "accuracy") return r.accuracy ? std::optional(json(*r.accuracy).dump()) : std::nullopt;
  auto it = r.extra.find(field);
  if (it == r.extra.end()) return std::nullopt;
  return it->is_string() ? it->get<std::string>() : it->dump();
}

std::vector<ArchRecord> assign_splits(std::vector<ArchRecord> records, const SplitSpec& spec) {
  if (records.empty()) throw Error(ErrorCode::InvalidArgument, "no records to split");
  std::size_t val = 0;
  if (const auto* rf = std::get_if<RandomFraction>(&spec)) {
    if (!(rf->fraction > 0.0 && rf->fraction < 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "split fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
    Rng rng(rf->seed);
    rng.shuffle(order);
    val = static_cast<std::size_t>(std::llround(rf->fraction * static_cast<double>(records.size())));
    for (std::size_t k = 0; k < order.size(); ++k) records[order[k]].split = k < val ? Split::Val : Split::Train;
  } else {
    const auto& bk = std::get<ByKey>(spec);
    for (auto& r : records) {
      const auto v = field_value(r, bk.field);
      const bool held = v && bk.held_out.count(*v);
      r.split = held ? Split::Val : Split::Train;
      val += held;
    }
  }
  if (val == 0) throw Error(ErrorCode::EmptyVal, "split assigns no record to validation");
  return records;
}

BatchEncodeResult batch_encode(const std::vector<ArchRecord>& records, const EncodingConfig& cfg, std::size_t workers,
                               const std::filesystem::path& base_dir) {
  struct Slot {
    std::optional<ArchRecord> record;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(records.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      const ArchRecord& in = records[i];
      try {
        ArchRecord out = in;
        if (in.path) {
          std::filesystem::path p(*in.path);
          if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
          out.text = encode_file(p, cfg).text;
          out.path.reset();
        }
        slots[i].record = std::move(out);
      } catch (const Error& e) {
        slots[i].error = std::string(to_string(e.code())) + ": " + e.what();
      } catch (const std::exception& e) {
        slots[i].error = std::string("InternalError: ") + e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, records.size()));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  BatchEncodeResult result;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].record) result.records.push_back(std::move(*slots[i].record));
    else result.errors.push_back({records[i].id, *slots[i].error});
  }
  return result;
}

std::string errors_to_jsonl(const std::vector<RecordError>& errors) {
  std::string out;
  for (const auto& e : errors) {
    out += json{{"id", e.id}, {"error", e.error}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<Prediction> parse_predictions(std::string_view jsonl) {
  std::vector<Prediction> out;
  std::set<std::string> ids;
  for (const auto& [number, line] : lines_of(jsonl)) {
    const json j = parse_object(number, line);
    auto id = j.find("id");
    auto score = j.find("score");
    if (id == j.end() || !id->is_string()) bad_record(number, "prediction needs a string \"id\"");
    if (score == j.end() || !score->is_number()) bad_record(number, "prediction needs a numeric \"score\"");
    Prediction p{id->get<std::string>(), score->get<double>()};
    if (!ids.insert(p.id).second) {
      throw Error(ErrorCode::DuplicateId, "line " + std::to_string(number) + ": duplicate id \"" + p.id + "\"");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_text(path));
}

std::string predictions_to_jsonl(const std::vector<Prediction>& predictions) {
  std::string out;
  for (const auto& p : predictions) {
    out += json{{"id", p.id}, {"score", p.score}}.dump();
    out += '\n';
  }
  return out;
}

}  // namespace onnxnet
