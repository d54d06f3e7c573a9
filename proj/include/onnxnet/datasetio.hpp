#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "onnxnet/textenc.hpp"

namespace onnxnet {

enum class Split { Train, Val, Unassigned };

std::string_view to_string(Split s);

struct ArchRecord {
  std::string id;
  // Exactly one of path / text is set.
  std::optional<std::string> path;
  std::optional<std::string> text;
  // Percent in [0, 100]; absent for unlabeled records.
  std::optional<double> accuracy;
  std::optional<std::string> space;
  Split split = Split::Unassigned;
  // Fields this library does not interpret, kept for rewriting.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const ArchRecord&, const ArchRecord&) = default;
};

struct ReadOptions {
  // Accept accuracies given as fractions in [0, 1] and rescale them to percent.
  bool fraction_accuracy = false;
};

// One JSON object per line; blank lines are skipped.
// Errors: MalformedRecord (with line number), DuplicateId, Io.
std::vector<ArchRecord> parse_manifest(std::string_view jsonl, const ReadOptions& options = {});
std::vector<ArchRecord> read_manifest(const std::filesystem::path& path, const ReadOptions& options = {});

std::string record_to_json(const ArchRecord& r);
std::string manifest_to_jsonl(const std::vector<ArchRecord>& records);
void write_manifest(const std::vector<ArchRecord>& records, const std::filesystem::path& path);

// Value of `field` rendered as a string (strings verbatim, other JSON dumped);
// nullopt when the record has no such field.
std::optional<std::string> field_value(const ArchRecord& r, const std::string& field);

struct RandomFraction {
  double fraction = 0.2;
  std::uint64_t seed = 42;
};

struct ByKey {
  std::string field;
  std::set<std::string> held_out;
};

using SplitSpec = std::variant<RandomFraction, ByKey>;

// Every record becomes Train or Val. RandomFraction sorts by id, shuffles with
// the seed and takes round(fraction * n) records as Val.
// Errors: EmptyVal, InvalidArgument.
std::vector<ArchRecord> assign_splits(std::vector<ArchRecord> records, const SplitSpec& spec);

struct RecordError {
  std::string id;
  std::string error;
};

struct BatchEncodeResult {
  // Successfully encoded records, in input order, each carrying `text`.
  std::vector<ArchRecord> records;
  std::vector<RecordError> errors;
};

// Encodes every path-bearing record (relative paths resolve against
// `base_dir`); inline-text records pass through. Failures are isolated per
// record. Output is independent of `workers`.
BatchEncodeResult batch_encode(const std::vector<ArchRecord>& records, const EncodingConfig& cfg, std::size_t workers,
                               const std::filesystem::path& base_dir = {});

std::string errors_to_jsonl(const std::vector<RecordError>& errors);

struct Prediction {
  std::string id;
  double score = 0.0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

std::vector<Prediction> parse_predictions(std::string_view jsonl);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
std::string predictions_to_jsonl(const std::vector<Prediction>& predictions);

void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace onnxnet
