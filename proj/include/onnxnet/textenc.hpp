#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

struct EncodingConfig {
  bool include_inputs = false;
  bool include_parameters = false;
  bool include_out_shape = false;

  friend bool operator==(const EncodingConfig&, const EncodingConfig&) = default;
};

enum class Variant { Base, Inputs, Parameters, OutShape, Full };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::Base, Variant::Inputs, Variant::Parameters,
                                                     Variant::OutShape, Variant::Full};

EncodingConfig config_for(Variant v);
std::string_view to_string(Variant v);
// "base", "inputs", "parameters", "outshape", "full".
std::optional<Variant> parse_variant(std::string_view name);

struct EncodedArch {
  std::string text;
  std::size_t line_count = 0;
  std::size_t token_estimate = 0;
};

// Whitespace-delimited token count.
std::size_t token_estimate(std::string_view text);

// One line per chain, each terminated by '\n'. Expects a simplified graph
// with inferred shapes.
EncodedArch encode(const GraphIR& g, const EncodingConfig& cfg);

struct Violation {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

// Checks every line against the encoding grammar and single assignment of
// ValueN labels. Empty result means conformant.
std::vector<Violation> validate_encoding(std::string_view text);

// parse -> simplify -> infer shapes, ready for encode().
GraphIR prepare_for_encoding(const GraphIR& parsed);
EncodedArch encode_file(const std::filesystem::path& path, const EncodingConfig& cfg);

}  // namespace onnxnet
