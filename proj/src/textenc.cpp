#include "onnxnet/textenc.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "onnxnet/condense.hpp"
#include "onnxnet/onnx_io.hpp"
#include "onnxnet/passes.hpp"
#include "onnxnet/shape_inference.hpp"

namespace onnxnet {

EncodingConfig config_for(Variant v) {
  switch (v) {
    case Variant::Base: return {};
    case Variant::Inputs: return {true, false, false};
    case Variant::Parameters: return {false, true, false};
    case Variant::OutShape: return {false, false, true};
    case Variant::Full: return {true, true, true};
  }
  return {};
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::Inputs: return "inputs";
    case Variant::Parameters: return "parameters";
    case Variant::OutShape: return "outshape";
    case Variant::Full: return "full";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  return std::nullopt;
}

std::size_t token_estimate(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Only integer-list attributes are rendered; a list whose entries are all
// equal collapses to that single value.
std::string params_clause(const NodeSpec& n) {
  std::vector<std::string> kvs;
  for (const auto& [key, value] : n.attributes) {
    const auto* ints = std::get_if<std::vector<std::int64_t>>(&value);
    if (!ints || ints->empty()) continue;
    std::string rendered;
    if (std::adjacent_find(ints->begin(), ints->end(), std::not_equal_to<>()) == ints->end()) {
      rendered = std::to_string(ints->front());
    } else {
      std::vector<std::string> items;
      for (auto v : *ints) items.push_back(std::to_string(v));
      rendered = "[" + join(items, ",") + "]";
    }
    kvs.push_back(key + "=" + rendered);
  }
  return kvs.empty() ? std::string() : "(" + join(kvs, ",") + ")";
}

}  // namespace

EncodedArch encode(const GraphIR& g, const EncodingConfig& cfg) {
  const auto [chains, names] = build_chains(g);
  EncodedArch out;
  for (const auto& chain : chains) {
    std::vector<std::string> segments;
    std::string prev;
    for (NodeId id : chain.nodes) {
      const auto& n = g.node(id);
      std::string clause = n.op_type;
      if (cfg.include_inputs) {
        std::vector<std::string> args;
        for (const auto& in : n.inputs) {
          if (in.empty()) continue;
          args.push_back(in == prev ? "prev" : names.label(in));
        }
        if (!args.empty()) clause += "(" + join(args, ", ") + ")";
      }
      if (cfg.include_parameters) clause += params_clause(n);
      segments.push_back(std::move(clause));
      prev.clear();
      for (const auto& o : n.outputs) {
        if (!o.empty()) prev = o;
      }
    }
    std::vector<std::string> outs;
    for (const auto& o : chain.tail_outputs) {
      std::string label = names.label(o);
      if (cfg.include_out_shape) label += ":" + g.value(o).shape.to_string();
      outs.push_back(std::move(label));
    }
    segments.push_back(join(outs, ", "));
    out.text += join(segments, " --> ");
    out.text += '\n';
  }
  out.line_count = chains.size();
  out.token_estimate = token_estimate(out.text);
  return out;
}

// ---------------------------------------------------------------------------
// Grammar check

namespace {

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t number, std::vector<Violation>& sink, std::set<long long>& defined)
      : s_(line), number_(number), sink_(sink), defined_(defined) {}

  void run() {
    if (s_.empty()) return fail("empty line");
    if (s_.back() == ' ' || s_.back() == '\t' || s_.back() == '\r') return fail("trailing whitespace");
    std::vector<std::string_view> segments;
    std::size_t start = 0;
    for (;;) {
      const auto at = s_.find(" --> ", start);
      if (at == std::string_view::npos) {
        segments.push_back(s_.substr(start));
        break;
      }
      segments.push_back(s_.substr(start, at - start));
      start = at + 5;
    }
    if (segments.size() < 2) return fail("missing ' --> ' before the outputs");
    std::vector<long long> uses;
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
      if (!clause(segments[i], i == 0, uses)) return;
    }
    std::vector<long long> defs;
    if (!outputs(segments.back(), defs)) return;
    for (auto v : uses) {
      if (!defined_.count(v)) return fail("Value" + std::to_string(v) + " used before it is defined");
    }
    for (auto v : defs) {
      if (!defined_.insert(v).second) return fail("Value" + std::to_string(v) + " defined more than once");
    }
  }

 private:
  void fail(std::string reason) { sink_.push_back({number_, std::move(reason)}); }

  static bool is_int(std::string_view t) {
    if (!t.empty() && t.front() == '-') t.remove_prefix(1);
    return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
  }

  static std::optional<long long> valref(std::string_view t) {
    if (t.substr(0, 5) != "Value" || !is_int(t.substr(5)) || t[5] == '-') return std::nullopt;
    return std::stoll(std::string(t.substr(5)));
  }

  static bool is_shape(std::string_view t) {
    if (t == "scalar") return true;
    std::size_t start = 0;
    for (;;) {
      const auto x = t.find('x', start);
      const auto dim = t.substr(start, x == std::string_view::npos ? std::string_view::npos : x - start);
      if (dim != "?" && !is_int(dim)) return false;
      if (x == std::string_view::npos) return true;
      start = x + 1;
    }
  }

  static std::vector<std::string_view> split(std::string_view s, std::string_view sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (;;) {
      const auto at = s.find(sep, start);
      if (at == std::string_view::npos) {
        parts.push_back(s.substr(start));
        return parts;
      }
      parts.push_back(s.substr(start, at - start));
      start = at + sep.size();
    }
  }

  bool clause(std::string_view c, bool first, std::vector<long long>& uses) {
    std::size_t i = 0;
    auto ident_char = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.'; };
    if (c.empty() || !(std::isalpha(static_cast<unsigned char>(c[0])) || c[0] == '_')) {
      fail("clause does not start with an operator name: '" + std::string(c) + "'");
      return false;
    }
    while (i < c.size() && ident_char(c[i])) ++i;
    int groups = 0;
    bool saw_params = false;
    while (i < c.size()) {
      if (c[i] == ' ') {
        fail("missing ' --> ' between operator clauses in '" + std::string(c) + "'");
        return false;
      }
      if (c[i] != '(') {
        fail("unexpected character '" + std::string(1, c[i]) + "' in clause '" + std::string(c) + "'");
        return false;
      }
      const auto close = c.find(')', i);
      if (close == std::string_view::npos) {
        fail("unbalanced parenthesis in clause '" + std::string(c) + "'");
        return false;
      }
      const auto body = c.substr(i + 1, close - i - 1);
      ++groups;
      if (groups > 2 || saw_params) {
        fail("too many parenthesized groups in clause '" + std::string(c) + "'");
        return false;
      }
      if (body.find('=') != std::string_view::npos) {
        if (!params(body)) return false;
        saw_params = true;
      } else {
        if (groups != 1) {
          fail("inputs must precede parameters in clause '" + std::string(c) + "'");
          return false;
        }
        if (!inputs(body, first, uses)) return false;
      }
      i = close + 1;
    }
    return true;
  }

  bool inputs(std::string_view body, bool first, std::vector<long long>& uses) {
    int prevs = 0;
    for (auto arg : split(body, ", ")) {
      if (arg == "prev") {
        ++prevs;
        continue;
      }
      if (auto v = valref(arg)) {
        uses.push_back(*v);
        continue;
      }
      if (!is_shape(arg)) {
        fail("invalid argument '" + std::string(arg) + "'");
        return false;
      }
    }
    // Only a chained clause reads its predecessor, and it does so exactly once.
    if (prevs != (first ? 0 : 1)) {
      fail(first ? "'prev' in the first clause of a line" : "chained clause must read 'prev' exactly once");
      return false;
    }
    return true;
  }

  bool params(std::string_view body) {
    // Split on commas outside brackets.
    std::vector<std::string_view> kvs;
    std::size_t start = 0;
    int depth = 0;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i == body.size() || (body[i] == ',' && depth == 0)) {
        kvs.push_back(body.substr(start, i - start));
        start = i + 1;
      } else if (body[i] == '[') {
        ++depth;
      } else if (body[i] == ']') {
        --depth;
      }
    }
    for (auto kv : kvs) {
      const auto eq = kv.find('=');
      const auto key = kv.substr(0, eq);
      const auto value = eq == std::string_view::npos ? std::string_view() : kv.substr(eq + 1);
      const bool key_ok = !key.empty() && std::all_of(key.begin(), key.end(), [](char ch) {
        return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_';
      });
      bool value_ok = is_int(value);
      if (!value_ok && value.size() >= 3 && value.front() == '[' && value.back() == ']') {
        const auto items = split(value.substr(1, value.size() - 2), ",");
        value_ok = std::all_of(items.begin(), items.end(), is_int);
      }
      if (eq == std::string_view::npos || !key_ok || !value_ok) {
        fail("invalid parameter '" + std::string(kv) + "'");
        return false;
      }
    }
    return true;
  }

  bool outputs(std::string_view seg, std::vector<long long>& defs) {
    for (auto item : split(seg, ", ")) {
      const auto colon = item.find(':');
      const auto ref = item.substr(0, colon);
      if (colon != std::string_view::npos && !is_shape(item.substr(colon + 1))) {
        fail("invalid output shape in '" + std::string(item) + "'");
        return false;
      }
      if (auto v = valref(ref)) {
        defs.push_back(*v);
      } else if (ref.substr(0, 3) != "Out" || (ref.size() > 3 && !is_int(ref.substr(3))) ||
                 (ref.size() > 3 && ref[3] == '-')) {
        fail("invalid output label '" + std::string(ref) + "'");
        return false;
      }
    }
    return true;
  }

  std::string_view s_;
  std::size_t number_;
  std::vector<Violation>& sink_;
  std::set<long long>& defined_;
};

}  // namespace

std::vector<Violation> validate_encoding(std::string_view text) {
  std::vector<Violation> violations;
  if (text.empty()) return violations;
  std::set<long long> defined;
  std::size_t start = 0, number = 0;
  while (start < text.size()) {
    ++number;
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      LineParser(text.substr(start), number, violations, defined).run();
      violations.push_back({number, "missing final line feed"});
      break;
    }
    LineParser(text.substr(start, nl - start), number, violations, defined).run();
    start = nl + 1;
  }
  return violations;
}

GraphIR prepare_for_encoding(const GraphIR& parsed) { return infer_shapes(simplify(parsed).first); }

EncodedArch encode_file(const std::filesystem::path& path, const EncodingConfig& cfg) {
  return encode(prepare_for_encoding(parse_onnx_file(path)), cfg);
}

}  // namespace onnxnet
