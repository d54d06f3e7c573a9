#include "onnxnet/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

#include <json.hpp>

#include "onnxnet/rng.hpp"

namespace onnxnet {

namespace {

// Neumaier-compensated running sum.
struct Accumulator {
  double sum = 0.0;
  double carry = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) carry += (sum - t) + v;
    else carry += (v - t) + sum;
    sum = t;
  }
  void add(const Accumulator& other) {
    add(other.sum);
    add(other.carry);
  }
  double value() const { return sum + carry; }
};

double probability(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  return it == p.end() ? 0.0 : it->second;
}

}  // namespace

OpHistogram OpHistogram::from_counts(std::map<std::string, std::int64_t> counts) {
  counts.erase("Constant");
  std::int64_t total = 0;
  for (auto it = counts.begin(); it != counts.end();) {
    if (it->second < 0) throw Error(ErrorCode::InvalidArgument, "negative count for " + it->first);
    if (it->second == 0) {
      it = counts.erase(it);
      continue;
    }
    total += it->second;
    ++it;
  }
  if (total == 0) throw Error(ErrorCode::EmptyHistogram, "no non-Constant operators to count");
  OpHistogram h;
  for (const auto& [op, c] : counts) h.probs[op] = static_cast<double>(c) / static_cast<double>(total);
  h.counts = std::move(counts);
  return h;
}

OpHistogram OpHistogram::from_weights(const std::map<std::string, double>& weights) {
  Accumulator total;
  for (const auto& [op, w] : weights) {
    if (w < 0 || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "invalid weight for " + op);
    if (op != "Constant") total.add(w);
  }
  if (total.value() <= 0) throw Error(ErrorCode::EmptyHistogram, "all weights are zero");
  OpHistogram h;
  for (const auto& [op, w] : weights) {
    if (op != "Constant" && w > 0) h.probs[op] = w / total.value();
  }
  return h;
}

std::vector<std::string> OpHistogram::vocab() const {
  std::vector<std::string> out;
  for (const auto& [op, p] : probs) out.push_back(op);
  return out;
}

OpHistogram op_histogram(const GraphIR& g) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& [id, n] : g.nodes) ++counts[n.op_type];
  return OpHistogram::from_counts(std::move(counts));
}

double jsd(const OpHistogram& p, const OpHistogram& q) {
  std::set<std::string> keys;
  for (const auto& [k, v] : p.probs) keys.insert(k);
  for (const auto& [k, v] : q.probs) keys.insert(k);
  Accumulator kl_p, kl_q;
  for (const auto& k : keys) {
    const double a = probability(p.probs, k), b = probability(q.probs, k);
    const double m = 0.5 * (a + b);
    if (a > 0) kl_p.add(a * std::log2(a / m));
    if (b > 0) kl_q.add(b * std::log2(b / m));
  }
  // Summing the two halves in a fixed order keeps jsd(p,q) == jsd(q,p) bit for bit.
  const double x = 0.5 * kl_p.value(), y = 0.5 * kl_q.value();
  const double value = std::min(x, y) + std::max(x, y);
  return std::clamp(value, 0.0, 1.0);
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (k >= n) return idx;
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are a uniform sample.
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(n - i))]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

DiversityReport within_space_diversity(const std::vector<OpHistogram>& hists, const WithinOptions& options) {
  const std::size_t n = hists.size();
  if (n < 2) throw Error(ErrorCode::InsufficientSamples, "within-space diversity needs at least 2 histograms");
  DiversityReport report;
  report.mode = DiversityMode::Within;
  report.sample_count = n;

  if (n > options.exhaustive_limit) {
    Rng rng(options.seed);
    Accumulator acc;
    for (std::size_t k = 0; k < options.max_pairs; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      auto j = static_cast<std::size_t>(rng.below(n - 1));
      if (j >= i) ++j;
      acc.add(jsd(hists[i], hists[j]));
    }
    report.value_bits = acc.value() / static_cast<double>(options.max_pairs);
    report.pair_count = options.max_pairs;
    report.seed = options.seed;
    return report;
  }

  // Rows are dealt round-robin to workers; each keeps its own compensated sum.
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, n - 1));
  std::vector<Accumulator> partial(workers);
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i + 1 < n; i += workers) {
      for (std::size_t j = i + 1; j < n; ++j) partial[w].add(jsd(hists[i], hists[j]));
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  Accumulator total;
  for (const auto& p : partial) total.add(p);
  const std::size_t pairs = n * (n - 1) / 2;
  report.value_bits = total.value() / static_cast<double>(pairs);
  report.pair_count = pairs;
  return report;
}

OpHistogram pool(const std::vector<OpHistogram>& hists, Pooling pooling) {
  if (hists.empty()) throw Error(ErrorCode::InsufficientSamples, "cannot pool an empty space");
  if (pooling == Pooling::Counts) {
    std::map<std::string, std::int64_t> counts;
    for (const auto& h : hists) {
      if (h.counts.empty()) throw Error(ErrorCode::InvalidArgument, "count-pooling needs raw counts");
      for (const auto& [op, c] : h.counts) counts[op] += c;
    }
    return OpHistogram::from_counts(std::move(counts));
  }
  std::map<std::string, Accumulator> sums;
  for (const auto& h : hists) {
    for (const auto& [op, p] : h.probs) sums[op].add(p);
  }
  std::map<std::string, double> weights;
  for (const auto& [op, acc] : sums) weights[op] = acc.value() / static_cast<double>(hists.size());
  return OpHistogram::from_weights(weights);
}

DiversityReport between_space_diversity(const std::vector<OpHistogram>& a, const std::vector<OpHistogram>& b,
                                        Pooling pooling) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::InsufficientSamples, "both spaces need at least one model");
  DiversityReport report;
  report.mode = DiversityMode::Between;
  report.value_bits = jsd(pool(a, pooling), pool(b, pooling));
  report.sample_count = std::min(a.size(), b.size());
  return report;
}

std::string DiversityReport::to_json() const {
  nlohmann::json j;
  j["space_a"] = space_a;
  j["space_b"] = space_b ? nlohmann::json(*space_b) : nlohmann::json(nullptr);
  j["mode"] = mode == DiversityMode::Within ? "within" : "between";
  j["value_bits"] = value_bits;
  j["n"] = sample_count;
  j["pairs"] = pair_count ? nlohmann::json(*pair_count) : nlohmann::json(nullptr);
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return j.dump();
}

}  // namespace onnxnet
