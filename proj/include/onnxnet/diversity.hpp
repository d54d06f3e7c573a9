#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onnxnet/graph_ir.hpp"

namespace onnxnet {

struct OpHistogram {
  std::map<std::string, double> probs;
  // Raw occurrence counts behind `probs`, used for count-pooling.
  std::map<std::string, std::int64_t> counts;

  // Normalizes counts; Constant entries are dropped. Throws EmptyHistogram.
  static OpHistogram from_counts(std::map<std::string, std::int64_t> counts);
  // Arbitrary non-negative weights normalized to sum 1 (counts left empty).
  static OpHistogram from_weights(const std::map<std::string, double>& weights);

  std::vector<std::string> vocab() const;
};

OpHistogram op_histogram(const GraphIR& g);

// Base-2 Jensen-Shannon divergence over the union vocabulary, in [0, 1].
double jsd(const OpHistogram& p, const OpHistogram& q);

enum class DiversityMode { Within, Between };
enum class Pooling { Counts, Average };

struct DiversityReport {
  std::string space_a;
  std::optional<std::string> space_b;
  DiversityMode mode = DiversityMode::Within;
  double value_bits = 0.0;
  std::size_t sample_count = 0;
  std::optional<std::size_t> pair_count;
  std::optional<std::uint64_t> seed;

  // Keys: space_a, space_b, mode, value_bits, n, pairs, seed.
  std::string to_json() const;
};

struct WithinOptions {
  // Above this many histograms, `max_pairs` pairs are drawn at random.
  std::size_t exhaustive_limit = 5000;
  std::size_t max_pairs = 12'497'500;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Mean JSD over all unordered pairs. Throws InsufficientSamples (n < 2).
DiversityReport within_space_diversity(const std::vector<OpHistogram>& hists, const WithinOptions& options = {});

// JSD between the pooled distributions of two spaces. Throws
// InsufficientSamples when either side is empty.
DiversityReport between_space_diversity(const std::vector<OpHistogram>& a, const std::vector<OpHistogram>& b,
                                        Pooling pooling = Pooling::Counts);

OpHistogram pool(const std::vector<OpHistogram>& hists, Pooling pooling);

// Seeded uniform sample of k indices out of n without replacement, sorted.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace onnxnet
