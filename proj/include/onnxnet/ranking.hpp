#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace onnxnet {

struct ScoredEntry {
  std::string id;
  double score = 0.0;
  double accuracy = 0.0;
};

using ScoredSet = std::vector<ScoredEntry>;

// Tie-corrected tau-b. Throws InsufficientSamples (< 2 entries) and
// DegenerateInput when either side has no two distinct values.
double kendall_tau(std::span<const double> scores, std::span<const double> accuracies);
double kendall_tau(const ScoredSet& s);

// Pearson correlation of mid-ranks; same errors as kendall_tau.
double spearman_rho(std::span<const double> scores, std::span<const double> accuracies);
double spearman_rho(const ScoredSet& s);

// Mid-ranks (1-based, ties averaged).
std::vector<double> mid_ranks(std::span<const double> values);

double hinge_loss(double s_i, double s_j, bool better_is_i, double margin);

struct RankerModel {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint32_t feature_dim = 1u << 18;
  std::uint64_t hash_seed = 42;
  std::vector<std::uint32_t> ngram_orders{1, 2};
  std::vector<double> weights;

  // Header fields with zero weights of the right length.
  static RankerModel zeros(std::uint32_t feature_dim, std::uint64_t hash_seed, std::vector<std::uint32_t> orders);

  std::string serialize() const;
  static RankerModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static RankerModel load(const std::filesystem::path& path);

  friend bool operator==(const RankerModel&, const RankerModel&) = default;
};

// Maximal alphanumeric runs plus the symbols "-->", "(" and ")".
std::vector<std::string> tokenize(std::string_view text);

// (bucket, count) pairs sorted by bucket with duplicates merged.
using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

SparseFeatures featurize(std::string_view text, const RankerModel& header);

double predict(const RankerModel& model, std::string_view text);
double predict(const RankerModel& model, const SparseFeatures& features);

enum class Schedule { Polynomial, Constant };

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double margin = 1.0;
  std::uint64_t seed = 42;
  Schedule schedule = Schedule::Polynomial;
  double end_learning_rate = 5e-6;
  double weight_decay = 0.1;
  double warmup_ratio = 0.06;
  std::uint32_t feature_dim = 1u << 18;
  std::vector<std::uint32_t> ngram_orders{1, 2};
};

// Linear warmup over ceil(warmup_ratio * total) steps, then linear decay to
// end_learning_rate (Polynomial) or a flat rate (Constant). `step` is 0-based.
double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

struct BatchGradient {
  double loss = 0.0;  // mean hinge over comparable pairs
  std::size_t pairs = 0;
  SparseFeatures gradient;  // of the mean loss, without weight decay
};

// All ordered pairs with distinct accuracies inside one batch.
BatchGradient batch_gradient(const RankerModel& model, const std::vector<const SparseFeatures*>& features,
                             const std::vector<double>& accuracies, double margin);

struct TrainResult {
  RankerModel model;
  // Mean per-step loss for each epoch.
  std::vector<double> epoch_losses;
};

// Throws NoComparablePairs when every accuracy is equal, InvalidArgument on a
// bad config or fewer than 2 items.
TrainResult train_ranker(const std::vector<std::pair<std::string, double>>& data, const TrainConfig& cfg);

}  // namespace onnxnet
