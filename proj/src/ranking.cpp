#include "onnxnet/ranking.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "onnxnet/error.hpp"
#include "onnxnet/rng.hpp"

namespace onnxnet {

namespace {

void check_pair_input(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::InvalidArgument, "score and accuracy lists differ in length");
  if (a < 2) throw Error(ErrorCode::InsufficientSamples, "rank correlation needs at least 2 entries");
}

std::pair<std::vector<double>, std::vector<double>> split(const ScoredSet& s) {
  std::vector<double> x, y;
  for (const auto& e : s) {
    x.push_back(e.score);
    y.push_back(e.accuracy);
  }
  return {std::move(x), std::move(y)};
}

// Number of pairs tied within runs of equal adjacent values of sorted data.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq equal) {
  std::int64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Merge sort on v counting inversions (strictly greater before smaller).
std::int64_t sort_counting_swaps(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = sort_counting_swaps(v, buf, lo, mid) + sort_counting_swaps(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  check_pair_input(x.size(), y.size());
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  const auto n0 = static_cast<std::int64_t>(n * (n - 1) / 2);
  const std::int64_t n1 = tied_pairs(n, [&](std::size_t a, std::size_t b) { return x[order[a]] == x[order[b]]; });
  const std::int64_t n3 = tied_pairs(n, [&](std::size_t a, std::size_t b) {
    return x[order[a]] == x[order[b]] && y[order[a]] == y[order[b]];
  });
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::int64_t swaps = sort_counting_swaps(ys, buf, 0, n);
  const std::int64_t n2 = tied_pairs(n, [&](std::size_t a, std::size_t b) { return ys[a] == ys[b]; });
  if (n0 == n1 || n0 == n2) {
    throw Error(ErrorCode::DegenerateInput, "rank correlation undefined: one side has no distinct values");
  }
  const double numerator = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
  return numerator / std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

double kendall_tau(const ScoredSet& s) {
  const auto [x, y] = split(s);
  return kendall_tau(x, y);
}

std::vector<double> mid_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  check_pair_input(x.size(), y.size());
  const auto rx = mid_ranks(x), ry = mid_ranks(y);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) {
    throw Error(ErrorCode::DegenerateInput, "rank correlation undefined: one side has no distinct values");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_rho(const ScoredSet& s) {
  const auto [x, y] = split(s);
  return spearman_rho(x, y);
}

double hinge_loss(double s_i, double s_j, bool better_is_i, double margin) {
  const double d = better_is_i ? s_i - s_j : s_j - s_i;
  return std::max(0.0, margin - d);
}

// ---------------------------------------------------------------------------
// Model

RankerModel RankerModel::zeros(std::uint32_t feature_dim, std::uint64_t hash_seed, std::vector<std::uint32_t> orders) {
  if (feature_dim == 0) throw Error(ErrorCode::InvalidArgument, "feature_dim must be positive");
  RankerModel m;
  m.feature_dim = feature_dim;
  m.hash_seed = hash_seed;
  m.ngram_orders = std::move(orders);
  m.weights.assign(feature_dim, 0.0);
  return m;
}

namespace {

constexpr char kMagic[4] = {'O', 'N', 'R', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T take(std::string_view& in) {
  if (in.size() < sizeof(T)) throw Error(ErrorCode::MalformedFile, "ranker model file is truncated");
  char bytes[sizeof(T)];
  std::memcpy(bytes, in.data(), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  in.remove_prefix(sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

std::string RankerModel::serialize() const {
  std::string out(kMagic, 4);
  put(out, version);
  put(out, feature_dim);
  put(out, hash_seed);
  put(out, static_cast<std::uint32_t>(ngram_orders.size()));
  for (auto o : ngram_orders) put(out, o);
  for (double w : weights) put(out, w);
  return out;
}

RankerModel RankerModel::deserialize(std::string_view in) {
  if (in.substr(0, 4) != std::string_view(kMagic, 4)) throw Error(ErrorCode::MalformedFile, "not a ranker model file");
  in.remove_prefix(4);
  RankerModel m;
  m.version = take<std::uint32_t>(in);
  if (m.version != kVersion) {
    throw Error(ErrorCode::MalformedFile, "unsupported ranker model version " + std::to_string(m.version));
  }
  m.feature_dim = take<std::uint32_t>(in);
  m.hash_seed = take<std::uint64_t>(in);
  const auto orders = take<std::uint32_t>(in);
  if (orders > 16) throw Error(ErrorCode::MalformedFile, "implausible n-gram order count");
  m.ngram_orders.clear();
  for (std::uint32_t i = 0; i < orders; ++i) m.ngram_orders.push_back(take<std::uint32_t>(in));
  if (in.size() != static_cast<std::size_t>(m.feature_dim) * sizeof(double)) {
    throw Error(ErrorCode::MalformedFile, "ranker weight payload does not match feature_dim");
  }
  m.weights.resize(m.feature_dim);
  for (auto& w : m.weights) w = take<double>(in);
  return m;
}

void RankerModel::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

RankerModel RankerModel::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---------------------------------------------------------------------------
// Features

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      std::size_t j = i;
      while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
      tokens.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (text.substr(i, 3) == "-->") {
      tokens.emplace_back("-->");
      i += 3;
    } else if (c == '(' || c == ')') {
      tokens.emplace_back(1, static_cast<char>(c));
      ++i;
    } else {
      ++i;
    }
  }
  return tokens;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

SparseFeatures featurize(std::string_view text, const RankerModel& header) {
  const auto tokens = tokenize(text);
  std::map<std::uint32_t, double> buckets;
  const std::uint64_t basis = 0xcbf29ce484222325ULL ^ mix(header.hash_seed);
  for (auto order : header.ngram_orders) {
    if (order == 0 || tokens.size() < order) continue;
    for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
      std::uint64_t h = fnv1a(basis, std::string_view(reinterpret_cast<const char*>(&order), sizeof(order)));
      for (std::size_t k = 0; k < order; ++k) {
        h = fnv1a(h, tokens[i + k]);
        h = fnv1a(h, "\x1f");
      }
      buckets[static_cast<std::uint32_t>(mix(h) % header.feature_dim)] += 1.0;
    }
  }
  return SparseFeatures(buckets.begin(), buckets.end());
}

double predict(const RankerModel& model, const SparseFeatures& features) {
  double s = 0.0;
  for (const auto& [i, v] : features) s += model.weights.at(i) * v;
  return s;
}

double predict(const RankerModel& model, std::string_view text) { return predict(model, featurize(text, model)); }

// ---------------------------------------------------------------------------
// Training

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) {
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, warmup));
  }
  if (cfg.schedule == Schedule::Constant) return cfg.learning_rate;
  if (step > total_steps) return cfg.end_learning_rate;
  const double decay_steps = static_cast<double>(total_steps - warmup);
  const double remaining = decay_steps > 0 ? 1.0 - static_cast<double>(step - warmup) / decay_steps : 0.0;
  return (cfg.learning_rate - cfg.end_learning_rate) * remaining + cfg.end_learning_rate;
}

BatchGradient batch_gradient(const RankerModel& model, const std::vector<const SparseFeatures*>& features,
                             const std::vector<double>& accuracies, double margin) {
  BatchGradient out;
  std::vector<double> scores;
  for (const auto* f : features) scores.push_back(predict(model, *f));
  std::map<std::uint32_t, double> grad;
  double loss = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = 0; j < features.size(); ++j) {
      if (!(accuracies[i] > accuracies[j])) continue;
      ++out.pairs;
      const double l = hinge_loss(scores[i], scores[j], true, margin);
      loss += l;
      if (!(margin - (scores[i] - scores[j]) > 0)) continue;
      // d/dw max(0, margin - w.(x_i - x_j)) = -(x_i - x_j)
      for (const auto& [k, v] : *features[i]) grad[k] -= v;
      for (const auto& [k, v] : *features[j]) grad[k] += v;
    }
  }
  if (out.pairs == 0) return out;
  const double scale = 1.0 / static_cast<double>(out.pairs);
  out.loss = loss * scale;
  for (const auto& [k, v] : grad) {
    if (v != 0.0) out.gradient.emplace_back(k, v * scale);
  }
  return out;
}

TrainResult train_ranker(const std::vector<std::pair<std::string, double>>& data, const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0) || cfg.epochs < 1 || !(cfg.margin >= 0) || cfg.batch_size < 2) {
    throw Error(ErrorCode::InvalidArgument, "invalid training configuration");
  }
  if (data.size() < 2) throw Error(ErrorCode::InvalidArgument, "training needs at least 2 items");
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end(),
                                            [](const auto& a, const auto& b) { return a.second < b.second; });
  if (lo->second == hi->second) throw Error(ErrorCode::NoComparablePairs, "all training accuracies are equal");

  TrainResult result;
  RankerModel& model = result.model;
  model = RankerModel::zeros(cfg.feature_dim, cfg.seed, cfg.ngram_orders);
  std::vector<SparseFeatures> features;
  features.reserve(data.size());
  for (const auto& [text, acc] : data) features.push_back(featurize(text, model));

  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t scored_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const SparseFeatures*> batch;
      std::vector<double> acc;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&features[order[k]]);
        acc.push_back(data[order[k]].second);
      }
      const BatchGradient g = batch_gradient(model, batch, acc, cfg.margin);
      const double lr = learning_rate_at(cfg, step, total_steps);
      if (cfg.weight_decay != 0.0 && lr != 0.0) {
        const double shrink = 1.0 - lr * cfg.weight_decay;
        for (auto& w : model.weights) w *= shrink;
      }
      for (const auto& [k, v] : g.gradient) model.weights[k] -= lr * v;
      if (g.pairs) {
        epoch_loss += g.loss;
        ++scored_steps;
      }
    }
    result.epoch_losses.push_back(scored_steps ? epoch_loss / static_cast<double>(scored_steps) : 0.0);
  }
  return result;
}

}  // namespace onnxnet
