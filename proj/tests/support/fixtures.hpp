#pragma once

// Shared test fixtures: the 4-node gradient-check instance, the planted
// two-block graph, and scratch directories.

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "spgen/corpus.hpp"
#include "spgen/encoder.hpp"
#include "spgen/linkpred.hpp"

namespace spgen::testing {

inline Interaction edge(const std::string& u, const std::string& i, Split s = Split::train) {
  Interaction x;
  x.user_id = u;
  x.item_id = i;
  x.text = u + " on " + i;
  x.rating = 4;
  x.split = s;
  return x;
}

/// Users u1, u2; items i1, i2; edges u1-i1, u1-i2, u2-i1. The only non-edge
/// is (u2, i2).
struct FourNodeInstance {
  InteractionGraph graph;
  FeatureTable features;
  GraphView view;
  Mat h0;
  std::vector<NodePair> positives;
  std::vector<NodePair> negatives;
};

inline FourNodeInstance four_node_instance() {
  FourNodeInstance f;
  f.graph = InteractionGraph({edge("u1", "i1"), edge("u1", "i2"), edge("u2", "i1")});
  f.features.dimension = 3;
  f.features.users["u1"] = {0.9, -0.3, 0.4};
  f.features.users["u2"] = {-0.2, 0.8, 0.5};
  f.features.items["i1"] = {0.6, 0.1, -0.7};
  f.features.items["i2"] = {-0.5, -0.4, 0.9};
  f.view = make_view(f.graph);
  f.h0 = feature_matrix(f.view, f.features);
  f.positives = f.view.edges;
  f.negatives = {{f.view.user_index.at("u2"), f.view.item_index.at("i2")}};
  return f;
}

/// Seeded parameters for the 4-node instance. The decoder bias starts at
/// nonzero values so no hidden unit sits exactly on the ReLU kink.
inline SageParams four_node_params(std::uint64_t seed) {
  TrainConfig cfg;
  std::mt19937_64 rng(seed);
  auto p = init_params(3, cfg, rng);
  for (Eigen::Index k = 0; k < p.mlp_hidden_b.size(); ++k) p.mlp_hidden_b[k] = (k % 2 ? -0.05 : 0.1) * (1.0 + static_cast<double>(k));
  p.mlp_out_b = 0.2;
  return p;
}

/// Worst relative error |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// per tensor, in for_each_tensor order, from central differences.
inline std::vector<double> gradient_check(const FourNodeInstance& f, const SageParams& p, double step = 1e-4,
                                          double floor = 1e-6) {
  auto analytic = loss_and_gradients(f.view, f.h0, p, f.positives, f.negatives).grad;
  std::vector<const double*> ga;
  std::vector<std::size_t> sizes;
  analytic.for_each_tensor([&](double* g, std::size_t n) {
    ga.push_back(g);
    sizes.push_back(n);
  });
  std::vector<double> worst(ga.size(), 0.0);
  SageParams q = p;
  std::size_t t = 0;
  q.for_each_tensor([&](double* w, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double keep = w[k];
      w[k] = keep + step;
      const double up = loss_and_gradients(f.view, f.h0, q, f.positives, f.negatives).loss;
      w[k] = keep - step;
      const double down = loss_and_gradients(f.view, f.h0, q, f.positives, f.negatives).loss;
      w[k] = keep;
      const double numeric = (up - down) / (2 * step);
      const double a = ga[t][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst[t] = std::max(worst[t], std::abs(a - numeric) / denom);
    }
    ++t;
  });
  return worst;
}

/// 40 users x 40 items in two blocks of 20/20. Each within-block pair is an
/// edge with probability `density`; no cross-block edges. A `heldout`
/// fraction of edges (at least one per user) is moved to the test split.
/// Node features are seeded Gaussian noise with a weak block signal on the
/// first coordinate, normalized.
struct PlantedGraph {
  std::vector<Interaction> train;
  std::vector<Interaction> test;
  InteractionGraph graph;
  FeatureTable features;
  std::map<std::string, std::set<std::string>> gold;
  std::map<std::string, int> block;
};

inline std::string planted_user(int k) { return "u" + std::string(k < 10 ? "0" : "") + std::to_string(k); }
inline std::string planted_item(int k) { return "i" + std::string(k < 10 ? "0" : "") + std::to_string(k); }

inline PlantedGraph planted_graph(std::uint64_t seed = 2024, double density = 0.8, double heldout = 0.1,
                                  std::size_t dim = 16) {
  constexpr int kUsers = 40, kItems = 40, kBlock = 20;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PlantedGraph pg;
  std::vector<Interaction> all;
  for (int u = 0; u < kUsers; ++u) {
    const int b = u / kBlock;
    pg.block[planted_user(u)] = b;
    for (int i = b * kBlock; i < (b + 1) * kBlock; ++i)
      if (unit(rng) < density) all.push_back(edge(planted_user(u), planted_item(i)));
  }
  for (int i = 0; i < kItems; ++i) pg.block[planted_item(i)] = i / kBlock;

  // Hold out round(heldout * edges) edges, one per user first, then at random.
  const auto target = static_cast<std::size_t>(heldout * static_cast<double>(all.size()) + 0.5);
  std::set<std::size_t> chosen;
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t k = 0; k < all.size(); ++k) by_user[all[k].user_id].push_back(k);
  for (auto& [u, ks] : by_user)
    if (ks.size() >= 2) chosen.insert(ks[rng() % ks.size()]);
  while (chosen.size() < target) {
    auto k = rng() % all.size();
    if (by_user[all[k].user_id].size() < 2) continue;
    chosen.insert(k);
  }
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (chosen.count(k)) {
      all[k].split = Split::test;
      pg.test.push_back(all[k]);
      pg.gold[all[k].user_id].insert(all[k].item_id);
    } else {
      pg.train.push_back(all[k]);
    }
  }
  pg.graph = InteractionGraph(pg.train);

  std::normal_distribution<double> noise(0.0, 1.0);
  pg.features.dimension = dim;
  auto feature = [&](int b) {
    Embedding v(dim);
    for (auto& x : v) x = noise(rng);
    v[0] += b == 0 ? 1.0 : -1.0;
    normalize_in_place(v);
    return v;
  };
  for (int u = 0; u < kUsers; ++u) pg.features.users[planted_user(u)] = feature(u / kBlock);
  for (int i = 0; i < kItems; ++i) pg.features.items[planted_item(i)] = feature(i / kBlock);
  return pg;
}

/// P(at least one of g gold items lands in the first k of n uniformly
/// shuffled candidates).
inline double uniform_hits_at(std::size_t k, std::size_t n, std::size_t g) {
  if (g == 0) return 0.0;
  if (k >= n || n - g < k) return 1.0;
  double miss = 1.0;
  for (std::size_t j = 0; j < k; ++j) miss *= static_cast<double>(n - g - j) / static_cast<double>(n - j);
  return 1.0 - miss;
}

struct PlantedOutcome {
  TrainResult trained;
  LpMetrics metrics;
  double uniform_hits10 = 0.0;
  double top20_fraction = 0.0;  // users whose best gold item is in the top 20% of candidates
  double first10_loss = 0.0;
  double last10_loss = 0.0;
};

inline TrainConfig planted_train_config() {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.seed = 17;
  return cfg;
}

inline PlantedOutcome evaluate_planted(const PlantedGraph& pg, const TrainConfig& cfg) {
  PlantedOutcome o;
  o.trained = train(pg.graph, pg.features, cfg);
  auto eg = embed_graph(pg.graph, pg.features, o.trained.params);
  std::vector<RankingResult> rankings;
  std::size_t in_top = 0;
  for (const auto& [u, gold] : pg.gold) {
    auto r = rank_candidates(eg, pg.graph, o.trained.params, u);
    const auto n = r.ranked_items.size();
    o.uniform_hits10 += uniform_hits_at(10, n, gold.size());
    const auto rank = best_gold_rank(r, gold);
    if (rank > 0 && static_cast<double>(rank) <= 0.2 * static_cast<double>(n)) ++in_top;
    rankings.push_back(std::move(r));
  }
  o.metrics = lp_metrics(rankings, pg.gold);
  o.uniform_hits10 /= static_cast<double>(pg.gold.size());
  o.top20_fraction = static_cast<double>(in_top) / static_cast<double>(pg.gold.size());
  const auto& log = o.trained.log;
  const std::size_t w = std::min<std::size_t>(10, log.size());
  for (std::size_t k = 0; k < w; ++k) {
    o.first10_loss += log[k].loss / static_cast<double>(w);
    o.last10_loss += log[log.size() - 1 - k].loss / static_cast<double>(w);
  }
  return o;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("spgen_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace spgen::testing
