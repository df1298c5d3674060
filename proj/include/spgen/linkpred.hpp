#pragma once

// GraphSAGE encoder (mean aggregator, ReLU) with an MLP edge decoder,
// trained full-batch with BCE against resampled negatives.
//
// Layer l:   m_v = mean_{u in N(v)} h_u            (zero for isolated v)
//            h_v = ReLU(W_l [h_v || m_v])
// Decoder:   s(u,i) = w2 . ReLU(W1 [z_u || z_i] + b1) + b2,  p = sigmoid(s)

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "spgen/common.hpp"
#include "spgen/corpus.hpp"
#include "spgen/encoder.hpp"

namespace spgen {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int layers = 2;
  int hidden_dim = 0;  // 0 means "same as the input dimension"
  double learning_rate = 0.01;
  int epochs = 50;
  int negative_ratio = 1;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"layers", c.layers},
          {"hidden_dim", c.hidden_dim},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"negative_ratio", c.negative_ratio},
          {"seed", c.seed},
          {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.layers = j.value("layers", c.layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.negative_ratio = j.value("negative_ratio", c.negative_ratio);
  c.seed = j.value("seed", c.seed);
  auto opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") c.optimizer = OptimizerKind::adam;
  else if (opt == "sgd") c.optimizer = OptimizerKind::sgd;
  else throw ConfigError("optimizer must be adam or sgd");
  if (c.layers < 1) throw ConfigError("layers must be >= 1");
  if (c.hidden_dim < 0 || c.epochs < 0 || c.negative_ratio < 1 || !(c.learning_rate > 0))
    throw ConfigError("hidden_dim, epochs, negative_ratio and learning_rate must be positive");
  return c;
}

/// All trainable tensors. Also used as the gradient container.
struct SageParams {
  std::vector<Mat> layer_weights;  // l: hidden x 2*in_l
  Mat mlp_hidden_w;                // hidden x 2*out
  Vec mlp_hidden_b;
  Vec mlp_out_w;
  double mlp_out_b = 0.0;

  std::size_t input_dim = 0;
  TrainConfig config;

  std::size_t output_dim() const {
    return layer_weights.empty() ? input_dim : static_cast<std::size_t>(layer_weights.back().rows());
  }

  SageParams zeros_like() const {
    SageParams g = *this;
    for (auto& w : g.layer_weights) w.setZero();
    g.mlp_hidden_w.setZero();
    g.mlp_hidden_b.setZero();
    g.mlp_out_w.setZero();
    g.mlp_out_b = 0.0;
    return g;
  }

  /// Calls f(double* data, size) for each tensor in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& w : layer_weights) f(w.data(), static_cast<std::size_t>(w.size()));
    f(mlp_hidden_w.data(), static_cast<std::size_t>(mlp_hidden_w.size()));
    f(mlp_hidden_b.data(), static_cast<std::size_t>(mlp_hidden_b.size()));
    f(mlp_out_w.data(), static_cast<std::size_t>(mlp_out_w.size()));
    f(&mlp_out_b, std::size_t{1});
  }

  std::size_t tensor_count() const { return layer_weights.size() + 4; }

  bool all_finite() const {
    auto ok = [](const auto& m) { return m.allFinite(); };
    return std::all_of(layer_weights.begin(), layer_weights.end(), ok) && ok(mlp_hidden_w) &&
           ok(mlp_hidden_b) && ok(mlp_out_w) && std::isfinite(mlp_out_b);
  }

  bool operator==(const SageParams& o) const {
    if (layer_weights.size() != o.layer_weights.size()) return false;
    for (std::size_t l = 0; l < layer_weights.size(); ++l)
      if (layer_weights[l] != o.layer_weights[l]) return false;
    return input_dim == o.input_dim && mlp_hidden_w == o.mlp_hidden_w && mlp_hidden_b == o.mlp_hidden_b &&
           mlp_out_w == o.mlp_out_w && mlp_out_b == o.mlp_out_b;
  }
};

/// Index-based view of a graph: users first (sorted), then items (sorted).
struct GraphView {
  std::vector<std::string> names;
  std::size_t n_users = 0;
  std::vector<std::vector<int>> adj;
  std::unordered_map<std::string, int> user_index;
  std::unordered_map<std::string, int> item_index;
  std::vector<std::pair<int, int>> edges;  // (user, item) node indices

  std::size_t size() const { return names.size(); }
  std::size_t n_items() const { return names.size() - n_users; }
};

inline GraphView make_view(const InteractionGraph& g) {
  GraphView v;
  v.n_users = g.users().size();
  for (const auto& u : g.users()) {
    v.user_index[u] = static_cast<int>(v.names.size());
    v.names.push_back(u);
  }
  for (const auto& i : g.items()) {
    v.item_index[i] = static_cast<int>(v.names.size());
    v.names.push_back(i);
  }
  v.adj.resize(v.names.size());
  for (const auto& u : g.users())
    for (const auto& i : g.user_neighbors(u)) v.adj[v.user_index[u]].push_back(v.item_index[i]);
  for (const auto& i : g.items())
    for (const auto& u : g.item_neighbors(i)) v.adj[v.item_index[i]].push_back(v.user_index[u]);
  for (const auto& [u, i] : g.edges()) v.edges.emplace_back(v.user_index[u], v.item_index[i]);
  return v;
}

inline Mat feature_matrix(const GraphView& v, const FeatureTable& f) {
  Mat h(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(f.dimension));
  for (std::size_t n = 0; n < v.size(); ++n) {
    const auto& table = n < v.n_users ? f.users : f.items;
    auto it = table.find(v.names[n]);
    if (it == table.end()) throw ConfigError("no feature for node '" + v.names[n] + "'");
    if (it->second.size() != f.dimension) throw ConfigError("feature of '" + v.names[n] + "' has wrong dimension");
    for (std::size_t k = 0; k < f.dimension; ++k) h(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = it->second[k];
  }
  return h;
}

inline Mat mean_aggregate(const GraphView& v, const Mat& h) {
  Mat m = Mat::Zero(h.rows(), h.cols());
  for (std::size_t n = 0; n < v.size(); ++n) {
    const auto& nb = v.adj[n];
    if (nb.empty()) continue;
    for (int u : nb) m.row(static_cast<Eigen::Index>(n)) += h.row(u);
    m.row(static_cast<Eigen::Index>(n)) /= static_cast<double>(nb.size());
  }
  return m;
}

inline Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

struct ForwardCache {
  std::vector<Mat> inputs;  // l: [H_{l-1} || M_{l-1}], N x 2*in
  std::vector<Mat> pre;     // l: pre-activation, N x out
  Mat z;
};

inline void check_shapes(const SageParams& p, std::size_t feature_dim) {
  if (feature_dim != p.input_dim)
    throw ConfigError("feature dimension " + std::to_string(feature_dim) + " does not match params input " +
                      std::to_string(p.input_dim));
  auto in = static_cast<Eigen::Index>(p.input_dim);
  for (const auto& w : p.layer_weights) {
    if (w.cols() != 2 * in) throw ConfigError("layer weight shape does not chain");
    in = w.rows();
  }
  if (p.mlp_hidden_w.cols() != 2 * in || p.mlp_hidden_b.size() != p.mlp_hidden_w.rows() ||
      p.mlp_out_w.size() != p.mlp_hidden_w.rows())
    throw ConfigError("decoder shape does not match encoder output");
}

inline ForwardCache sage_forward_cached(const GraphView& v, const Mat& h0, const SageParams& p) {
  check_shapes(p, static_cast<std::size_t>(h0.cols()));
  if (static_cast<std::size_t>(h0.rows()) != v.size()) throw ConfigError("feature rows do not match node count");
  ForwardCache c;
  Mat h = h0;
  for (const auto& w : p.layer_weights) {
    Mat x(h.rows(), 2 * h.cols());
    x << h, mean_aggregate(v, h);
    Mat pre = x * w.transpose();
    h = relu(pre);
    c.inputs.push_back(std::move(x));
    c.pre.push_back(std::move(pre));
  }
  c.z = std::move(h);
  return c;
}

/// Final embeddings z_v, one row per node of the view.
inline Mat sage_forward(const GraphView& v, const Mat& h0, const SageParams& p) {
  return sage_forward_cached(v, h0, p).z;
}

inline std::map<std::string, Embedding> sage_forward(const InteractionGraph& g, const FeatureTable& f,
                                                     const SageParams& p) {
  auto v = make_view(g);
  Mat z = sage_forward(v, feature_matrix(v, f), p);
  std::map<std::string, Embedding> out;
  for (std::size_t n = 0; n < v.size(); ++n) {
    Embedding e(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index k = 0; k < z.cols(); ++k) e[static_cast<std::size_t>(k)] = z(static_cast<Eigen::Index>(n), k);
    out[v.names[n]] = std::move(e);
  }
  return out;
}

/// Embedding of a node with no neighbours (its aggregate is zero at every layer).
inline Vec embed_isolated(const SageParams& p, const Vec& h0) {
  check_shapes(p, static_cast<std::size_t>(h0.size()));
  Vec h = h0;
  for (const auto& w : p.layer_weights) {
    Vec x(2 * h.size());
    x << h, Vec::Zero(h.size());
    h = (w * x).cwiseMax(0.0);
  }
  return h;
}

inline double sigmoid_unclamped(double s) {
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

// Clamped so reported probabilities stay strictly inside (0, 1).
inline double sigmoid(double s) {
  return std::clamp(sigmoid_unclamped(s), std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

struct PairScore {
  double score = 0.0;
  double probability = 0.5;
};

template <typename A, typename B>
PairScore score_pair(const Eigen::MatrixBase<A>& z_u, const Eigen::MatrixBase<B>& z_i, const SageParams& p) {
  const auto d = z_u.size();
  Vec x(2 * d);
  x << z_u, z_i;
  Vec hidden = (p.mlp_hidden_w * x + p.mlp_hidden_b).cwiseMax(0.0);
  double s = p.mlp_out_w.dot(hidden) + p.mlp_out_b;
  return {s, sigmoid(s)};
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// -sum log sigmoid(s+) - sum log(1 - sigmoid(s-)), evaluated via softplus.
inline double bce_loss(const std::vector<double>& positive, const std::vector<double>& negative) {
  double loss = 0.0;
  for (double s : positive) loss += softplus(-s);
  for (double s : negative) loss += softplus(s);
  return loss;
}

using NodePair = std::pair<int, int>;

inline std::vector<NodePair> sample_negative_pairs(const GraphView& v, std::size_t count, std::mt19937_64& rng) {
  const std::size_t n_items = v.n_items();
  const std::size_t total = v.n_users * n_items;
  const std::size_t free = total - v.edges.size();
  if (count > free)
    throw ImpossibleRequestError("requested " + std::to_string(count) + " negatives but only " +
                                 std::to_string(free) + " non-edges exist");
  std::set<NodePair> positive(v.edges.begin(), v.edges.end());
  std::vector<NodePair> out;
  out.reserve(count);
  if (count == 0) return out;
  auto user_at = [&](std::size_t k) { return static_cast<int>(k); };
  auto item_at = [&](std::size_t k) { return static_cast<int>(v.n_users + k); };
  if (2 * count > free) {
    // Dense request: enumerate the non-edges and draw a partial shuffle.
    std::vector<NodePair> pool;
    pool.reserve(free);
    for (std::size_t a = 0; a < v.n_users; ++a)
      for (std::size_t b = 0; b < n_items; ++b)
        if (!positive.count({user_at(a), item_at(b)})) pool.emplace_back(user_at(a), item_at(b));
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      out.push_back(pool[k]);
    }
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick_user(0, v.n_users - 1);
  std::uniform_int_distribution<std::size_t> pick_item(0, n_items - 1);
  std::set<NodePair> taken;
  while (out.size() < count) {
    NodePair c{user_at(pick_user(rng)), item_at(pick_item(rng))};
    if (positive.count(c) || taken.count(c)) continue;
    taken.insert(c);
    out.push_back(c);
  }
  return out;
}

/// `count` distinct uniformly drawn (user, item) pairs that are not edges.
inline std::vector<InteractionGraph::Edge> sample_negatives(const InteractionGraph& g, std::size_t count,
                                                            std::uint64_t seed) {
  auto v = make_view(g);
  std::mt19937_64 rng(seed);
  std::vector<InteractionGraph::Edge> out;
  for (auto [u, i] : sample_negative_pairs(v, count, rng)) out.emplace_back(v.names[u], v.names[i]);
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  SageParams grad;
};

/// BCE over the given positive and negative pairs, with gradients of every
/// tensor derived by hand for this architecture.
inline LossAndGrad loss_and_gradients(const GraphView& v, const Mat& h0, const SageParams& p,
                                      const std::vector<NodePair>& positives,
                                      const std::vector<NodePair>& negatives) {
  auto cache = sage_forward_cached(v, h0, p);
  const Mat& z = cache.z;
  const auto d = z.cols();
  LossAndGrad out{0.0, p.zeros_like()};
  auto& g = out.grad;
  Mat dz = Mat::Zero(z.rows(), z.cols());

  auto visit = [&](const NodePair& pr, double label) {
    Vec x(2 * d);
    x << z.row(pr.first).transpose(), z.row(pr.second).transpose();
    Vec pre = p.mlp_hidden_w * x + p.mlp_hidden_b;
    Vec hidden = pre.cwiseMax(0.0);
    double s = p.mlp_out_w.dot(hidden) + p.mlp_out_b;
    out.loss += label > 0.5 ? softplus(-s) : softplus(s);
    double ds = sigmoid_unclamped(s) - label;
    g.mlp_out_w += ds * hidden;
    g.mlp_out_b += ds;
    Vec dpre = (ds * p.mlp_out_w).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    g.mlp_hidden_w += dpre * x.transpose();
    g.mlp_hidden_b += dpre;
    Vec dx = p.mlp_hidden_w.transpose() * dpre;
    dz.row(pr.first) += dx.head(d).transpose();
    dz.row(pr.second) += dx.tail(d).transpose();
  };
  for (const auto& pr : positives) visit(pr, 1.0);
  for (const auto& pr : negatives) visit(pr, 0.0);

  Mat dh = std::move(dz);
  for (std::size_t l = p.layer_weights.size(); l-- > 0;) {
    const Mat& w = p.layer_weights[l];
    Mat dpre = dh.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    g.layer_weights[l] = dpre.transpose() * cache.inputs[l];
    if (l == 0) break;  // h0 is not trainable
    Mat dx = dpre * w;
    const auto in = dx.cols() / 2;
    Mat dprev = dx.leftCols(in);
    // Mean aggregation transpose: m_v = sum_{u in N(v)} h_u / |N(v)|.
    for (std::size_t n = 0; n < v.size(); ++n) {
      const auto& nb = v.adj[n];
      if (nb.empty()) continue;
      const double inv = 1.0 / static_cast<double>(nb.size());
      for (int u : nb) dprev.row(u) += inv * dx.row(static_cast<Eigen::Index>(n)).tail(in);
    }
    dh = std::move(dprev);
  }
  return out;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
};

inline SageParams init_params(std::size_t input_dim, const TrainConfig& cfg, std::mt19937_64& rng) {
  SageParams p;
  p.input_dim = input_dim;
  p.config = cfg;
  const auto hidden = static_cast<Eigen::Index>(cfg.hidden_dim > 0 ? cfg.hidden_dim : static_cast<int>(input_dim));
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Mat m(rows, cols);
    // Row-major draw order so the stream layout does not depend on Eigen storage.
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    return m;
  };
  auto in = static_cast<Eigen::Index>(input_dim);
  for (int l = 0; l < cfg.layers; ++l) {
    p.layer_weights.push_back(glorot(hidden, 2 * in));
    in = hidden;
  }
  p.mlp_hidden_w = glorot(hidden, 2 * in);
  p.mlp_hidden_b = Vec::Zero(hidden);
  Mat out = glorot(1, hidden);
  p.mlp_out_w = out.row(0).transpose();
  p.mlp_out_b = 0.0;
  return p;
}

struct TrainResult {
  SageParams params;
  std::vector<EpochLog> log;
};

/// Full-batch training. All randomness (initialization, then per-epoch
/// negatives) comes from one stream seeded with cfg.seed.
inline TrainResult train(const InteractionGraph& g, const FeatureTable& f, const TrainConfig& cfg) {
  if (g.edge_count() == 0) throw ConfigError("cannot train on a graph without edges");
  auto v = make_view(g);
  Mat h0 = feature_matrix(v, f);
  std::mt19937_64 rng(cfg.seed);
  TrainResult r{init_params(f.dimension, cfg, rng), {}};
  auto& p = r.params;

  std::vector<double> m, s;
  std::vector<std::size_t> offsets;
  {
    std::size_t total = 0;
    p.for_each_tensor([&](double*, std::size_t n) {
      offsets.push_back(total);
      total += n;
    });
    m.assign(total, 0.0);
    s.assign(total, 0.0);
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  const std::size_t n_neg = v.edges.size() * static_cast<std::size_t>(cfg.negative_ratio);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto negatives = sample_negative_pairs(v, n_neg, rng);
    auto lg = loss_and_gradients(v, h0, p, v.edges, negatives);
    if (!std::isfinite(lg.loss) || !lg.grad.all_finite())
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (loss " +
                         std::to_string(lg.loss) + ")");
    r.log.push_back({epoch, lg.loss});

    std::vector<const double*> grads;
    lg.grad.for_each_tensor([&](double* gp, std::size_t) { grads.push_back(gp); });
    std::size_t t = 0;
    const double bc1 = 1.0 - std::pow(beta1, epoch);
    const double bc2 = 1.0 - std::pow(beta2, epoch);
    p.for_each_tensor([&](double* w, std::size_t n) {
      const double* gr = grads[t];
      const std::size_t off = offsets[t++];
      for (std::size_t k = 0; k < n; ++k) {
        if (cfg.optimizer == OptimizerKind::sgd) {
          w[k] -= cfg.learning_rate * gr[k];
          continue;
        }
        m[off + k] = beta1 * m[off + k] + (1 - beta1) * gr[k];
        s[off + k] = beta2 * s[off + k] + (1 - beta2) * gr[k] * gr[k];
        w[k] -= cfg.learning_rate * (m[off + k] / bc1) / (std::sqrt(s[off + k] / bc2) + eps);
      }
    });
    if (!p.all_finite()) throw NumericError("parameters became non-finite at epoch " + std::to_string(epoch));
  }
  return r;
}

struct RankedItem {
  std::string item_id;
  double score = 0.0;
  double probability = 0.5;
};

struct RankingResult {
  std::string user_id;
  std::vector<RankedItem> ranked_items;
};

inline void sort_ranking(std::vector<RankedItem>& items) {
  std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  });
}

/// Precomputed embeddings for ranking and similarity queries.
struct EmbeddedGraph {
  GraphView view;
  Mat z;

  Vec user_z(const std::string& u) const {
    auto it = view.user_index.find(u);
    if (it == view.user_index.end()) throw NotFoundError("unknown user '" + u + "'");
    return z.row(it->second).transpose();
  }

  Vec item_z(const std::string& i) const {
    auto it = view.item_index.find(i);
    if (it == view.item_index.end()) throw NotFoundError("unknown item '" + i + "'");
    return z.row(it->second).transpose();
  }

  std::map<std::string, Embedding> user_map() const {
    std::map<std::string, Embedding> out;
    for (std::size_t n = 0; n < view.n_users; ++n) {
      Embedding e(static_cast<std::size_t>(z.cols()));
      for (Eigen::Index k = 0; k < z.cols(); ++k) e[static_cast<std::size_t>(k)] = z(static_cast<Eigen::Index>(n), k);
      out[view.names[n]] = std::move(e);
    }
    return out;
  }
};

inline EmbeddedGraph embed_graph(const InteractionGraph& g, const FeatureTable& f, const SageParams& p) {
  EmbeddedGraph eg{make_view(g), {}};
  eg.z = sage_forward(eg.view, feature_matrix(eg.view, f), p);
  return eg;
}

/// Scores every item of the embedded graph not in `exclude` against z_u.
inline std::vector<RankedItem> rank_items_for(const EmbeddedGraph& eg, const Vec& z_u, const SageParams& p,
                                              const std::set<std::string>& exclude) {
  std::vector<RankedItem> out;
  for (std::size_t n = eg.view.n_users; n < eg.view.size(); ++n) {
    const auto& item = eg.view.names[n];
    if (exclude.count(item)) continue;
    auto sc = score_pair(z_u, eg.z.row(static_cast<Eigen::Index>(n)).transpose(), p);
    out.push_back({item, sc.score, sc.probability});
  }
  sort_ranking(out);
  return out;
}

inline RankingResult rank_candidates(const EmbeddedGraph& eg, const InteractionGraph& g, const SageParams& p,
                                     const std::string& user_id) {
  const auto& linked = g.user_neighbors(user_id);
  std::set<std::string> exclude(linked.begin(), linked.end());
  return {user_id, rank_items_for(eg, eg.user_z(user_id), p, exclude)};
}

inline RankingResult rank_candidates(const InteractionGraph& g, const SageParams& p, const FeatureTable& f,
                                     const std::string& user_id) {
  return rank_candidates(embed_graph(g, f, p), g, p, user_id);
}

struct LpMetrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits5 = 0.0;
  double hits10 = 0.0;
  std::size_t users = 0;
};

/// Rank of the best-placed gold item (1-based), 0 when none is ranked.
inline std::size_t best_gold_rank(const RankingResult& r, const std::set<std::string>& gold) {
  for (std::size_t k = 0; k < r.ranked_items.size(); ++k)
    if (gold.count(r.ranked_items[k].item_id)) return k + 1;
  return 0;
}

inline LpMetrics lp_metrics(const std::vector<RankingResult>& rankings,
                            const std::map<std::string, std::set<std::string>>& gold) {
  if (rankings.empty()) throw Error("empty evaluation set");
  LpMetrics m;
  for (const auto& r : rankings) {
    auto it = gold.find(r.user_id);
    if (it == gold.end() || it->second.empty())
      throw ConfigError("user '" + r.user_id + "' has no held-out gold item");
    auto rank = best_gold_rank(r, it->second);
    if (rank == 0) continue;
    m.mrr += 1.0 / static_cast<double>(rank);
    m.hits1 += rank <= 1;
    m.hits5 += rank <= 5;
    m.hits10 += rank <= 10;
  }
  const auto n = static_cast<double>(rankings.size());
  m.users = rankings.size();
  m.mrr /= n;
  m.hits1 /= n;
  m.hits5 /= n;
  m.hits10 /= n;
  return m;
}

struct ScoredExample {
  std::string id;
  double score = 0.0;
};

struct ConfidenceSplit {
  std::vector<std::string> top_half;
  std::vector<std::string> bottom_half;
};

// Sorted by (score, id); the lower floor(n/2) form the bottom half, so a
// single example and the middle of an odd count land in the top half.
inline ConfidenceSplit confidence_split(std::vector<ScoredExample> xs) {
  std::sort(xs.begin(), xs.end(), [](const ScoredExample& a, const ScoredExample& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });
  ConfidenceSplit out;
  const std::size_t half = xs.size() / 2;
  for (std::size_t k = 0; k < xs.size(); ++k) (k < half ? out.bottom_half : out.top_half).push_back(xs[k].id);
  return out;
}

// Persistence.

inline constexpr int kParamsFormatVersion = 1;

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw ParseError("ragged matrix in params");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace detail

inline nlohmann::json params_to_json(const SageParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& w : p.layer_weights) layers.push_back(detail::mat_to_json(w));
  return {{"format", "spgen-sage-params"},
          {"format_version", kParamsFormatVersion},
          {"input_dim", p.input_dim},
          {"output_dim", p.output_dim()},
          {"config", to_json(p.config)},
          {"layer_weights", layers},
          {"mlp_hidden_w", detail::mat_to_json(p.mlp_hidden_w)},
          {"mlp_hidden_b", std::vector<double>(p.mlp_hidden_b.data(), p.mlp_hidden_b.data() + p.mlp_hidden_b.size())},
          {"mlp_out_w", std::vector<double>(p.mlp_out_w.data(), p.mlp_out_w.data() + p.mlp_out_w.size())},
          {"mlp_out_b", p.mlp_out_b}};
}

inline SageParams params_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "spgen-sage-params") throw ParseError("not a params file");
  if (j.value("format_version", 0) != kParamsFormatVersion) throw ParseError("unsupported params format version");
  SageParams p;
  p.input_dim = j.at("input_dim").get<std::size_t>();
  p.config = train_config_from_json(j.at("config"));
  for (const auto& w : j.at("layer_weights")) p.layer_weights.push_back(detail::mat_from_json(w));
  p.mlp_hidden_w = detail::mat_from_json(j.at("mlp_hidden_w"));
  auto b = j.at("mlp_hidden_b").get<std::vector<double>>();
  p.mlp_hidden_b = Eigen::Map<Vec>(b.data(), static_cast<Eigen::Index>(b.size()));
  auto w2 = j.at("mlp_out_w").get<std::vector<double>>();
  p.mlp_out_w = Eigen::Map<Vec>(w2.data(), static_cast<Eigen::Index>(w2.size()));
  p.mlp_out_b = j.at("mlp_out_b").get<double>();
  check_shapes(p, p.input_dim);
  if (!p.all_finite()) throw ParseError("params contain non-finite values");
  return p;
}

inline void save_params_file(const SageParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << params_to_json(p).dump() << '\n';
}

inline SageParams load_params_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("params file is not JSON: ") + e.what());
  }
  return params_from_json(j);
}

inline void write_train_log(const std::vector<EpochLog>& log, std::ostream& out) {
  for (const auto& e : log) out << nlohmann::json{{"epoch", e.epoch}, {"loss", e.loss}}.dump() << '\n';
}

}  // namespace spgen
