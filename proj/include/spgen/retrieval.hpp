#pragma once

// Peer-text retrieval (Okapi BM25) and similar-user lookup (cosine over node
// embeddings).

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spgen/common.hpp"
#include "spgen/encoder.hpp"

namespace spgen {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Document {
  std::string id;
  std::string text;
};

class Bm25Index {
 public:
  explicit Bm25Index(std::vector<Document> docs, Bm25Params params = {}) : params_(params) {
    double total = 0.0;
    for (auto& d : docs) {
      if (doc_pos_.count(d.id)) throw ConfigError("duplicate document id '" + d.id + "'");
      doc_pos_[d.id] = docs_.size();
      Entry e;
      e.id = d.id;
      e.text = std::move(d.text);
      auto toks = tokenize(e.text);
      e.length = toks.size();
      for (auto& t : toks) ++e.tf[t];
      for (const auto& [t, _] : e.tf) ++df_[t];
      total += static_cast<double>(e.length);
      docs_.push_back(std::move(e));
    }
    avg_len_ = docs_.empty() ? 0.0 : total / static_cast<double>(docs_.size());
  }

  std::size_t size() const { return docs_.size(); }
  double average_length() const { return avg_len_; }
  const Bm25Params& params() const { return params_; }

  std::size_t document_frequency(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
  }

  // ln(1 + (N - n + 0.5) / (n + 0.5))
  double idf(const std::string& term) const {
    const double n = static_cast<double>(document_frequency(term));
    const double big_n = static_cast<double>(docs_.size());
    return std::log(1.0 + (big_n - n + 0.5) / (n + 0.5));
  }

  /// Sum over query tokens (each occurrence counted) of
  /// idf * tf (k1 + 1) / (tf + k1 (1 - b + b len / avglen)).
  double score(const std::string& query, const std::string& doc_id) const {
    auto it = doc_pos_.find(doc_id);
    if (it == doc_pos_.end()) throw NotFoundError("unknown document '" + doc_id + "'");
    const Entry& d = docs_[it->second];
    const double norm = avg_len_ > 0 ? static_cast<double>(d.length) / avg_len_ : 0.0;
    double s = 0.0;
    for (const auto& term : tokenize(query)) {
      auto tf_it = d.tf.find(term);
      if (tf_it == d.tf.end()) continue;
      const double tf = static_cast<double>(tf_it->second);
      s += idf(term) * tf * (params_.k1 + 1.0) / (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
    }
    return s;
  }

  struct Hit {
    std::string id;
    std::string text;
    double score = 0.0;
  };

  /// Top-k by score, ties by document id ascending.
  std::vector<Hit> top_k(const std::string& query, std::size_t k) const {
    std::vector<Hit> hits;
    hits.reserve(docs_.size());
    for (const auto& d : docs_) hits.push_back({d.id, d.text, score(query, d.id)});
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.id < b.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
  }

 private:
  struct Entry {
    std::string id;
    std::string text;
    std::size_t length = 0;
    std::map<std::string, std::size_t> tf;
  };

  Bm25Params params_;
  std::vector<Entry> docs_;
  std::unordered_map<std::string, std::size_t> doc_pos_;
  std::unordered_map<std::string, std::size_t> df_;
  double avg_len_ = 0.0;
};

inline double bm25_score(const Bm25Index& index, const std::string& query, const std::string& doc_id) {
  return index.score(query, doc_id);
}

inline constexpr std::size_t kDefaultPeerTexts = 4;
inline constexpr std::size_t kDefaultSimilarUsers = 3;

struct PeerText {
  std::string doc_id;
  std::string text;
  double score = 0.0;
};

struct PeerContext {
  std::string item_id;
  std::vector<PeerText> texts;
};

inline PeerContext peer_texts(const std::string& item_id, std::vector<Document> item_reviews,
                              const std::string& query, std::size_t k_peer = kDefaultPeerTexts) {
  Bm25Index index(std::move(item_reviews));
  PeerContext ctx{item_id, {}};
  for (auto& h : index.top_k(query, k_peer)) ctx.texts.push_back({h.id, h.text, h.score});
  return ctx;
}

inline double cosine(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw ConfigError("cosine of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct SimilarUser {
  std::string user_id;
  double similarity = 0.0;
};

/// Top-k users by cosine to `target` (excluding `self`), ties by user id.
inline std::vector<SimilarUser> similar_users_to(const std::map<std::string, Embedding>& z_users,
                                                 const Embedding& target, const std::string& self,
                                                 std::size_t k_sim = kDefaultSimilarUsers) {
  std::vector<SimilarUser> out;
  for (const auto& [u, z] : z_users)
    if (u != self) out.push_back({u, cosine(target, z)});
  std::sort(out.begin(), out.end(), [](const SimilarUser& a, const SimilarUser& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.user_id < b.user_id;
  });
  if (out.size() > k_sim) out.resize(k_sim);
  return out;
}

inline std::vector<std::string> similar_users(const std::map<std::string, Embedding>& z_users,
                                              const std::string& user_id,
                                              std::size_t k_sim = kDefaultSimilarUsers) {
  auto it = z_users.find(user_id);
  if (it == z_users.end()) throw NotFoundError("user '" + user_id + "' has no embedding");
  std::vector<std::string> ids;
  for (auto& s : similar_users_to(z_users, it->second, user_id, k_sim)) ids.push_back(s.user_id);
  return ids;
}

}  // namespace spgen
