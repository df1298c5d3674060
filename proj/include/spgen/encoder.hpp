#pragma once

// Initial node features. The builtin backend hashes character trigrams into
// d buckets; the external backend calls an embeddings service.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgen/common.hpp"
#include "spgen/corpus.hpp"

namespace spgen {

using Embedding = std::vector<double>;

inline double l2_norm(const Embedding& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void normalize_in_place(Embedding& v) {
  double n = l2_norm(v);
  if (n == 0.0 || !std::isfinite(n)) throw NumericError("cannot normalize a zero or non-finite vector");
  for (double& x : v) x /= n;
}

enum class EncoderKind { builtin_hashed_ngrams, external_service };

struct EncoderHandle {
  EncoderKind kind = EncoderKind::builtin_hashed_ngrams;
  std::size_t dimension = 64;
  std::optional<std::string> endpoint;
  std::optional<std::string> model_name;
};

/// Text -> unit vector. Implementations must be deterministic for a fixed
/// handle and text, and always emit `dimension()` entries.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dimension() const = 0;
  virtual Embedding encode(const std::string& text) const = 0;
};

inline constexpr std::size_t kNgram = 3;

/// Counts of lowercase character trigrams hashed (FNV-1a) into `dimension`
/// buckets, then L2-normalized. Strings shorter than three bytes hash whole.
class HashedNgramEncoder final : public TextEncoder {
 public:
  explicit HashedNgramEncoder(std::size_t dimension = 64) : dim_(dimension) {
    if (dim_ == 0) throw ConfigError("encoder dimension must be positive");
  }

  std::size_t dimension() const override { return dim_; }

  Embedding encode(const std::string& text) const override {
    std::string t = to_lower_ascii(trim(text));
    if (t.empty()) throw Error("cannot encode empty text");
    Embedding v(dim_, 0.0);
    if (t.size() < kNgram) {
      v[fnv1a64(t) % dim_] += 1.0;
    } else {
      for (std::size_t i = 0; i + kNgram <= t.size(); ++i)
        v[fnv1a64(std::string_view(t).substr(i, kNgram)) % dim_] += 1.0;
    }
    normalize_in_place(v);
    return v;
  }

 private:
  std::size_t dim_;
};

inline Embedding encode_text(const TextEncoder& enc, const std::string& text) {
  if (trim(text).empty()) throw Error("cannot encode empty text");
  return enc.encode(text);
}

/// Embedding of the profile's texts joined with single spaces, in profile order.
inline Embedding user_feature(const TextEncoder& enc, const UserProfile& profile) {
  if (profile.entries.empty()) throw Error("user '" + profile.user_id + "' has an empty profile");
  std::vector<std::string> texts;
  for (const auto& e : profile.entries) texts.push_back(e.text);
  return encode_text(enc, join(texts, " "));
}

inline Embedding normalized_mean(const std::vector<Embedding>& vs) {
  if (vs.empty()) throw Error("cannot pool an empty set of embeddings");
  Embedding acc(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    if (v.size() != acc.size()) throw ConfigError("embedding dimensions differ");
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  }
  for (double& x : acc) x /= static_cast<double>(vs.size());
  normalize_in_place(acc);
  return acc;
}

/// Normalized mean of per-text embeddings. Texts are pooled in sorted order
/// so the result is bit-identical under any permutation of the input.
inline Embedding item_feature(const TextEncoder& enc, std::vector<std::string> texts) {
  if (texts.empty()) throw Error("item has no texts");
  std::sort(texts.begin(), texts.end());
  std::vector<Embedding> es;
  es.reserve(texts.size());
  for (const auto& t : texts) es.push_back(encode_text(enc, t));
  return normalized_mean(es);
}

/// h^(0) for every node of the graph.
struct FeatureTable {
  std::size_t dimension = 0;
  std::map<std::string, Embedding> users;
  std::map<std::string, Embedding> items;
};

inline FeatureTable build_features(const TextEncoder& enc, const InteractionGraph& g) {
  FeatureTable f;
  f.dimension = enc.dimension();
  for (const auto& u : g.users()) f.users[u] = user_feature(enc, profile_of(g, u));
  for (const auto& i : g.items()) {
    std::vector<std::string> texts;
    for (const auto& x : g.item_interactions(i)) texts.push_back(x.text);
    f.items[i] = item_feature(enc, std::move(texts));
  }
  return f;
}

}  // namespace spgen
