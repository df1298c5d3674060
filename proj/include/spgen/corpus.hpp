#pragma once

// Interaction records, the bipartite user-item graph built from them, user
// profiles and sparsity statistics.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgen/common.hpp"

namespace spgen {

using json = nlohmann::json;

enum class Split { train, validation, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::string title;
  std::string text;
  int rating = 3;
  std::optional<std::int64_t> timestamp;
  Split split = Split::train;

  bool operator==(const Interaction&) const = default;
};

inline json to_json(const Interaction& x) {
  json j;
  j["user_id"] = x.user_id;
  j["item_id"] = x.item_id;
  j["title"] = x.title;
  j["text"] = x.text;
  j["rating"] = x.rating;
  if (x.timestamp) j["timestamp"] = *x.timestamp;
  j["split"] = to_string(x.split);
  return j;
}

inline std::string to_json_line(const Interaction& x) { return to_json(x).dump(); }

namespace detail {

inline const json& require_field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'", line);
  return *it;
}

inline std::string require_string(const json& j, const char* key, std::size_t line) {
  const auto& v = require_field(j, key, line);
  if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line);
  return v.get<std::string>();
}

}  // namespace detail

// Parses one record. `line` is only used for error messages.
inline Interaction interaction_from_json(const json& j, std::size_t line = 0) {
  if (!j.is_object()) throw ParseError("record is not an object", line);
  Interaction x;
  x.user_id = detail::require_string(j, "user_id", line);
  x.item_id = detail::require_string(j, "item_id", line);
  x.text = detail::require_string(j, "text", line);
  if (auto it = j.find("title"); it != j.end()) {
    if (!it->is_string()) throw ParseError("field 'title' must be a string", line);
    x.title = it->get<std::string>();
  }
  const auto& r = detail::require_field(j, "rating", line);
  if (!r.is_number_integer() && !r.is_number_unsigned())
    throw ValidationError("rating must be an integer in 1..5", line);
  auto rating = r.get<std::int64_t>();
  if (rating < 1 || rating > 5)
    throw ValidationError("rating " + std::to_string(rating) + " outside 1..5", line);
  x.rating = static_cast<int>(rating);
  if (auto it = j.find("timestamp"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() && !it->is_number_unsigned())
      throw ParseError("timestamp must be an integer", line);
    x.timestamp = it->get<std::int64_t>();
  }
  auto split = parse_split(detail::require_string(j, "split", line));
  if (!split) throw ValidationError("split must be one of train, validation, test", line);
  x.split = *split;
  if (x.user_id.empty()) throw ValidationError("empty user_id", line);
  if (x.item_id.empty()) throw ValidationError("empty item_id", line);
  return x;
}

/// Reads line-delimited JSON records. Blank lines are ignored; every other
/// line must be a complete record. Duplicates are preserved in input order.
inline std::vector<Interaction> ingest_interactions(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), lineno);
    }
    out.push_back(interaction_from_json(j, lineno));
  }
  return out;
}

inline std::vector<Interaction> ingest_interactions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  return ingest_interactions(in);
}

inline void write_interactions(std::ostream& out, const std::vector<Interaction>& xs) {
  for (const auto& x : xs) out << to_json_line(x) << '\n';
}

struct UserProfile {
  std::string user_id;
  std::vector<Interaction> entries;
};

struct DegreeStats {
  double avg_user_degree = 0.0;
  double avg_item_degree = 0.0;
  std::map<std::size_t, std::size_t> histogram;       // user degree -> #users
  std::map<std::size_t, std::size_t> item_histogram;  // item degree -> #items
};

enum class SparsityBucket { zero, one, two_plus };

inline const char* to_string(SparsityBucket b) {
  switch (b) {
    case SparsityBucket::zero: return "zero";
    case SparsityBucket::one: return "one";
    case SparsityBucket::two_plus: return "two_plus";
  }
  return "zero";
}

inline SparsityBucket bucket_for_count(std::size_t real_entries) {
  if (real_entries == 0) return SparsityBucket::zero;
  if (real_entries == 1) return SparsityBucket::one;
  return SparsityBucket::two_plus;
}

inline SparsityBucket sparsity_bucket(const UserProfile& p) { return bucket_for_count(p.entries.size()); }

/// Immutable bipartite graph. One edge per distinct (user, item) pair; every
/// interaction on the pair stays attached to that edge.
class InteractionGraph {
 public:
  using Edge = std::pair<std::string, std::string>;

  InteractionGraph() = default;

  explicit InteractionGraph(std::vector<Interaction> interactions)
      : interactions_(std::move(interactions)) {
    for (std::size_t k = 0; k < interactions_.size(); ++k) {
      const auto& x = interactions_[k];
      edges_[{x.user_id, x.item_id}].push_back(k);
    }
    for (const auto& [edge, _] : edges_) {
      user_adj_[edge.first].push_back(edge.second);
      item_adj_[edge.second].push_back(edge.first);
    }
    for (auto& [u, adj] : user_adj_) {
      std::sort(adj.begin(), adj.end());
      users_.push_back(u);
    }
    for (auto& [i, adj] : item_adj_) {
      std::sort(adj.begin(), adj.end());
      items_.push_back(i);
    }
  }

  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }
  std::size_t edge_count() const { return edges_.size(); }
  std::size_t node_count() const { return users_.size() + items_.size(); }

  bool has_user(const std::string& u) const { return user_adj_.count(u) != 0; }
  bool has_item(const std::string& i) const { return item_adj_.count(i) != 0; }
  bool has_edge(const std::string& u, const std::string& i) const { return edges_.count({u, i}) != 0; }

  const std::vector<std::string>& user_neighbors(const std::string& u) const {
    auto it = user_adj_.find(u);
    if (it == user_adj_.end()) throw NotFoundError("unknown user '" + u + "'");
    return it->second;
  }

  const std::vector<std::string>& item_neighbors(const std::string& i) const {
    auto it = item_adj_.find(i);
    if (it == item_adj_.end()) throw NotFoundError("unknown item '" + i + "'");
    return it->second;
  }

  /// Interactions attached to an edge, in input order.
  std::vector<Interaction> edge_interactions(const std::string& u, const std::string& i) const {
    std::vector<Interaction> out;
    auto it = edges_.find({u, i});
    if (it == edges_.end()) return out;
    for (auto k : it->second) out.push_back(interactions_[k]);
    return out;
  }

  /// All interactions on an item, ordered by user id then input order.
  std::vector<Interaction> item_interactions(const std::string& i) const {
    std::vector<Interaction> out;
    auto it = item_adj_.find(i);
    if (it == item_adj_.end()) return out;
    for (const auto& u : it->second)
      for (auto k : edges_.at({u, i})) out.push_back(interactions_[k]);
    return out;
  }

  /// Sorted-by-key edge view.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(edges_.size());
    for (const auto& [e, _] : edges_) out.push_back(e);
    return out;
  }

  /// Copy of this graph with every interaction on (u, i) removed.
  InteractionGraph without_edge(const std::string& u, const std::string& i) const {
    std::vector<Interaction> kept;
    kept.reserve(interactions_.size());
    for (const auto& x : interactions_)
      if (!(x.user_id == u && x.item_id == i)) kept.push_back(x);
    return InteractionGraph(std::move(kept));
  }

  std::vector<std::size_t> user_interaction_indices(const std::string& u) const {
    std::vector<std::size_t> idx;
    auto it = user_adj_.find(u);
    if (it == user_adj_.end()) return idx;
    for (const auto& i : it->second)
      for (auto k : edges_.at({u, i})) idx.push_back(k);
    return idx;
  }

 private:
  std::vector<Interaction> interactions_;
  std::map<Edge, std::vector<std::size_t>> edges_;
  std::map<std::string, std::vector<std::string>> user_adj_;
  std::map<std::string, std::vector<std::string>> item_adj_;
  std::vector<std::string> users_;
  std::vector<std::string> items_;
};

inline InteractionGraph build_graph(std::vector<Interaction> interactions) {
  return InteractionGraph(std::move(interactions));
}

inline std::vector<Interaction> filter_split(const std::vector<Interaction>& xs,
                                             std::initializer_list<Split> keep) {
  std::vector<Interaction> out;
  for (const auto& x : xs)
    if (std::find(keep.begin(), keep.end(), x.split) != keep.end()) out.push_back(x);
  return out;
}

// Timestamped entries first (ascending), untimestamped after, ties by input order.
inline UserProfile profile_of(const InteractionGraph& g, const std::string& user_id) {
  if (!g.has_user(user_id)) throw NotFoundError("unknown user '" + user_id + "'");
  auto idx = g.user_interaction_indices(user_id);
  const auto& all = g.interactions();
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = all[a].timestamp;
    const auto& tb = all[b].timestamp;
    if (ta.has_value() != tb.has_value()) return ta.has_value();
    if (ta && *ta != *tb) return *ta < *tb;
    return a < b;
  });
  UserProfile p{user_id, {}};
  for (auto k : idx) p.entries.push_back(all[k]);
  return p;
}

/// Profile lookup that returns an empty profile for users absent from the graph.
inline UserProfile profile_or_empty(const InteractionGraph& g, const std::string& user_id) {
  if (!g.has_user(user_id)) return UserProfile{user_id, {}};
  return profile_of(g, user_id);
}

inline DegreeStats degree_stats(const InteractionGraph& g) {
  DegreeStats s;
  const auto e = static_cast<double>(g.edge_count());
  if (!g.users().empty()) s.avg_user_degree = e / static_cast<double>(g.users().size());
  if (!g.items().empty()) s.avg_item_degree = e / static_cast<double>(g.items().size());
  for (const auto& u : g.users()) ++s.histogram[g.user_neighbors(u).size()];
  for (const auto& i : g.items()) ++s.item_histogram[g.item_neighbors(i).size()];
  return s;
}

/// Tab-separated adjacency dump; byte-identical for identical input.
inline std::string serialize_adjacency(const InteractionGraph& g) {
  std::ostringstream out;
  for (const auto& u : g.users()) out << "U\t" << u << '\t' << join(g.user_neighbors(u), ",") << '\n';
  for (const auto& i : g.items()) out << "I\t" << i << '\t' << join(g.item_neighbors(i), ",") << '\n';
  return out.str();
}

// Graph container: a JSON header line followed by one interaction per line.
inline constexpr int kGraphFormatVersion = 1;

inline void save_graph(const InteractionGraph& g, std::ostream& out) {
  json header{{"format", "spgen-graph"},
              {"format_version", kGraphFormatVersion},
              {"interactions", g.interactions().size()},
              {"users", g.users().size()},
              {"items", g.items().size()},
              {"edges", g.edge_count()}};
  out << header.dump() << '\n';
  write_interactions(out, g.interactions());
}

inline InteractionGraph load_graph(std::istream& in) {
  std::string first;
  if (!std::getline(in, first)) throw ParseError("empty graph container");
  json header;
  try {
    header = json::parse(first);
  } catch (const json::parse_error&) {
    throw ParseError("graph container header is not JSON", 1);
  }
  if (header.value("format", "") != "spgen-graph") throw ParseError("not a graph container", 1);
  if (header.value("format_version", 0) != kGraphFormatVersion)
    throw ParseError("unsupported graph format version " + header["format_version"].dump(), 1);
  auto xs = ingest_interactions(in);
  if (header.contains("interactions") && header["interactions"].get<std::size_t>() != xs.size())
    throw ParseError("graph container is truncated");
  return InteractionGraph(std::move(xs));
}

inline void save_graph_file(const InteractionGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  save_graph(g, out);
}

inline InteractionGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  return load_graph(in);
}

}  // namespace spgen
