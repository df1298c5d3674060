#pragma once

// Text and rating metrics: ROUGE-1, ROUGE-L, METEOR (exact-match module),
// RMSE, MAE, and the 1-7 LLM judge.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "spgen/common.hpp"
#include "spgen/llmclient.hpp"

namespace spgen {

struct TextScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double harmonic_f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline TextScore rouge1(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() || ref.empty()) return {};
  std::map<std::string, std::size_t> cc, rc;
  for (const auto& t : cand) ++cc[t];
  for (const auto& t : ref) ++rc[t];
  std::size_t overlap = 0;
  for (const auto& [t, n] : cc) {
    auto it = rc.find(t);
    if (it != rc.end()) overlap += std::min(n, it->second);
  }
  TextScore s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(cand.size());
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

inline TextScore rouge1(const std::string& candidate, const std::string& reference) {
  return rouge1(tokenize(candidate), tokenize(reference));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline TextScore rougeL(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() || ref.empty()) return {};
  const auto lcs = static_cast<double>(lcs_length(cand, ref));
  TextScore s;
  s.precision = lcs / static_cast<double>(cand.size());
  s.recall = lcs / static_cast<double>(ref.size());
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

inline TextScore rougeL(const std::string& candidate, const std::string& reference) {
  return rougeL(tokenize(candidate), tokenize(reference));
}

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  bool exact = true;  // false when the search budget ran out and the greedy tiling was kept
};

namespace detail {

// Greedy tiling: repeatedly link the longest common run of unmatched tokens
// (earliest candidate start, then earliest reference start).
inline std::size_t greedy_chunks(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  std::vector<bool> cu(c.size(), false), ru(r.size(), false);
  std::size_t chunks = 0;
  for (;;) {
    std::size_t best_len = 0, bi = 0, bj = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (cu[i]) continue;
      for (std::size_t j = 0; j < r.size(); ++j) {
        std::size_t len = 0;
        while (i + len < c.size() && j + len < r.size() && !cu[i + len] && !ru[j + len] && c[i + len] == r[j + len])
          ++len;
        if (len > best_len) {
          best_len = len;
          bi = i;
          bj = j;
        }
      }
    }
    if (best_len == 0) return chunks;
    for (std::size_t k = 0; k < best_len; ++k) cu[bi + k] = ru[bj + k] = true;
    ++chunks;
  }
}

// Exact minimum chunk count over maximum-cardinality alignments, by memoized
// search over candidate positions. State: (position, reference position of
// the previous link, used reference positions).
class ChunkSearch {
 public:
  ChunkSearch(const std::vector<std::string>& c, const std::vector<std::string>& r, std::size_t budget)
      : c_(c), r_(r), budget_(budget), used_(r.size(), false) {
    for (const auto& t : c) ++cc_[t];
    for (std::size_t j = 0; j < r.size(); ++j) {
      ++rc_[r[j]];
      ref_positions_[r[j]].push_back(j);
    }
    for (const auto& [t, n] : cc_) {
      auto it = rc_.find(t);
      skips_[t] = it == rc_.end() ? n : n - std::min(n, it->second);
    }
  }

  std::optional<std::size_t> solve() {
    auto v = go(0, -1);
    if (aborted_) return std::nullopt;
    return v;
  }

 private:
  static constexpr std::size_t kInf = static_cast<std::size_t>(-1) / 4;

  std::string key(std::size_t i, long prev) const {
    std::string k = std::to_string(i) + ":" + std::to_string(prev) + ":";
    k.reserve(k.size() + used_.size());
    for (bool b : used_) k.push_back(b ? '1' : '0');
    return k;
  }

  std::size_t go(std::size_t i, long prev) {
    if (aborted_) return kInf;
    if (i == c_.size()) return 0;
    auto k = key(i, prev);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;
    if (memo_.size() >= budget_) {
      aborted_ = true;
      return kInf;
    }
    const auto& w = c_[i];
    std::size_t best = kInf;
    if (skips_[w] > 0) {
      --skips_[w];
      best = go(i + 1, -1);
      ++skips_[w];
    }
    if (auto it = ref_positions_.find(w); it != ref_positions_.end()) {
      for (std::size_t j : it->second) {
        if (used_[j]) continue;
        used_[j] = true;
        std::size_t cost = (prev >= 0 && static_cast<std::size_t>(prev) + 1 == j) ? 0 : 1;
        std::size_t rest = go(i + 1, static_cast<long>(j));
        if (rest != kInf) best = std::min(best, cost + rest);
        used_[j] = false;
      }
    }
    if (!aborted_) memo_.emplace(std::move(k), best);
    return best;
  }

  const std::vector<std::string>& c_;
  const std::vector<std::string>& r_;
  std::size_t budget_;
  std::vector<bool> used_;
  std::map<std::string, std::size_t> cc_, rc_, skips_;
  std::map<std::string, std::vector<std::size_t>> ref_positions_;
  std::unordered_map<std::string, std::size_t> memo_;
  bool aborted_ = false;
};

}  // namespace detail

/// Maximum number of exact unigram matches, and the fewest chunks any such
/// alignment can be split into.
inline MeteorAlignment meteor_align(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                                    std::size_t search_budget = 200000) {
  MeteorAlignment a;
  std::map<std::string, std::size_t> cc, rc;
  for (const auto& t : cand) ++cc[t];
  for (const auto& t : ref) ++rc[t];
  for (const auto& [t, n] : cc)
    if (auto it = rc.find(t); it != rc.end()) a.matches += std::min(n, it->second);
  if (a.matches == 0) return a;
  detail::ChunkSearch search(cand, ref, search_budget);
  if (auto exact = search.solve()) {
    a.chunks = *exact;
  } else {
    a.chunks = detail::greedy_chunks(cand, ref);
    a.exact = false;
  }
  return a;
}

/// F_mean = P R / (alpha P + (1 - alpha) R), penalty = gamma (chunks / matches)^beta,
/// score = F_mean (1 - penalty).
inline double meteor(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                     const MeteorParams& prm = {}) {
  if (cand.empty() || ref.empty()) return 0.0;
  auto a = meteor_align(cand, ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = p * r / (prm.alpha * p + (1.0 - prm.alpha) * r);
  const double penalty = prm.gamma * std::pow(static_cast<double>(a.chunks) / m, prm.beta);
  return fmean * (1.0 - penalty);
}

inline double meteor(const std::string& candidate, const std::string& reference, const MeteorParams& prm = {}) {
  return meteor(tokenize(candidate), tokenize(reference), prm);
}

namespace detail {
inline void check_rating_vectors(const std::vector<double>& p, const std::vector<double>& g) {
  if (p.empty()) throw Error("rating metrics need at least one prediction");
  if (p.size() != g.size())
    throw Error("prediction/gold length mismatch (" + std::to_string(p.size()) + " vs " + std::to_string(g.size()) + ")");
}
}  // namespace detail

inline double rmse(const std::vector<double>& predictions, const std::vector<double>& golds) {
  detail::check_rating_vectors(predictions, golds);
  double s = 0;
  for (std::size_t k = 0; k < predictions.size(); ++k) s += (predictions[k] - golds[k]) * (predictions[k] - golds[k]);
  return std::sqrt(s / static_cast<double>(predictions.size()));
}

inline double mae(const std::vector<double>& predictions, const std::vector<double>& golds) {
  detail::check_rating_vectors(predictions, golds);
  double s = 0;
  for (std::size_t k = 0; k < predictions.size(); ++k) s += std::abs(predictions[k] - golds[k]);
  return s / static_cast<double>(predictions.size());
}

// LLM judge.

struct JudgeResult {
  int raw = 0;
  double normalized = 0.0;
};

inline constexpr const char* kJudgeTemplate =
    "Please compare the generated text to the reference text based on how well they match and/or are similar.\n"
    "\n"
    "Scoring Scale:\n"
    "1 \xE2\x80\x93 Strongly disagree\n"
    "2 \xE2\x80\x93 Disagree\n"
    "3 \xE2\x80\x93 Somewhat disagree\n"
    "4 \xE2\x80\x93 Neither agree nor disagree\n"
    "5 \xE2\x80\x93 Somewhat agree\n"
    "6 \xE2\x80\x93 Agree\n"
    "7 \xE2\x80\x93 Strongly agree\n"
    "\n"
    "Content to Evaluate:\n"
    "Reference Text (Ground Truth): {target_text}\n"
    "Generated Text: {generated_text}\n"
    "\n"
    "Provide only the numeric score (1\xE2\x80\x93" "7).";

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

inline std::string render_judge_prompt(const std::string& generated, const std::string& reference) {
  // Substitute the generated text last so braces in the reference cannot leak into it.
  std::string s = kJudgeTemplate;
  auto t = s.find("{target_text}");
  s.replace(t, 13, reference);
  auto g = s.find("{generated_text}", t + reference.size());
  s.replace(g, 16, generated);
  return s;
}

inline JudgeResult judge_from_raw(int raw) {
  if (raw < 1 || raw > 7) throw ParseError("judge score " + std::to_string(raw) + " outside 1..7");
  return {raw, raw / 10.0};
}

/// A lone digit 1-7, optionally followed by a period.
inline std::optional<int> parse_judge_reply(const std::string& reply) {
  auto t = trim(reply);
  if (!t.empty() && t.back() == '.') t.pop_back();
  if (t.size() != 1 || t[0] < '1' || t[0] > '7') return std::nullopt;
  return t[0] - '0';
}

inline JudgeResult judge_score(const LlmClient& judge, const std::string& generated, const std::string& reference) {
  ChatRequest req;
  req.user = render_judge_prompt(generated, reference);
  req.temperature = 0.0;
  req.max_tokens = 8;
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    last = judge.complete_one(req);
    if (auto v = parse_judge_reply(last)) return judge_from_raw(*v);
  }
  throw ParseError("judge reply is not a score in 1..7: " + last.substr(0, 80));
}

}  // namespace spgen
